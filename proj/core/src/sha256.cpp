#include "fedstr/crypto/sha256.hpp"

#include <openssl/sha.h>

namespace fedstr {

Digest sha256(const std::uint8_t* data, std::size_t len) {
  Digest out{};
  SHA256(data, len, out.data());
  return out;
}

Digest sha256(const Bytes& data) { return sha256(data.data(), data.size()); }

Digest sha256(std::string_view data) {
  return sha256(reinterpret_cast<const std::uint8_t*>(data.data()), data.size());
}

std::string sha256_hex(const Bytes& data) { return to_hex(sha256(data)); }

std::string sha256_hex(std::string_view data) { return to_hex(sha256(data)); }

}  // namespace fedstr
