#pragma once

#include <array>
#include <string>
#include <string_view>

#include "fedstr/util/hex.hpp"

namespace fedstr {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(const std::uint8_t* data, std::size_t len);
Digest sha256(const Bytes& data);
Digest sha256(std::string_view data);

std::string sha256_hex(const Bytes& data);
std::string sha256_hex(std::string_view data);

}  // namespace fedstr
