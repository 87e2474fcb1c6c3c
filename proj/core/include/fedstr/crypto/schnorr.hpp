#pragma once

#include <array>
#include <optional>
#include <string>

#include "fedstr/crypto/sha256.hpp"
#include "fedstr/util/hex.hpp"

namespace fedstr {

using SecretKey = std::array<std::uint8_t, 32>;
using PublicKey = std::array<std::uint8_t, 32>;  // x-only point encoding
using Signature = std::array<std::uint8_t, 64>;

struct Keypair {
  SecretKey secret_key{};
  PublicKey public_key{};

  std::string public_key_hex() const { return to_hex(public_key); }
};

// Derives the x-only public key for a secret scalar.
// Throws CryptoError for zero or out-of-range scalars.
PublicKey derive_public_key(const SecretKey& secret);

// Seeded generation is deterministic: the seed IS the secret scalar and must
// be a valid nonzero scalar below the group order. Unseeded draws from the
// OS CSPRNG.
Keypair generate_keypair(const std::optional<SecretKey>& seed = std::nullopt);

// BIP-340 signature over a 32-byte message. aux_rand defaults to all-zero,
// which BIP-340 permits and which keeps signing deterministic.
Signature schnorr_sign(const Digest& msg, const Keypair& key,
                       const std::array<std::uint8_t, 32>& aux_rand = {});

// BIP-340 verification; never throws, malformed inputs verify false.
bool schnorr_verify(const Digest& msg, const PublicKey& pubkey, const Signature& sig);

}  // namespace fedstr
