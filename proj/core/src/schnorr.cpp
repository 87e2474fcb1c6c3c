#include "fedstr/crypto/schnorr.hpp"

#include <openssl/bn.h>
#include <openssl/ec.h>
#include <openssl/obj_mac.h>
#include <openssl/rand.h>

#include <cstring>
#include <memory>
#include <mutex>

#include "fedstr/errors.hpp"

// BIP-340 Schnorr over secp256k1. OpenSSL supplies the group law and bignum
// arithmetic; the x-only/even-Y conventions, tagged hashes and nonce
// derivation below follow the BIP. Not hardened against timing side
// channels; fine for a marketplace simulator, do not reuse for wallets.

namespace fedstr {

namespace {

struct BnDeleter {
  void operator()(BIGNUM* p) const { BN_free(p); }
};
struct CtxDeleter {
  void operator()(BN_CTX* p) const { BN_CTX_free(p); }
};
struct PointDeleter {
  void operator()(EC_POINT* p) const { EC_POINT_free(p); }
};
using BnPtr = std::unique_ptr<BIGNUM, BnDeleter>;
using CtxPtr = std::unique_ptr<BN_CTX, CtxDeleter>;
using PointPtr = std::unique_ptr<EC_POINT, PointDeleter>;

const EC_GROUP* group() {
  static EC_GROUP* g = [] {
    EC_GROUP* grp = EC_GROUP_new_by_curve_name(NID_secp256k1);
    if (!grp) throw CryptoError("secp256k1 group unavailable");
    return grp;
  }();
  return g;
}

const BIGNUM* order() {
  static BIGNUM* n = [] {
    BIGNUM* bn = BN_new();
    CtxPtr ctx(BN_CTX_new());
    if (!bn || !ctx || !EC_GROUP_get_order(group(), bn, ctx.get()))
      throw CryptoError("cannot read group order");
    return bn;
  }();
  return n;
}

const BIGNUM* field_prime() {
  static BIGNUM* p = [] {
    BIGNUM* bn = BN_new();
    CtxPtr ctx(BN_CTX_new());
    if (!bn || !ctx ||
        !EC_GROUP_get_curve(group(), bn, nullptr, nullptr, ctx.get()))
      throw CryptoError("cannot read field prime");
    return bn;
  }();
  return p;
}

BnPtr bn_from_bytes(const std::uint8_t* data, std::size_t len) {
  BnPtr bn(BN_bin2bn(data, static_cast<int>(len), nullptr));
  if (!bn) throw CryptoError("bignum alloc failed");
  return bn;
}

std::array<std::uint8_t, 32> bn_to_bytes32(const BIGNUM* bn) {
  std::array<std::uint8_t, 32> out{};
  if (BN_bn2binpad(bn, out.data(), 32) != 32) throw CryptoError("bignum too large");
  return out;
}

Digest tagged_hash(const char* tag, const std::uint8_t* data, std::size_t len) {
  Digest tag_hash = sha256(std::string_view(tag));
  Bytes buf;
  buf.reserve(64 + len);
  buf.insert(buf.end(), tag_hash.begin(), tag_hash.end());
  buf.insert(buf.end(), tag_hash.begin(), tag_hash.end());
  buf.insert(buf.end(), data, data + len);
  return sha256(buf);
}

bool point_has_even_y(const EC_POINT* pt, BN_CTX* ctx) {
  BnPtr y(BN_new());
  if (!EC_POINT_get_affine_coordinates(group(), pt, nullptr, y.get(), ctx))
    throw CryptoError("affine decode failed");
  return !BN_is_odd(y.get());
}

std::array<std::uint8_t, 32> point_x_bytes(const EC_POINT* pt, BN_CTX* ctx) {
  BnPtr x(BN_new());
  if (!EC_POINT_get_affine_coordinates(group(), pt, x.get(), nullptr, ctx))
    throw CryptoError("affine decode failed");
  return bn_to_bytes32(x.get());
}

// x-only decode with even Y, per lift_x. Returns nullptr if x is not on the curve.
PointPtr lift_x(const BIGNUM* x, BN_CTX* ctx) {
  if (BN_is_negative(x) || BN_cmp(x, field_prime()) >= 0) return nullptr;
  PointPtr pt(EC_POINT_new(group()));
  if (!pt) throw CryptoError("point alloc failed");
  if (!EC_POINT_set_compressed_coordinates(group(), pt.get(), x, 0, ctx)) return nullptr;
  return pt;
}

}  // namespace

PublicKey derive_public_key(const SecretKey& secret) {
  CtxPtr ctx(BN_CTX_new());
  BnPtr d = bn_from_bytes(secret.data(), secret.size());
  if (BN_is_zero(d.get()) || BN_cmp(d.get(), order()) >= 0)
    throw CryptoError("secret key is not a valid nonzero scalar");
  PointPtr pub(EC_POINT_new(group()));
  if (!pub || !EC_POINT_mul(group(), pub.get(), d.get(), nullptr, nullptr, ctx.get()))
    throw CryptoError("point multiplication failed");
  return point_x_bytes(pub.get(), ctx.get());
}

Keypair generate_keypair(const std::optional<SecretKey>& seed) {
  Keypair kp;
  if (seed) {
    kp.secret_key = *seed;
    kp.public_key = derive_public_key(kp.secret_key);  // throws on invalid scalar
    return kp;
  }
  for (;;) {
    if (RAND_bytes(kp.secret_key.data(), static_cast<int>(kp.secret_key.size())) != 1)
      throw CryptoError("system rng unavailable");
    BnPtr d = bn_from_bytes(kp.secret_key.data(), kp.secret_key.size());
    if (BN_is_zero(d.get()) || BN_cmp(d.get(), order()) >= 0) continue;
    kp.public_key = derive_public_key(kp.secret_key);
    return kp;
  }
}

Signature schnorr_sign(const Digest& msg, const Keypair& key,
                       const std::array<std::uint8_t, 32>& aux_rand) {
  CtxPtr ctx(BN_CTX_new());
  BnPtr d0 = bn_from_bytes(key.secret_key.data(), 32);
  if (BN_is_zero(d0.get()) || BN_cmp(d0.get(), order()) >= 0)
    throw CryptoError("secret key is not a valid nonzero scalar");

  PointPtr pub(EC_POINT_new(group()));
  if (!EC_POINT_mul(group(), pub.get(), d0.get(), nullptr, nullptr, ctx.get()))
    throw CryptoError("point multiplication failed");
  auto pk_bytes = point_x_bytes(pub.get(), ctx.get());
  if (std::memcmp(pk_bytes.data(), key.public_key.data(), 32) != 0)
    throw CryptoError("keypair public key does not match secret");

  // d effective: negate when P has odd Y.
  BnPtr d(BN_dup(d0.get()));
  if (!point_has_even_y(pub.get(), ctx.get()))
    BN_sub(d.get(), order(), d0.get());

  // t = d XOR taghash(aux); nonce = taghash(t || pk || msg) mod n
  auto d_bytes = bn_to_bytes32(d.get());
  Digest aux_hash = tagged_hash("BIP0340/aux", aux_rand.data(), aux_rand.size());
  std::array<std::uint8_t, 96> nonce_input{};
  for (int i = 0; i < 32; ++i) nonce_input[i] = d_bytes[i] ^ aux_hash[i];
  std::memcpy(nonce_input.data() + 32, pk_bytes.data(), 32);
  std::memcpy(nonce_input.data() + 64, msg.data(), 32);
  Digest rand = tagged_hash("BIP0340/nonce", nonce_input.data(), nonce_input.size());

  BnPtr k0 = bn_from_bytes(rand.data(), rand.size());
  BN_mod(k0.get(), k0.get(), order(), ctx.get());
  if (BN_is_zero(k0.get())) throw CryptoError("nonce derivation produced zero");

  PointPtr r_pt(EC_POINT_new(group()));
  if (!EC_POINT_mul(group(), r_pt.get(), k0.get(), nullptr, nullptr, ctx.get()))
    throw CryptoError("point multiplication failed");
  BnPtr k(BN_dup(k0.get()));
  if (!point_has_even_y(r_pt.get(), ctx.get()))
    BN_sub(k.get(), order(), k0.get());
  auto r_bytes = point_x_bytes(r_pt.get(), ctx.get());

  std::array<std::uint8_t, 96> challenge_input{};
  std::memcpy(challenge_input.data(), r_bytes.data(), 32);
  std::memcpy(challenge_input.data() + 32, pk_bytes.data(), 32);
  std::memcpy(challenge_input.data() + 64, msg.data(), 32);
  Digest e_hash =
      tagged_hash("BIP0340/challenge", challenge_input.data(), challenge_input.size());
  BnPtr e = bn_from_bytes(e_hash.data(), e_hash.size());
  BN_mod(e.get(), e.get(), order(), ctx.get());

  // s = k + e*d mod n
  BnPtr s(BN_new());
  BN_mod_mul(s.get(), e.get(), d.get(), order(), ctx.get());
  BN_mod_add(s.get(), s.get(), k.get(), order(), ctx.get());
  auto s_bytes = bn_to_bytes32(s.get());

  Signature sig{};
  std::memcpy(sig.data(), r_bytes.data(), 32);
  std::memcpy(sig.data() + 32, s_bytes.data(), 32);
  return sig;
}

bool schnorr_verify(const Digest& msg, const PublicKey& pubkey, const Signature& sig) {
  try {
    CtxPtr ctx(BN_CTX_new());
    BnPtr px = bn_from_bytes(pubkey.data(), 32);
    PointPtr pub = lift_x(px.get(), ctx.get());
    if (!pub) return false;

    BnPtr r = bn_from_bytes(sig.data(), 32);
    BnPtr s = bn_from_bytes(sig.data() + 32, 32);
    if (BN_cmp(r.get(), field_prime()) >= 0 || BN_cmp(s.get(), order()) >= 0)
      return false;

    std::array<std::uint8_t, 96> challenge_input{};
    std::memcpy(challenge_input.data(), sig.data(), 32);
    std::memcpy(challenge_input.data() + 32, pubkey.data(), 32);
    std::memcpy(challenge_input.data() + 64, msg.data(), 32);
    Digest e_hash =
        tagged_hash("BIP0340/challenge", challenge_input.data(), challenge_input.size());
    BnPtr e = bn_from_bytes(e_hash.data(), e_hash.size());
    BN_mod(e.get(), e.get(), order(), ctx.get());

    // R = s*G - e*P, via s*G + (n-e)*P
    BnPtr neg_e(BN_new());
    BN_sub(neg_e.get(), order(), e.get());
    PointPtr r_pt(EC_POINT_new(group()));
    if (!EC_POINT_mul(group(), r_pt.get(), s.get(), pub.get(), neg_e.get(), ctx.get()))
      return false;
    if (EC_POINT_is_at_infinity(group(), r_pt.get())) return false;
    if (!point_has_even_y(r_pt.get(), ctx.get())) return false;

    BnPtr rx(BN_new());
    if (!EC_POINT_get_affine_coordinates(group(), r_pt.get(), rx.get(), nullptr,
                                         ctx.get()))
      return false;
    return BN_cmp(rx.get(), r.get()) == 0;
  } catch (const CryptoError&) {
    return false;
  }
}

}  // namespace fedstr
