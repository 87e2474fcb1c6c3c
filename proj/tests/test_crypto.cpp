#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fedstr/crypto/schnorr.hpp"
#include "fedstr/crypto/sha256.hpp"
#include "fedstr/errors.hpp"
#include "fedstr/util/hex.hpp"

using namespace fedstr;

namespace {

SecretKey sk_from_hex(const std::string& hex) { return *from_hex_array<32>(hex); }

Digest digest_from_hex(const std::string& hex) { return *from_hex_array<32>(hex); }

}  // namespace

TEST_CASE("sha256 NIST vectors") {
  CHECK(sha256_hex(std::string_view("")) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(std::string_view("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("hex round trip and strictness") {
  Bytes b{0x00, 0xff, 0x10, 0xab};
  CHECK(to_hex(b) == "00ff10ab");
  CHECK(*from_hex("00ff10ab") == b);
  CHECK(!from_hex("0g"));
  CHECK(!from_hex("abc"));
  CHECK(is_hex("deadBEEF", 8));
  CHECK(!is_hex("deadbeef", 6));
}

// Official BIP-340 test vectors (indexes 0 and 1 of the published set).
TEST_CASE("bip340 official vectors") {
  auto sk0 = sk_from_hex("0000000000000000000000000000000000000000000000000000000000000003");
  auto kp0 = generate_keypair(sk0);
  CHECK(kp0.public_key_hex() ==
        "f9308a019258c31049344f85f89d5229b531c845836f99b08601f113bce036f9");
  auto msg0 = digest_from_hex("0000000000000000000000000000000000000000000000000000000000000000");
  auto sig0 = schnorr_sign(msg0, kp0);
  CHECK(to_hex(sig0) ==
        "e907831f80848d1069a5371b402410364bdf1c5f8307b0084c55f1ce2dca8215"
        "25f66a4a85ea8b71e482a74f382d2ce5ebeee8fdb2172f477df4900d310536c0");
  CHECK(schnorr_verify(msg0, kp0.public_key, sig0));

  auto sk1 = sk_from_hex("b7e151628aed2a6abf7158809cf4f3c762e7160f38b4da56a784d9045190cfef");
  auto kp1 = generate_keypair(sk1);
  CHECK(kp1.public_key_hex() ==
        "dff1d77f2a671c5f36183726db2341be58feae1da2deced843240f7b502ba659");
  auto msg1 = digest_from_hex("243f6a8885a308d313198a2e03707344a4093822299f31d0082efa98ec4e6c89");
  std::array<std::uint8_t, 32> aux1{};
  aux1[31] = 0x01;
  auto sig1 = schnorr_sign(msg1, kp1, aux1);
  CHECK(to_hex(sig1) ==
        "6896bd60eeae296db48a229ff71dfe071bde413e6d43f917dc8dcf8c78de3341"
        "8906d11ac976abccb20b091292bff4ea897efcb639ea871cfa95f6de339e4b0a");
  CHECK(schnorr_verify(msg1, kp1.public_key, sig1));
}

// Vectors generated with an independent python reference implementation
// (aux_rand = zeros, the signing default here).
TEST_CASE("bip340 reference-generated vectors") {
  struct Vec {
    const char* sk;
    const char* pk;
    const char* msg;
    const char* sig;
  };
  const Vec vecs[] = {
      {"0000000000000000000000000000000000000000000000000000000000000007",
       "5cbdf0646e5db4eaa398f365f2ea7a0e3d419b7e0330e39ce92bddedcac4f9bc",
       "aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa",
       "05a5c8559987d325fea84bbf070e73eaa3022ce472222b46c25d5770321efa4c"
       "976616886dd0f4fd104d2090aa9ac9f3a17aeda56fced073b8f6a916d1a6a532"},
      {"00000000000000000000000000000000000000000000000000000000deadbeef",
       "76d2fdf1302d1fa9556f4df94ec84cefba6d482e54f47c6c2a238c1baa560f0e",
       "0123456789abcdef0123456789abcdef0123456789abcdef0123456789abcdef",
       "c66ce3c62c463d33f2fc6e6e630466eeec52d68ea450e9c3c31e3baf72fae998"
       "87dee232df41438d9e6ee8adca33d169a383cf0db8b0404094f56d7ed9b0550d"},
  };
  for (const auto& v : vecs) {
    auto kp = generate_keypair(sk_from_hex(v.sk));
    CHECK(kp.public_key_hex() == v.pk);
    auto sig = schnorr_sign(digest_from_hex(v.msg), kp);
    CHECK(to_hex(sig) == v.sig);
    CHECK(schnorr_verify(digest_from_hex(v.msg), kp.public_key, sig));
  }
}

TEST_CASE("keypair generation determinism and validity") {
  auto seed = sk_from_hex("0000000000000000000000000000000000000000000000000000000000000042");
  auto a = generate_keypair(seed);
  auto b = generate_keypair(seed);
  CHECK(a.public_key == b.public_key);
  CHECK(a.secret_key == b.secret_key);
  CHECK(derive_public_key(a.secret_key) == a.public_key);

  auto r1 = generate_keypair();
  auto r2 = generate_keypair();
  CHECK(r1.public_key != r2.public_key);

  SecretKey zero{};
  CHECK_THROWS_AS(generate_keypair(zero), CryptoError);

  // >= group order is also rejected
  auto too_big =
      sk_from_hex("ffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff");
  CHECK_THROWS_AS(generate_keypair(too_big), CryptoError);
}

TEST_CASE("signature tamper detection") {
  auto kp = generate_keypair(sk_from_hex(
      "0000000000000000000000000000000000000000000000000000000000000011"));
  auto msg = sha256(std::string_view("payload"));
  auto sig = schnorr_sign(msg, kp);
  CHECK(schnorr_verify(msg, kp.public_key, sig));

  for (std::size_t i = 0; i < sig.size(); i += 7) {
    auto bad = sig;
    bad[i] ^= 0x01;
    CHECK(!schnorr_verify(msg, kp.public_key, bad));
  }
  auto other = sha256(std::string_view("payload2"));
  CHECK(!schnorr_verify(other, kp.public_key, sig));

  auto bad_pk = kp.public_key;
  bad_pk[0] ^= 0x01;
  CHECK(!schnorr_verify(msg, bad_pk, sig));
}
