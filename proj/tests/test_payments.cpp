#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fedstr/errors.hpp"
#include "fedstr/payments/zap.hpp"

using namespace fedstr;
using namespace fedstr::payments;

namespace {

Keypair customer_key() {
  SecretKey sk{};
  sk.fill(0x61);
  sk[0] = 0;
  return generate_keypair(sk);
}

Keypair provider_key() {
  SecretKey sk{};
  sk.fill(0x62);
  sk[0] = 0;
  return generate_keypair(sk);
}

ZapRequestFields fields(const Keypair& provider) {
  ZapRequestFields f;
  f.relays = {"ws://127.0.0.1:7777"};
  f.amount_msats = 1000;
  f.lnurl = lnurl_for(provider.public_key_hex());
  f.recipient_pubkey = provider.public_key_hex();
  f.event_id = std::string(64, 'e');
  f.message = "round 1 initialization";
  return f;
}

}  // namespace

TEST_CASE("bolt11 stub grammar") {
  auto stub = make_bolt11_stub(12345, "00aabbccddeeff11");
  CHECK(stub == "lnstub112345m00aabbccddeeff11");
  CHECK(bolt11_stub_amount(stub) == 12345);
  CHECK(!bolt11_stub_amount("lnbc12345..."));
  CHECK(!bolt11_stub_amount("lnstub1xxm00aabbccddeeff11"));
  CHECK(!bolt11_stub_amount("lnstub112345m00aabbccddeeff1"));  // 15 hex chars
  CHECK_THROWS_AS(make_bolt11_stub(1, "short"), ConfigError);
}

TEST_CASE("zap request carries the documented tags") {
  auto customer = customer_key();
  auto provider = provider_key();
  auto request = create_zap_request(fields(provider), customer);
  CHECK(request.kind == 9734);
  CHECK(request.tag_value("amount").value_or("") == "1000");
  CHECK(request.tag_value("p").value_or("") == provider.public_key_hex());
  CHECK(request.tag_value("e").value_or("") == std::string(64, 'e'));
  CHECK(request.tag_value("lnurl").value_or("") ==
        lnurl_for(provider.public_key_hex()));
  CHECK(nostr::verify_event(request));

  auto f = fields(provider);
  f.amount_msats = 0;
  CHECK_THROWS_AS(create_zap_request(f, customer), ConfigError);

  // direct payment to a key: no e tag
  auto f2 = fields(provider);
  f2.event_id.reset();
  auto direct = create_zap_request(f2, customer);
  CHECK(!direct.tag_value("e").has_value());
}

TEST_CASE("stub pay mints a parseable receipt") {
  auto customer = customer_key();
  auto provider = provider_key();
  StubWallet wallet(provider);
  auto request = create_zap_request(fields(provider), customer);
  auto receipt = wallet.pay(request);

  CHECK(receipt.kind == 9735);
  CHECK(nostr::verify_event(receipt));
  CHECK(receipt.pubkey == provider.public_key_hex());
  CHECK(receipt.tag_value("p").value_or("") == provider.public_key_hex());
  CHECK(receipt.tag_value("P").value_or("") == customer.public_key_hex());
  CHECK(receipt.tag_value("e").value_or("") == std::string(64, 'e'));

  auto bolt11 = receipt.tag_value("bolt11");
  REQUIRE(bolt11.has_value());
  CHECK(bolt11_stub_amount(*bolt11) == 1000);

  // description round-trips to the original request
  auto description = receipt.tag_value("description");
  REQUIRE(description.has_value());
  auto embedded = nostr::event_from_json(*description);
  REQUIRE(embedded.has_value());
  CHECK(embedded->id == request.id);
  CHECK(embedded->tag_value("amount").value_or("") == "1000");

  CHECK(zap_request_relays(*embedded) ==
        std::vector<std::string>{"ws://127.0.0.1:7777"});

  // receipts for distinct requests carry distinct payment hashes
  auto request2 = create_zap_request(fields(provider), customer, 1700000123);
  auto receipt2 = wallet.pay(request2);
  CHECK(receipt.tag_value("bolt11") != receipt2.tag_value("bolt11"));
}

TEST_CASE("receipt validation three checks and their mutations") {
  auto customer = customer_key();
  auto provider = provider_key();
  StubWallet wallet(provider);
  auto request = create_zap_request(fields(provider), customer);
  auto receipt = wallet.pay(request);

  ReceiptExpectation expected{provider.public_key_hex(), 1000,
                              lnurl_for(provider.public_key_hex())};

  CHECK(validate_receipt(receipt, expected).pass);

  SUBCASE("recipient mismatch") {
    auto bad = expected;
    bad.recipient_pubkey = customer.public_key_hex();
    auto v = validate_receipt(receipt, bad);
    CHECK(!v.pass);
    CHECK(v.reason == "recipient mismatch");
  }
  SUBCASE("bolt11 amount disagreement") {
    auto tampered = receipt;
    for (auto& tag : tampered.tags)
      if (tag[0] == "bolt11") tag[1] = make_bolt11_stub(900, "00aabbccddeeff11");
    auto v = validate_receipt(tampered, expected);
    CHECK(!v.pass);
    CHECK(v.reason == "amount mismatch");
  }
  SUBCASE("expected amount disagreement") {
    auto bad = expected;
    bad.amount_msats = 999;
    auto v = validate_receipt(receipt, bad);
    CHECK(!v.pass);
    CHECK(v.reason == "amount mismatch");
  }
  SUBCASE("lnurl mismatch") {
    auto bad = expected;
    bad.lnurl = lnurl_for(customer.public_key_hex());
    auto v = validate_receipt(receipt, bad);
    CHECK(!v.pass);
    CHECK(v.reason == "lnurl mismatch");
  }
  SUBCASE("p tag altered on the receipt") {
    auto tampered = receipt;
    for (auto& tag : tampered.tags)
      if (tag[0] == "p") tag[1] = customer.public_key_hex();
    auto v = validate_receipt(tampered, expected);
    CHECK(!v.pass);
    CHECK(v.reason == "recipient mismatch");
  }
  SUBCASE("unparseable description") {
    auto tampered = receipt;
    for (auto& tag : tampered.tags)
      if (tag[0] == "description") tag[1] = "{broken";
    auto v = validate_receipt(tampered, expected);
    CHECK(!v.pass);
    CHECK(v.reason.find("malformed description") != std::string::npos);
  }
  SUBCASE("wrong kind") {
    auto tampered = receipt;
    tampered.kind = 1;
    CHECK(!validate_receipt(tampered, expected).pass);
  }
  SUBCASE("node check hook can veto") {
    auto v = validate_receipt(receipt, expected,
                              [](const nostr::Event&) { return false; });
    CHECK(!v.pass);
    CHECK(v.reason == "node check failed");
  }
}

// Mutation matrix: each of {p, amount, lnurl} flipped alone must flip the
// verdict; untouched receipts always pass.
TEST_CASE("mutation completeness over the three checked fields") {
  auto customer = customer_key();
  auto provider = provider_key();
  StubWallet wallet(provider);
  ReceiptExpectation expected{provider.public_key_hex(), 1000,
                              lnurl_for(provider.public_key_hex())};

  for (int i = 0; i < 25; ++i) {
    auto request = create_zap_request(fields(provider), customer, 1700000200 + i);
    auto receipt = wallet.pay(request);
    REQUIRE(validate_receipt(receipt, expected).pass);

    for (int field = 0; field < 3; ++field) {
      auto bad = expected;
      if (field == 0) bad.recipient_pubkey = std::string(64, '1');
      if (field == 1) bad.amount_msats = 1;
      if (field == 2) bad.lnurl = "lnurlstub:nobody";
      CHECK(!validate_receipt(receipt, bad).pass);
    }
  }
}
