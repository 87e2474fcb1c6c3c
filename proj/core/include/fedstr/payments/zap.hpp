#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedstr/nostr/event.hpp"

// Zap request/receipt construction and the three-step receipt validation.
// The Lightning layer is a stub: bolt11 strings are parseable placeholders,
// nothing settles, and a receipt is never proof of payment. The pay endpoint
// mirrors an lnurl callback so a real NIP-57 backend can slot in later.

namespace fedstr::payments {

struct ZapRequestFields {
  std::vector<std::string> relays;  // where the receipt should be published
  std::uint64_t amount_msats = 0;
  std::string lnurl;
  std::string recipient_pubkey;            // p tag
  std::optional<std::string> event_id;     // e tag; required when paying for an event
  std::string message;                      // content
};

// Stub lnurl endpoints are derived from the recipient key, no discovery step.
std::string lnurl_for(const std::string& pubkey_hex);

// "lnstub1<amount_msats>m<16-hex payment hash>"; NOT interoperable with
// Lightning.
std::string make_bolt11_stub(std::uint64_t amount_msats, const std::string& payment_hash);
std::optional<std::uint64_t> bolt11_stub_amount(const std::string& bolt11);

nostr::Event create_zap_request(const ZapRequestFields& fields, const Keypair& signer,
                                std::int64_t created_at = 0);  // throws ConfigError

// The recipient-side stub wallet. Signing with the provider keypair itself
// diverges from real zap flows where a wallet service signs; it keeps the
// demo's trust wiring to one key per party.
class StubWallet {
 public:
  explicit StubWallet(Keypair key) : key_(std::move(key)) {}

  // Mints the bolt11 stub and the kind 9735 receipt for a valid kind 9734
  // request. Publication to the request's relay list is the caller's job.
  nostr::Event pay(const nostr::Event& zap_request);  // throws SchemaError

  const Keypair& key() const { return key_; }

 private:
  Keypair key_;
  std::uint64_t counter_ = 0;
};

inline nostr::Event stub_pay(const nostr::Event& zap_request, StubWallet& wallet) {
  return wallet.pay(zap_request);
}

struct ReceiptExpectation {
  std::string recipient_pubkey;
  std::uint64_t amount_msats = 0;
  std::string lnurl;
};

struct ReceiptVerdict {
  bool pass = false;
  std::string reason;  // empty on pass
};

// Final "verify on your node" step has no stub-observable semantics; the
// default hook reports settled.
using NodeCheckFn = std::function<bool(const nostr::Event& receipt)>;

// The three checks: recipient matches, bolt11 amount equals the embedded
// request's amount tag (and the expected amount), lnurl matches. A pass is
// not proof of settlement.
ReceiptVerdict validate_receipt(const nostr::Event& receipt,
                                const ReceiptExpectation& expected,
                                const NodeCheckFn& node_check = {});

// Relays listed in the zap request embedded in a receipt (or the request
// itself), used to route stub receipts.
std::vector<std::string> zap_request_relays(const nostr::Event& zap_request);

}  // namespace fedstr::payments
