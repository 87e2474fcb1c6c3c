#include "fedstr/payments/zap.hpp"

#include <charconv>

#include "fedstr/crypto/sha256.hpp"
#include "fedstr/errors.hpp"
#include "fedstr/marketplace_types.hpp"
#include "fedstr/util/hex.hpp"

namespace fedstr::payments {

std::string lnurl_for(const std::string& pubkey_hex) { return "lnurlstub:" + pubkey_hex; }

std::string make_bolt11_stub(std::uint64_t amount_msats, const std::string& payment_hash) {
  if (!is_hex(payment_hash, 16)) throw ConfigError("payment hash must be 16 hex chars");
  return "lnstub1" + std::to_string(amount_msats) + "m" + payment_hash;
}

std::optional<std::uint64_t> bolt11_stub_amount(const std::string& bolt11) {
  if (bolt11.rfind("lnstub1", 0) != 0) return std::nullopt;
  auto m = bolt11.find('m', 7);
  if (m == std::string::npos || !is_hex(bolt11.substr(m + 1), 16)) return std::nullopt;
  std::uint64_t amount = 0;
  auto first = bolt11.data() + 7;
  auto last = bolt11.data() + m;
  auto [ptr, ec] = std::from_chars(first, last, amount);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return amount;
}

nostr::Event create_zap_request(const ZapRequestFields& fields, const Keypair& signer,
                                std::int64_t created_at) {
  if (fields.amount_msats == 0) throw ConfigError("zap amount must be > 0 msats");
  if (!is_hex(fields.recipient_pubkey, 64))
    throw ConfigError("zap recipient must be a 64-hex pubkey");
  if (fields.lnurl.empty()) throw ConfigError("zap request needs the recipient lnurl");

  nostr::EventTemplate t;
  t.pubkey = signer.public_key_hex();
  t.created_at = created_at ? created_at : nostr::unix_now();
  t.kind = kinds::kZapRequest;
  t.content = fields.message;
  {
    std::vector<std::string> relays{"relays"};
    relays.insert(relays.end(), fields.relays.begin(), fields.relays.end());
    t.tags.push_back(std::move(relays));
  }
  t.tags.push_back({"amount", std::to_string(fields.amount_msats)});
  t.tags.push_back({"lnurl", fields.lnurl});
  t.tags.push_back({"p", fields.recipient_pubkey});
  if (fields.event_id) t.tags.push_back({"e", *fields.event_id});
  return sign_event(t, signer);
}

nostr::Event StubWallet::pay(const nostr::Event& zap_request) {
  if (zap_request.kind != kinds::kZapRequest)
    throw SchemaError("wrong kind for zap request: " + std::to_string(zap_request.kind));
  auto amount_str = zap_request.tag_value("amount");
  if (!amount_str) throw SchemaError("missing tag: amount");
  std::uint64_t amount = 0;
  {
    auto [ptr, ec] =
        std::from_chars(amount_str->data(), amount_str->data() + amount_str->size(), amount);
    if (ec != std::errc() || ptr != amount_str->data() + amount_str->size() || amount == 0)
      throw SchemaError("malformed tag: amount");
  }
  auto recipient = zap_request.tag_value("p");
  if (!recipient) throw SchemaError("missing tag: p");

  // payment hash: first 8 bytes of sha256(request id || counter)
  std::string hash_input = zap_request.id + ":" + std::to_string(counter_++);
  std::string payment_hash = sha256_hex(hash_input).substr(0, 16);
  std::string bolt11 = make_bolt11_stub(amount, payment_hash);
  std::string preimage = sha256_hex("preimage:" + hash_input);

  nostr::EventTemplate t;
  t.pubkey = key_.public_key_hex();
  t.created_at = nostr::unix_now();  // paid-at
  t.kind = kinds::kZapReceipt;
  t.tags.push_back({"p", *recipient});
  t.tags.push_back({"P", zap_request.pubkey});
  if (auto e = zap_request.tag_value("e")) t.tags.push_back({"e", *e});
  t.tags.push_back({"bolt11", bolt11});
  t.tags.push_back({"description", nostr::event_to_json(zap_request)});
  t.tags.push_back({"preimage", preimage});
  return sign_event(t, key_);
}

std::vector<std::string> zap_request_relays(const nostr::Event& zap_request) {
  for (const auto& tag : zap_request.tags)
    if (tag.size() >= 2 && tag[0] == "relays")
      return std::vector<std::string>(tag.begin() + 1, tag.end());
  return {};
}

ReceiptVerdict validate_receipt(const nostr::Event& receipt,
                                const ReceiptExpectation& expected,
                                const NodeCheckFn& node_check) {
  ReceiptVerdict v;
  if (receipt.kind != kinds::kZapReceipt) {
    v.reason = "wrong kind: " + std::to_string(receipt.kind);
    return v;
  }

  auto description = receipt.tag_value("description");
  if (!description) {
    v.reason = "malformed description: missing tag";
    return v;
  }
  auto request = nostr::event_from_json(*description);
  if (!request || request->kind != kinds::kZapRequest) {
    v.reason = "malformed description: not a zap request";
    return v;
  }

  // check 1: recipient
  auto recipient = receipt.tag_value("p");
  if (!recipient || *recipient != expected.recipient_pubkey) {
    v.reason = "recipient mismatch";
    return v;
  }

  // check 2: bolt11 amount == request amount tag == expected amount
  auto bolt11 = receipt.tag_value("bolt11");
  auto bolt11_amount = bolt11 ? bolt11_stub_amount(*bolt11) : std::nullopt;
  auto request_amount_str = request->tag_value("amount");
  std::optional<std::uint64_t> request_amount;
  if (request_amount_str) {
    std::uint64_t a = 0;
    auto [ptr, ec] = std::from_chars(
        request_amount_str->data(), request_amount_str->data() + request_amount_str->size(), a);
    if (ec == std::errc() && ptr == request_amount_str->data() + request_amount_str->size())
      request_amount = a;
  }
  if (!bolt11_amount || !request_amount || *bolt11_amount != *request_amount ||
      *request_amount != expected.amount_msats) {
    v.reason = "amount mismatch";
    return v;
  }

  // check 3: lnurl of the embedded request
  auto lnurl = request->tag_value("lnurl");
  if (!lnurl || *lnurl != expected.lnurl) {
    v.reason = "lnurl mismatch";
    return v;
  }

  if (node_check && !node_check(receipt)) {
    v.reason = "node check failed";
    return v;
  }

  v.pass = true;
  return v;
}

}  // namespace fedstr::payments
