#include "fedstr/nostr/event.hpp"

#include <chrono>

#include "fedstr/errors.hpp"
#include "json.hpp"

using nlohmann::json;

namespace fedstr::nostr {

std::optional<std::string> Event::tag_value(const std::string& name) const {
  for (const auto& tag : tags)
    if (tag.size() >= 2 && tag[0] == name) return tag[1];
  return std::nullopt;
}

std::vector<const std::vector<std::string>*> Event::tags_named(
    const std::string& name) const {
  std::vector<const std::vector<std::string>*> out;
  for (const auto& tag : tags)
    if (!tag.empty() && tag[0] == name) out.push_back(&tag);
  return out;
}

static void check_template(const EventTemplate& t) {
  if (t.kind < 0 || t.kind > 65535) throw ConfigError("event kind out of range");
  for (const auto& tag : t.tags)
    if (tag.empty()) throw ConfigError("empty tag in event template");
}

std::string canonical_serialization(const EventTemplate& t) {
  // nlohmann's compact dump matches the NIP-01 escaping rules: short escapes
  // for \b \t \n \f \r \" \\, \uXXXX for remaining control characters, all
  // other bytes verbatim UTF-8.
  json arr = json::array({0, t.pubkey, t.created_at, t.kind, t.tags, t.content});
  return arr.dump();
}

std::string compute_event_id(const EventTemplate& t) {
  check_template(t);
  return sha256_hex(canonical_serialization(t));
}

Event sign_event(const EventTemplate& t, const Keypair& key) {
  if (t.pubkey != key.public_key_hex())
    throw CryptoError("template pubkey does not match signing keypair");
  Event e;
  e.pubkey = t.pubkey;
  e.created_at = t.created_at;
  e.kind = t.kind;
  e.tags = t.tags;
  e.content = t.content;
  e.id = compute_event_id(t);
  auto msg = from_hex_array<32>(e.id);
  e.sig = to_hex(schnorr_sign(*msg, key));
  return e;
}

bool verify_event(const Event& e) {
  if (e.kind < 0 || e.kind > 65535) return false;
  for (const auto& tag : e.tags)
    if (tag.empty()) return false;
  auto pk = from_hex_array<32>(e.pubkey);
  auto sig = from_hex_array<64>(e.sig);
  auto id = from_hex_array<32>(e.id);
  if (!pk || !sig || !id) return false;
  if (compute_event_id(e.as_template()) != e.id) return false;
  return schnorr_verify(*id, *pk, *sig);
}

std::string event_to_json(const Event& e) {
  json j{{"id", e.id},
         {"pubkey", e.pubkey},
         {"created_at", e.created_at},
         {"kind", e.kind},
         {"tags", e.tags},
         {"content", e.content},
         {"sig", e.sig}};
  return j.dump();
}

std::optional<Event> event_from_json(const std::string& json_text) {
  json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  if (!j.is_object()) return std::nullopt;
  try {
    Event e;
    e.id = j.at("id").get<std::string>();
    e.pubkey = j.at("pubkey").get<std::string>();
    e.created_at = j.at("created_at").get<std::int64_t>();
    e.kind = j.at("kind").get<int>();
    e.tags = j.at("tags").get<Tags>();
    e.content = j.at("content").get<std::string>();
    e.sig = j.at("sig").get<std::string>();
    return e;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

std::int64_t unix_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace fedstr::nostr
