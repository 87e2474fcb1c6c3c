#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedstr/crypto/schnorr.hpp"

namespace fedstr::nostr {

using Tags = std::vector<std::vector<std::string>>;

struct EventTemplate {
  std::string pubkey;      // 64 lowercase hex chars
  std::int64_t created_at = 0;
  int kind = 0;            // 0..65535
  Tags tags;               // each tag has >= 1 element
  std::string content;
};

struct Event {
  std::string id;   // 64 hex, sha256 of canonical serialization
  std::string pubkey;
  std::int64_t created_at = 0;
  int kind = 0;
  Tags tags;
  std::string content;
  std::string sig;  // 128 hex

  EventTemplate as_template() const {
    return EventTemplate{pubkey, created_at, kind, tags, content};
  }

  // First value of the first tag named `name`, if any.
  std::optional<std::string> tag_value(const std::string& name) const;
  // All tags named `name`.
  std::vector<const std::vector<std::string>*> tags_named(const std::string& name) const;
};

// Canonical NIP-01 rendering of [0, pubkey, created_at, kind, tags, content]:
// compact JSON, UTF-8 verbatim, only control characters / quote / backslash
// escaped. The event id is the SHA-256 of exactly these bytes.
std::string canonical_serialization(const EventTemplate& t);

std::string compute_event_id(const EventTemplate& t);  // lowercase hex digest

// Throws CryptoError when t.pubkey does not match the keypair, ConfigError on
// malformed templates (empty tag, kind out of range).
Event sign_event(const EventTemplate& t, const Keypair& key);

// True iff the id recomputes from the fields and the signature verifies
// against (id, pubkey). Malformed hex fields make it false, never throw.
bool verify_event(const Event& e);

std::string event_to_json(const Event& e);
std::optional<Event> event_from_json(const std::string& json_text);

std::int64_t unix_now();

}  // namespace fedstr::nostr
