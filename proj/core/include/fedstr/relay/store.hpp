#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedstr/nostr/event.hpp"
#include "fedstr/nostr/filter.hpp"

namespace fedstr::relay {

// Append-only event set keyed by id, with NIP-01 addressable-replaceable
// semantics for kinds 30000-39999: queries surface only the latest event per
// (pubkey, kind, d-tag), newest by created_at, ties to the lexicographically
// smaller id.
class RelayStore {
 public:
  struct PutResult {
    bool accepted = false;
    bool is_new = false;
    std::string reason;
  };

  // Caller verifies signatures; the store only dedups and indexes.
  PutResult put(const nostr::Event& e);

  // Matching stored events, newest first (created_at desc, tie id asc).
  // Each filter's limit caps its own contribution, NIP-01 style.
  std::vector<nostr::Event> query(const std::vector<nostr::Filter>& filters) const;

  std::size_t size() const { return events_.size(); }

  static bool is_addressable_kind(int kind) { return kind >= 30000 && kind < 40000; }
  static std::string d_tag_of(const nostr::Event& e);

 private:
  bool is_latest_addressable(const nostr::Event& e) const;

  std::unordered_map<std::string, nostr::Event> events_;  // id -> event
  // (pubkey, kind, d) -> id of current latest
  std::map<std::tuple<std::string, int, std::string>, std::string> replaceable_index_;
};

}  // namespace fedstr::relay
