#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedstr/nostr/event.hpp"

namespace fedstr::nostr {

// NIP-01 subscription filter. An event matches iff every present field is
// satisfied (conjunction); within a field, any listed value matches
// (disjunction). ids/authors use prefix matching.
struct Filter {
  std::optional<std::vector<std::string>> ids;
  std::optional<std::vector<std::string>> authors;
  std::optional<std::vector<int>> kinds;
  // "e" -> values: matches events with a tag ["e", v, ...] for some listed v.
  std::map<std::string, std::vector<std::string>> tag_queries;
  std::optional<std::int64_t> since;
  std::optional<std::int64_t> until;
  std::optional<std::size_t> limit;
};

bool matches_filter(const Event& e, const Filter& f);
bool matches_any(const Event& e, const std::vector<Filter>& filters);

std::string filter_to_json(const Filter& f);
std::optional<Filter> filter_from_json_text(const std::string& json_text);

}  // namespace fedstr::nostr
