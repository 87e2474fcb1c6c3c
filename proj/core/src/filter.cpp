#include "fedstr/nostr/filter.hpp"

#include <algorithm>

#include "json.hpp"

using nlohmann::json;

namespace fedstr::nostr {

namespace {

bool any_prefix(const std::string& value, const std::vector<std::string>& prefixes) {
  return std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) {
    return value.compare(0, p.size(), p) == 0;
  });
}

bool tag_query_matches(const Event& e, const std::string& name,
                       const std::vector<std::string>& values) {
  for (const auto& tag : e.tags) {
    if (tag.size() >= 2 && tag[0] == name &&
        std::find(values.begin(), values.end(), tag[1]) != values.end())
      return true;
  }
  return false;
}

}  // namespace

bool matches_filter(const Event& e, const Filter& f) {
  if (f.ids && !any_prefix(e.id, *f.ids)) return false;
  if (f.authors && !any_prefix(e.pubkey, *f.authors)) return false;
  if (f.kinds &&
      std::find(f.kinds->begin(), f.kinds->end(), e.kind) == f.kinds->end())
    return false;
  if (f.since && e.created_at < *f.since) return false;
  if (f.until && e.created_at > *f.until) return false;
  for (const auto& [name, values] : f.tag_queries)
    if (!tag_query_matches(e, name, values)) return false;
  return true;
}

bool matches_any(const Event& e, const std::vector<Filter>& filters) {
  return std::any_of(filters.begin(), filters.end(),
                     [&](const Filter& f) { return matches_filter(e, f); });
}

std::string filter_to_json(const Filter& f) {
  json j = json::object();
  if (f.ids) j["ids"] = *f.ids;
  if (f.authors) j["authors"] = *f.authors;
  if (f.kinds) j["kinds"] = *f.kinds;
  if (f.since) j["since"] = *f.since;
  if (f.until) j["until"] = *f.until;
  if (f.limit) j["limit"] = *f.limit;
  for (const auto& [name, values] : f.tag_queries) j["#" + name] = values;
  return j.dump();
}

std::optional<Filter> filter_from_json_text(const std::string& json_text) {
  json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  try {
    Filter f;
    if (j.contains("ids")) f.ids = j["ids"].get<std::vector<std::string>>();
    if (j.contains("authors")) f.authors = j["authors"].get<std::vector<std::string>>();
    if (j.contains("kinds")) f.kinds = j["kinds"].get<std::vector<int>>();
    if (j.contains("since")) f.since = j["since"].get<std::int64_t>();
    if (j.contains("until")) f.until = j["until"].get<std::int64_t>();
    if (j.contains("limit")) f.limit = j["limit"].get<std::size_t>();
    for (auto& [key, value] : j.items()) {
      if (key.size() == 2 && key[0] == '#')
        f.tag_queries[key.substr(1)] = value.get<std::vector<std::string>>();
    }
    return f;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

}  // namespace fedstr::nostr
