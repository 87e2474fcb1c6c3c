#include "fedstr/relay/store.hpp"

#include <algorithm>
#include <set>

namespace fedstr::relay {

using nostr::Event;
using nostr::Filter;

std::string RelayStore::d_tag_of(const Event& e) {
  return e.tag_value("d").value_or("");
}

RelayStore::PutResult RelayStore::put(const Event& e) {
  if (events_.count(e.id))
    return {true, false, "duplicate: already have this event"};
  events_.emplace(e.id, e);
  if (is_addressable_kind(e.kind)) {
    auto key = std::make_tuple(e.pubkey, e.kind, d_tag_of(e));
    auto it = replaceable_index_.find(key);
    if (it == replaceable_index_.end()) {
      replaceable_index_[key] = e.id;
    } else {
      const Event& current = events_.at(it->second);
      bool newer = e.created_at > current.created_at ||
                   (e.created_at == current.created_at && e.id < current.id);
      if (newer) it->second = e.id;
    }
  }
  return {true, true, ""};
}

bool RelayStore::is_latest_addressable(const Event& e) const {
  auto it = replaceable_index_.find(std::make_tuple(e.pubkey, e.kind, d_tag_of(e)));
  return it != replaceable_index_.end() && it->second == e.id;
}

std::vector<Event> RelayStore::query(const std::vector<Filter>& filters) const {
  auto newer = [](const Event& a, const Event& b) {
    if (a.created_at != b.created_at) return a.created_at > b.created_at;
    return a.id < b.id;
  };

  std::set<std::string> selected;
  std::vector<Event> out;
  for (const auto& f : filters) {
    std::vector<Event> matches;
    for (const auto& [id, e] : events_) {
      if (!matches_filter(e, f)) continue;
      if (is_addressable_kind(e.kind) && !is_latest_addressable(e)) continue;
      matches.push_back(e);
    }
    std::sort(matches.begin(), matches.end(), newer);
    if (f.limit && matches.size() > *f.limit) matches.resize(*f.limit);
    for (auto& e : matches)
      if (selected.insert(e.id).second) out.push_back(std::move(e));
  }
  std::sort(out.begin(), out.end(), newer);
  return out;
}

}  // namespace fedstr::relay
