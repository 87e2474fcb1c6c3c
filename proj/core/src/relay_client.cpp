#include "fedstr/relay/client.hpp"

#include "fedstr/errors.hpp"
#include "json.hpp"

using nlohmann::json;

namespace fedstr::relay {

RelaySession::RelaySession(std::string url, net::WsConnectionPtr conn)
    : url_(std::move(url)), conn_(std::move(conn)) {
  reader_ = std::thread([this] { reader_loop(); });
}

std::shared_ptr<RelaySession> RelaySession::connect(const std::string& url,
                                                    std::chrono::milliseconds timeout) {
  auto conn = net::ws_connect(url, timeout);
  return std::shared_ptr<RelaySession>(new RelaySession(url, conn));
}

RelaySession::~RelaySession() {
  close();
  if (reader_.joinable()) reader_.join();
}

void RelaySession::reader_loop() {
  while (auto msg = conn_->receive()) {
    json frame = json::parse(*msg, nullptr, false);
    if (frame.is_discarded() || !frame.is_array() || frame.empty()) continue;
    const std::string type = frame[0].is_string() ? frame[0].get<std::string>() : "";

    if (type == "OK" && frame.size() >= 3) {
      std::shared_ptr<BlockingQueue<Ack>> waiter;
      {
        std::lock_guard lk(mu_);
        auto it = pending_acks_.find(frame[1].get<std::string>());
        if (it != pending_acks_.end()) {
          waiter = it->second;
          pending_acks_.erase(it);
        }
      }
      if (waiter) {
        Ack ack;
        ack.accepted = frame[2].is_boolean() && frame[2].get<bool>();
        if (frame.size() >= 4 && frame[3].is_string())
          ack.reason = frame[3].get<std::string>();
        waiter->push(ack);
      }
    } else if (type == "EVENT" && frame.size() >= 3) {
      auto event = nostr::event_from_json(frame[2].dump());
      if (!event) continue;
      std::shared_ptr<SubscriptionStream> stream;
      {
        std::lock_guard lk(mu_);
        auto it = streams_.find(frame[1].get<std::string>());
        if (it != streams_.end()) stream = it->second;
      }
      if (stream) stream->queue_.push({SubItem::Type::kEvent, std::move(*event)});
    } else if (type == "EOSE" && frame.size() >= 2) {
      std::shared_ptr<SubscriptionStream> stream;
      {
        std::lock_guard lk(mu_);
        auto it = streams_.find(frame[1].get<std::string>());
        if (it != streams_.end()) stream = it->second;
      }
      if (stream) stream->queue_.push({SubItem::Type::kEndOfStored, {}});
    }
    // NOTICE frames are informational only
  }
  connected_.store(false);
  fail_all_pending();
}

void RelaySession::fail_all_pending() {
  std::lock_guard lk(mu_);
  for (auto& [id, waiter] : pending_acks_) waiter->close();
  pending_acks_.clear();
  for (auto& [sub, stream] : streams_)
    stream->queue_.push({SubItem::Type::kDisconnected, {}});
}

Ack RelaySession::publish(const nostr::Event& e, std::chrono::milliseconds timeout) {
  if (!connected_.load()) throw RelayError("publish on closed session: " + url_);
  auto waiter = std::make_shared<BlockingQueue<Ack>>();
  {
    std::lock_guard lk(mu_);
    pending_acks_[e.id] = waiter;
  }
  json frame = json::array({"EVENT", json::parse(event_to_json(e))});
  if (!conn_->send_text(frame.dump())) {
    std::lock_guard lk(mu_);
    pending_acks_.erase(e.id);
    throw RelayError("publish write failed: " + url_);
  }
  auto ack = waiter->pop(timeout);
  if (!ack) {
    std::lock_guard lk(mu_);
    pending_acks_.erase(e.id);
    throw RelayError(connected_.load() ? "publish timed out: " + url_
                                       : "connection lost: " + url_);
  }
  return *ack;
}

std::shared_ptr<SubscriptionStream> RelaySession::subscribe(
    const std::vector<nostr::Filter>& filters) {
  if (!connected_.load()) throw RelayError("subscribe on closed session: " + url_);
  std::string sub_id;
  std::shared_ptr<SubscriptionStream> stream;
  {
    std::lock_guard lk(mu_);
    sub_id = "sub" + std::to_string(next_sub_++);
    stream = std::make_shared<SubscriptionStream>(sub_id);
    streams_[sub_id] = stream;
  }
  json frame = json::array({"REQ", sub_id});
  for (const auto& f : filters) frame.push_back(json::parse(filter_to_json(f)));
  if (!conn_->send_text(frame.dump())) {
    std::lock_guard lk(mu_);
    streams_.erase(sub_id);
    throw RelayError("subscribe write failed: " + url_);
  }
  return stream;
}

void RelaySession::unsubscribe(const std::string& sub_id) {
  {
    std::lock_guard lk(mu_);
    auto it = streams_.find(sub_id);
    if (it == streams_.end()) return;
    it->second->queue_.close();
    streams_.erase(it);
  }
  conn_->send_text(json::array({"CLOSE", sub_id}).dump());
}

void RelaySession::close() {
  connected_.store(false);
  conn_->close();
}

std::vector<PerRelayResult> multi_relay_publish(
    const std::vector<std::shared_ptr<RelaySession>>& sessions, const nostr::Event& e) {
  if (sessions.empty()) throw RelayError("multi_relay_publish: no sessions");
  std::vector<PerRelayResult> results;
  std::size_t accepted = 0;
  for (const auto& session : sessions) {
    PerRelayResult r;
    r.url = session->url();
    try {
      r.ack = session->publish(e);
      r.transport_ok = true;
      if (r.ack.accepted) ++accepted;
    } catch (const RelayError& err) {
      r.transport_ok = false;
      r.error = err.what();
    }
    results.push_back(std::move(r));
  }
  if (accepted == 0) {
    std::string detail = "publish rejected by all relays:";
    for (const auto& r : results)
      detail += " [" + r.url + ": " + (r.transport_ok ? r.ack.reason : r.error) + "]";
    throw RelayError(detail);
  }
  return results;
}

}  // namespace fedstr::relay
