#include "fedstr/relay/server.hpp"

#include <chrono>

#include "fedstr/errors.hpp"
#include "json.hpp"

using nlohmann::json;

namespace fedstr::relay {

using nostr::Event;
using nostr::Filter;

struct RelayServer::Session {
  net::WsConnectionPtr conn;
  std::map<std::string, std::vector<Filter>> subscriptions;

  void send(const json& frame) { conn->send_text(frame.dump()); }
  void notice(const std::string& msg) { send(json::array({"NOTICE", msg})); }
  void ok(const std::string& id, bool accepted, const std::string& reason) {
    send(json::array({"OK", id, accepted, reason}));
  }
};

RelayServer::RelayServer(RelayServerConfig cfg) : cfg_(std::move(cfg)) {}

RelayServer::~RelayServer() { stop(); }

void RelayServer::start() {
  if (!cfg_.log_file.empty()) {
    log_.open(cfg_.log_file, std::ios::app);
    if (!log_) throw RelayError("cannot open relay log file: " + cfg_.log_file);
  }
  ws_ = std::make_unique<net::WsServer>(
      cfg_.bind_address, [this](net::WsConnectionPtr conn) { handle_session(conn); });
  ws_->start();
}

void RelayServer::stop() {
  if (ws_) ws_->stop();
  ws_.reset();
}

std::uint16_t RelayServer::port() const { return ws_ ? ws_->port() : 0; }

std::string RelayServer::url() const { return ws_ ? ws_->url() : ""; }

std::size_t RelayServer::stored_events() const {
  std::lock_guard lk(mu_);
  return store_.size();
}

void RelayServer::log_event(const Event& e) {
  if (!log_.is_open()) return;
  auto now_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::system_clock::now().time_since_epoch())
                    .count();
  json line{{"seq", log_seq_++},
            {"received_at_ms", now_ms},
            {"event", json::parse(event_to_json(e))}};
  log_ << line.dump() << "\n";
  log_.flush();
}

void RelayServer::handle_session(net::WsConnectionPtr conn) {
  auto session = std::make_shared<Session>();
  session->conn = conn;
  {
    std::lock_guard lk(mu_);
    sessions_.emplace_back(session);
  }
  while (auto msg = conn->receive()) {
    handle_message(*session, *msg);
  }
  std::lock_guard lk(mu_);
  session->subscriptions.clear();
  std::erase_if(sessions_, [](const auto& weak) { return weak.expired(); });
}

void RelayServer::handle_message(Session& session, const std::string& text) {
  if (text.size() > cfg_.max_message_bytes) {
    std::lock_guard lk(mu_);
    session.notice("message too large: limit is " +
                   std::to_string(cfg_.max_message_bytes) + " bytes");
    return;
  }
  json frame = json::parse(text, nullptr, false);
  if (frame.is_discarded() || !frame.is_array() || frame.empty() ||
      !frame[0].is_string()) {
    std::lock_guard lk(mu_);
    session.notice("malformed message");
    return;
  }
  const std::string type = frame[0].get<std::string>();

  if (type == "EVENT") {
    if (frame.size() != 2 || !frame[1].is_object()) {
      std::lock_guard lk(mu_);
      session.notice("malformed EVENT frame");
      return;
    }
    auto event = nostr::event_from_json(frame[1].dump());
    if (!event) {
      std::lock_guard lk(mu_);
      session.notice("malformed event");
      return;
    }
    if (!nostr::verify_event(*event)) {
      std::lock_guard lk(mu_);
      session.ok(event->id, false, "invalid: signature");
      return;
    }
    std::lock_guard lk(mu_);
    auto put = store_.put(*event);
    session.ok(event->id, put.accepted, put.reason);
    if (!put.is_new) return;
    log_event(*event);
    json event_json = json::parse(event_to_json(*event));
    for (auto& weak : sessions_) {
      auto peer = weak.lock();
      if (!peer) continue;
      for (const auto& [sub_id, filters] : peer->subscriptions)
        if (nostr::matches_any(*event, filters))
          peer->send(json::array({"EVENT", sub_id, event_json}));
    }
    return;
  }

  if (type == "REQ") {
    if (frame.size() < 3 || !frame[1].is_string()) {
      std::lock_guard lk(mu_);
      session.notice("malformed REQ frame");
      return;
    }
    std::string sub_id = frame[1].get<std::string>();
    std::vector<Filter> filters;
    for (std::size_t i = 2; i < frame.size(); ++i) {
      auto f = nostr::filter_from_json_text(frame[i].dump());
      if (!f) {
        std::lock_guard lk(mu_);
        session.notice("malformed filter in REQ " + sub_id);
        return;
      }
      filters.push_back(std::move(*f));
    }
    std::lock_guard lk(mu_);
    session.subscriptions[sub_id] = filters;  // re-use overwrites
    for (const auto& e : store_.query(filters))
      session.send(json::array({"EVENT", sub_id, json::parse(event_to_json(e))}));
    session.send(json::array({"EOSE", sub_id}));
    return;
  }

  if (type == "CLOSE") {
    if (frame.size() >= 2 && frame[1].is_string()) {
      std::lock_guard lk(mu_);
      session.subscriptions.erase(frame[1].get<std::string>());
    }
    return;
  }

  std::lock_guard lk(mu_);
  session.notice("unrecognized message type: " + type);
}

}  // namespace fedstr::relay
