#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>

#include "fedstr/net/websocket.hpp"
#include "fedstr/relay/store.hpp"

namespace fedstr::relay {

struct RelayServerConfig {
  std::string bind_address = "127.0.0.1:0";
  std::string log_file;  // optional JSONL append-only log of accepted events
  // Model payloads travel by storage ref, so events are small; anything
  // bigger than this is rejected with a NOTICE.
  std::size_t max_message_bytes = 512 * 1024;
};

// Embeddable NIP-01 relay: EVENT (verify, store, ack, broadcast),
// REQ (replay newest-first then EOSE, then live), CLOSE.
class RelayServer {
 public:
  explicit RelayServer(RelayServerConfig cfg);
  ~RelayServer();

  void start();  // throws RelayError if the address is not bindable
  void stop();

  std::uint16_t port() const;
  std::string url() const;
  std::size_t stored_events() const;

 private:
  struct Session;
  void handle_session(net::WsConnectionPtr conn);
  void handle_message(Session& session, const std::string& text);
  void log_event(const nostr::Event& e);

  RelayServerConfig cfg_;
  std::unique_ptr<net::WsServer> ws_;

  // One relay-wide mutex serializes store writes, subscription changes and
  // the resulting socket writes; this gives REQ replay/EOSE/live ordering
  // for free and the simulator does not need more throughput.
  mutable std::mutex mu_;
  RelayStore store_;
  std::vector<std::weak_ptr<Session>> sessions_;
  std::ofstream log_;
  std::uint64_t log_seq_ = 0;
};

}  // namespace fedstr::relay
