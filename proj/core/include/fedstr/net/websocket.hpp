#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace fedstr::net {

// RFC 6455 websocket endpoint over a blocking TCP socket. Text frames only
// on the send side; ping/pong and fragmentation are handled on receive.
// Reads are single-owner; sends are internally serialized so any thread may
// publish. Only ws:// (plaintext) is supported; the relay simulator and demo
// run on loopback.
class WsConnection {
 public:
  WsConnection(int fd, bool is_client);
  ~WsConnection();
  WsConnection(const WsConnection&) = delete;
  WsConnection& operator=(const WsConnection&) = delete;

  // Next complete text/binary message; nullopt on close, EOF or error.
  std::optional<std::string> receive();

  bool send_text(const std::string& payload);

  // Sends a close frame (best effort) and shuts the socket down, waking any
  // blocked receive().
  void close();

  bool open() const { return !closed_.load(); }

  // Hard upper bound on accepted message size; larger frames abort the
  // connection. Policy-level limits (relay max event size) sit above this.
  static constexpr std::size_t kMaxMessageBytes = 64ull * 1024 * 1024;

 private:
  bool read_exact(std::uint8_t* buf, std::size_t len);
  bool write_all(const std::uint8_t* buf, std::size_t len);
  bool send_frame(std::uint8_t opcode, const std::uint8_t* payload, std::size_t len);

  int fd_;
  bool is_client_;
  std::atomic<bool> closed_{false};
  std::mutex write_mu_;
};

using WsConnectionPtr = std::shared_ptr<WsConnection>;

// Parsed ws URL: ws://host:port[/path]
struct WsUrl {
  std::string host;
  std::uint16_t port = 0;
  std::string path = "/";
};
std::optional<WsUrl> parse_ws_url(const std::string& url);

// Performs the client handshake; throws RelayError on failure.
WsConnectionPtr ws_connect(const std::string& url,
                           std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));

// Accept loop with one thread per connection. The handler owns the
// connection for its lifetime; return ends the session.
class WsServer {
 public:
  using Handler = std::function<void(WsConnectionPtr)>;

  // bind_address "host:port"; port 0 picks an ephemeral port.
  WsServer(const std::string& bind_address, Handler handler);
  ~WsServer();

  void start();  // throws RelayError if the address is not bindable
  void stop();

  std::uint16_t port() const { return port_; }
  std::string url() const;

 private:
  void accept_loop();

  std::string bind_host_;
  std::uint16_t bind_port_;
  Handler handler_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex sessions_mu_;
  std::vector<std::weak_ptr<WsConnection>> sessions_;
  std::vector<std::thread> session_threads_;
};

}  // namespace fedstr::net
