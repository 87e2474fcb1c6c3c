#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "fedstr/net/websocket.hpp"
#include "fedstr/nostr/event.hpp"
#include "fedstr/nostr/filter.hpp"
#include "fedstr/util/queue.hpp"

namespace fedstr::relay {

struct Ack {
  bool accepted = false;
  std::string reason;
};

// One item from a subscription stream: stored events arrive first, then the
// end-of-stored marker, then live events; a disconnect ends the stream with
// a distinguishable item.
struct SubItem {
  enum class Type { kEvent, kEndOfStored, kDisconnected };
  Type type = Type::kEvent;
  nostr::Event event;
};

class SubscriptionStream {
 public:
  explicit SubscriptionStream(std::string sub_id) : sub_id_(std::move(sub_id)) {}
  const std::string& sub_id() const { return sub_id_; }
  std::optional<SubItem> pop(std::chrono::milliseconds timeout) {
    return queue_.pop(timeout);
  }

 private:
  friend class RelaySession;
  std::string sub_id_;
  BlockingQueue<SubItem> queue_;
};

// Client session to one relay. A background reader routes OK acks to pending
// publishes and events/EOSE to subscription streams. The session is
// single-owner; concurrent publish calls are safe.
class RelaySession {
 public:
  static std::shared_ptr<RelaySession> connect(
      const std::string& url,
      std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));
  ~RelaySession();

  // Resolves with the relay's OK verdict. Throws RelayError on a closed
  // session or transport loss.
  Ack publish(const nostr::Event& e,
              std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));

  std::shared_ptr<SubscriptionStream> subscribe(const std::vector<nostr::Filter>& filters);
  void unsubscribe(const std::string& sub_id);

  void close();
  bool connected() const { return connected_.load(); }
  const std::string& url() const { return url_; }

 private:
  RelaySession(std::string url, net::WsConnectionPtr conn);
  void reader_loop();
  void fail_all_pending();

  std::string url_;
  net::WsConnectionPtr conn_;
  std::thread reader_;
  std::atomic<bool> connected_{true};

  std::mutex mu_;
  std::map<std::string, std::shared_ptr<BlockingQueue<Ack>>> pending_acks_;  // event id
  std::map<std::string, std::shared_ptr<SubscriptionStream>> streams_;       // sub id
  std::uint64_t next_sub_ = 0;
};

struct PerRelayResult {
  std::string url;
  bool transport_ok = false;
  Ack ack;
  std::string error;
};

// Best-effort fan-out; succeeds when at least one relay accepted. Throws
// RelayError listing per-relay reasons when every relay rejected or failed.
std::vector<PerRelayResult> multi_relay_publish(
    const std::vector<std::shared_ptr<RelaySession>>& sessions, const nostr::Event& e);

}  // namespace fedstr::relay
