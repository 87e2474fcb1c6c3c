#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fedstr/events/schemas.hpp"
#include "fedstr/payments/zap.hpp"
#include "fedstr/relay/client.hpp"
#include "fedstr/storage/store.hpp"
#include "fedstr/util/queue.hpp"

namespace fedstr::provider {

struct ProviderConfig {
  Keypair key;
  std::vector<std::string> relays;
  std::vector<int> supported_kinds{8000};
  std::string name = "fedstr-provider";
  std::string about = "Federated Learning AI-VM";
  events::Discoverability::Spec capability{"cpu", "600", "1-100000"};

  // Demanded before starting a job (the per-round initialization payment) and
  // requested on the result (the completion payment).
  std::uint64_t price_init_msats = 100;
  std::uint64_t price_result_msats = 900;

  int max_concurrent_jobs = 2;
  std::chrono::milliseconds poll_interval{200};
  std::chrono::milliseconds payment_timeout{60000};
  std::chrono::milliseconds progress_interval{5000};
  // Customers that take delivery and never pay get blacklisted after this.
  std::chrono::milliseconds nonpayment_grace{600000};

  std::string storage_root;
  bool publish_nip94 = false;

  // Fault injection for the demo harness and tests.
  int die_at_round = 0;       // go silent mid-round when param round == this
  bool malicious = false;     // return noise instead of training
  bool tamper_output = false; // corrupt the stored blob after hashing it
};

// Service provider daemon: announces availability, demands payment per job,
// runs inner/outer optimization with progress feedback, publishes results.
class Provider {
 public:
  explicit Provider(ProviderConfig cfg);
  ~Provider();

  void start();  // throws on connect/announce failure
  void stop();

  std::string pubkey() const { return cfg_.key.public_key_hex(); }
  std::string announce_id() const { return announce_id_; }
  int jobs_completed() const { return jobs_completed_.load(); }

  void blacklist_customer(const std::string& pubkey);
  bool is_blacklisted(const std::string& pubkey) const;

 private:
  void forward_stream(std::shared_ptr<relay::SubscriptionStream> stream);
  void dispatch_loop();
  void run_session(nostr::Event request_event);
  void handle_zap_request(const nostr::Event& e);
  void route_receipt(const nostr::Event& e);
  void publish_all(const nostr::Event& e);
  void publish_feedback(const events::JobFeedback& fb);
  void check_nonpayment_deadlines();

  ProviderConfig cfg_;
  std::unique_ptr<storage::Storage> storage_;
  payments::StubWallet wallet_;
  std::string announce_id_;

  std::vector<std::shared_ptr<relay::RelaySession>> sessions_;
  std::vector<std::shared_ptr<relay::SubscriptionStream>> streams_;
  std::vector<std::thread> forwarders_;
  BlockingQueue<nostr::Event> inbox_;
  std::thread dispatcher_;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> silenced_{false};  // die_at_round tripped
  std::atomic<int> active_sessions_{0};
  std::atomic<int> jobs_completed_{0};

  mutable std::mutex mu_;
  std::set<std::string> seen_events_;
  std::set<std::string> blacklist_;
  std::map<std::string, std::shared_ptr<BlockingQueue<nostr::Event>>> receipt_waiters_;
  // customer -> payment deadline for delivered work
  std::map<std::string, std::chrono::steady_clock::time_point> pending_payment_;
  std::vector<std::thread> session_threads_;
};

}  // namespace fedstr::provider
