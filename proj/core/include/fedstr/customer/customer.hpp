#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedstr/ml/optimize.hpp"
#include "fedstr/relay/client.hpp"
#include "fedstr/validation/validate.hpp"

namespace fedstr::customer {

enum class OuterMode { kSelf, kDelegate };

struct CustomerConfig {
  Keypair key;
  std::vector<std::string> relays;
  int num_pr = 2;
  int num_jobs = 3;
  int request_kind = 8000;
  RunOption run_option = RunOption::kFedAvg;
  OuterMode outer_mode = OuterMode::kSelf;

  std::chrono::milliseconds feedback_interval{1000};
  std::chrono::milliseconds job_timeout{30000};
  std::chrono::milliseconds discovery_window{15000};

  // Per round and provider: the upfront initialization payment and the
  // completion payment owed after validation.
  std::uint64_t init_msats = 100;
  std::uint64_t round_msats = 900;

  std::optional<double> target_loss;  // on the test set; rounds-only when unset

  validation::TestType test_type = validation::TestType::kA;
  std::optional<double> gamma_t;  // default scales with |test set|
  double beta_t = 1e9;
  std::size_t tau_c = 1;

  ml::ModelSpec model;
  ml::LossSpec loss;
  ml::InnerHyperparams hyper;
  double outer_lr = 1.0;
  double outer_momentum = 0.9;
  std::vector<double> outer_weights;

  ml::Dataset train;
  ml::Dataset test;

  std::string storage_root;
  std::string log_path;  // optional JSONL round log
  std::uint64_t master_seed = 1;
  int max_reassign_attempts = 5;

  void validate() const;  // throws ConfigError
};

struct RoundLogEntry {
  std::int64_t ts_ms = 0;
  int round = 0;
  std::string provider;
  std::string phase;
  std::string event_id;
  std::string detail;
  std::string to_json() const;
};

struct RoundRecord {
  int round = 0;
  double train_loss_after = 0.0;
  std::string theta_sha256;
  int reassignments = 0;
  int integrity_errors = 0;
  int validations_pass = 0;
  int validations_fail = 0;
};

struct TrainingReport {
  bool completed = false;
  std::string abort_reason;
  ml::ModelParams final_params;
  StorageRef final_ref;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  double final_test_loss = 0.0;
  int rounds_completed = 0;
  int reassignments = 0;
  int integrity_errors = 0;
  int validations_pass = 0;
  int validations_fail = 0;
  int hash_verified_reads = 0;
  std::uint64_t msats_paid = 0;
  int zaps_sent = 0;
  std::vector<RoundRecord> rounds;
  std::vector<RoundLogEntry> log;
  std::vector<std::string> relay_hosts;  // for hermeticity checks
};

// Queries kind-31990 announcements carrying a k tag for `kind`, newest first,
// excluding `exclude`; retries until the window closes. Throws RelayError
// when fewer than `needed` distinct providers turn up.
std::vector<std::string> discover_providers(
    const std::vector<std::shared_ptr<relay::RelaySession>>& sessions,
    std::size_t needed, int kind, const std::vector<std::string>& exclude,
    std::chrono::milliseconds window);

// Runs the whole training campaign: discovery, sharding, per-round job
// requests, payment gates, validation, reassignment, outer optimization and
// stopping. Aborts (completed=false, reason set) instead of throwing for
// runtime failures; throws ConfigError only for invalid configs.
TrainingReport run_training(const CustomerConfig& cfg);

}  // namespace fedstr::customer
