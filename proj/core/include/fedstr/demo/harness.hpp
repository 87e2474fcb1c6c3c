#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedstr/customer/customer.hpp"

namespace fedstr::demo {

struct DatasetSpec {
  enum class Kind { kSyntheticLinear, kSyntheticClassify };
  Kind kind = Kind::kSyntheticLinear;
  std::size_t n = 3000;
  std::size_t d = 10;
  double noise = 0.1;
  int classes = 3;
  double test_fraction = 0.2;
};

struct DemoConfig {
  std::string exe_path;  // fedstr binary used for relay/provider children
  int providers = 2;
  int rounds = 3;
  RunOption run_option = RunOption::kFedAvg;
  customer::OuterMode outer_mode = customer::OuterMode::kSelf;
  DatasetSpec dataset;
  std::uint64_t seed = 1;

  // fault injection
  std::optional<int> kill_provider_at_round;
  bool tamper_blob = false;
  bool malicious_provider = false;
  int spare_providers = -1;  // -1: one spare whenever a fault is configured
  bool nip94 = false;

  std::string workdir;  // empty: fresh directory under the storage root

  std::uint64_t init_msats = 100;
  std::uint64_t round_msats = 900;
  std::chrono::milliseconds job_timeout{10000};
  std::chrono::milliseconds feedback_interval{200};

  ml::InnerHyperparams hyper{3, 32, 0.02, {}, 0};
  validation::TestType test_type = validation::TestType::kA;
  std::optional<double> gamma_t;
  double beta_t = 1e9;
  std::size_t tau_c = 1;
  std::optional<double> target_loss;
};

struct DemoSummary {
  bool completed = false;
  int exit_code = 1;
  std::string abort_reason;
  std::string workdir;
  std::string relay_url;
  std::string relay_log_path;
  std::string round_log_path;
  std::string final_blob_path;  // final theta blob inside the model root
  std::string final_theta_sha256;
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  int rounds_completed = 0;
  int reassignments = 0;
  int integrity_errors = 0;
  int validations_pass = 0;
  int validations_fail = 0;
  int hash_verified_reads = 0;
  std::uint64_t msats_paid = 0;
  int zaps_sent = 0;
  std::vector<customer::RoundRecord> rounds;
  std::vector<std::string> hosts_contacted;  // hermeticity evidence

  std::string to_json() const;
};

// Spawns a relay and N provider processes from `exe_path`, runs the customer
// in-process, tears everything down, and reports. Throws ConfigError for bad
// configs; component startup failures yield exit_code != 0 with a reason.
DemoSummary run_demo(const DemoConfig& cfg);

}  // namespace fedstr::demo
