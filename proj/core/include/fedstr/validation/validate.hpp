#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedstr/ml/model.hpp"

namespace fedstr::validation {

enum class TestType { kA, kB };

struct ValidationConfig {
  TestType test_type = TestType::kA;
  // Test A threshold on the summed loss difference over the test set; scale
  // depends on |test_dataset|, callers normalize via config.
  double gamma_t = 0.0;
  // Test B threshold on the moving average of summed loss.
  double beta_t = 0.0;
  std::size_t tau_c = 0;  // Test B window length (uses tau_c + 1 snapshots)
  ml::Dataset test_dataset;
  ml::LossSpec loss;
  ml::ModelSpec model;
};

struct Verdict {
  bool pass = true;
  bool advisory = false;  // pass granted without a conclusive check
  double statistic = 0.0;
  std::string detail;
};

// Time-indexed parameter series per provider (plus the theta_global series
// under its own key for outer validation).
class ParamHistory {
 public:
  void push(const std::string& key, ml::ModelParams params);
  // Drops the newest entry; lets callers evict a rejected candidate.
  void pop(const std::string& key);
  const std::vector<ml::ModelParams>* series(const std::string& key) const;
  std::size_t depth(const std::string& key) const;

 private:
  std::map<std::string, std::vector<ml::ModelParams>> series_;
};

// delta_k = theta_inner_k - theta_global for each provider.
std::map<std::string, ml::ModelParams> compute_deltas(
    const ml::ModelParams& theta_global,
    const std::map<std::string, ml::ModelParams>& inner_by_provider);

// Accuracy against the other providers: candidate model vs the model built
// from everyone else's updates, compared by summed loss over the test set.
// A single provider has no peers; that returns an advisory pass.
Verdict validate_test_a(const std::string& sp_pubkey, const ml::ModelParams& theta_global,
                        const std::map<std::string, ml::ModelParams>& deltas,
                        const ValidationConfig& cfg);

// Moving average of the summed test loss over the last tau_c + 1 snapshots;
// insufficient history defers with an advisory pass.
Verdict validate_test_b(const std::string& sp_pubkey, const ParamHistory& history,
                        const ValidationConfig& cfg);

}  // namespace fedstr::validation
