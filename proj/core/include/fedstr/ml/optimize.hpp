#pragma once

#include <functional>
#include <stdexcept>

#include "fedstr/marketplace_types.hpp"
#include "fedstr/ml/model.hpp"

namespace fedstr::ml {

struct AdamwParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  bool operator==(const AdamwParams&) const = default;
};

struct InnerHyperparams {
  int epochs = 1;  // epochs for fedavg, inner steps for diloco
  int batch_size = 32;
  double learning_rate = 0.01;
  AdamwParams adamw;
  std::uint64_t shuffle_seed = 0;

  void validate() const;  // throws ConfigError
  // "E=3;bs=32;lr=0.02;seed=7;b1=0.9;b2=0.999;eps=1e-8;wd=0.01"
  std::string to_param_string() const;
  static InnerHyperparams parse(const std::string& s);
  bool operator==(const InnerHyperparams&) const = default;
};

// Raised when training hits a non-finite loss; carries the last finite
// parameters so callers can report partial progress.
struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& what, ModelParams last)
      : std::runtime_error(what), last_finite(std::move(last)) {}
  ModelParams last_finite;
};

// Invoked once per epoch (fedavg) or per step (diloco) with the current loss;
// the provider daemon turns these into kind-7000 processing feedbacks.
using ProgressFn = std::function<void(int step, double loss)>;

// fedavg: E epochs of seeded-shuffle minibatch SGD.
// diloco: E steps, one sampled batch + one AdamW update (decoupled weight
// decay, bias-corrected moments) per step.
ModelParams inner_optimize(const ModelParams& start, const ModelSpec& spec,
                           const LossSpec& loss_spec, const Dataset& data,
                           RunOption run_option, const InnerHyperparams& hp,
                           const ProgressFn& progress = {});

struct OuterState {
  std::vector<double> weights;   // eta_k; empty = all ones
  double outer_lr = 1.0;         // defaults follow common practice, configurable
  double momentum = 0.9;
  std::vector<double> velocity;  // empty until first diloco outer step
  bool operator==(const OuterState&) const = default;
};

// theta_global = (1/K) * sum_k eta_k * theta_k
ModelParams outer_fedavg(const std::vector<ModelParams>& inner,
                         const std::vector<double>& weights = {});

// delta = (1/K) * sum_k eta_k * (theta_global - theta_k); v = mu v + delta;
// theta_global -= outer_lr * (mu v + delta). Returns updated params + state.
std::pair<ModelParams, OuterState> outer_diloco(const ModelParams& theta_global,
                                                const std::vector<ModelParams>& inner,
                                                OuterState state);

}  // namespace fedstr::ml
