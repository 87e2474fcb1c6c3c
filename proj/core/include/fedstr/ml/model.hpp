#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedstr/ml/dataset.hpp"
#include "fedstr/ml/params.hpp"

namespace fedstr::ml {

enum class ModelFamily { kLinearRegression, kLogisticRegression, kMlp };
enum class Activation { kTanh, kRelu, kSigmoid };

// Desk-scale model families. Big-name architectures named in job requests
// are carried opaquely by the protocol; the engine only runs these.
struct ModelSpec {
  ModelFamily family = ModelFamily::kLinearRegression;
  int input_dim = 1;
  int output_dim = 1;
  std::vector<int> hidden;  // MLP only
  Activation activation = Activation::kTanh;
  std::uint64_t init_seed = 0;

  // Compact wire form, e.g. "family=mlp;in=4;out=3;hidden=8,8;act=tanh;seed=1"
  std::string to_string() const;
  static ModelSpec parse(const std::string& s);  // throws ConfigError
  bool operator==(const ModelSpec&) const = default;
};

enum class LossKind { kMse, kCrossEntropy };

struct LossSpec {
  LossKind kind = LossKind::kMse;
  bool operator==(const LossSpec&) const = default;
};

// Zero init for the linear families; seeded Xavier-uniform weights with zero
// biases for MLPs. Deterministic per init_seed.
ModelParams init_model(const ModelSpec& spec);

// Mean per-sample loss over the batch; cross-entropy reads targets as class
// indices. Throws ConfigError on dimension mismatches.
double loss(const ModelParams& p, const ModelSpec& spec, const LossSpec& loss_spec,
            const Dataset& batch);

// Analytic gradient, same length/order as p.values.
std::vector<double> grad(const ModelParams& p, const ModelSpec& spec,
                         const LossSpec& loss_spec, const Dataset& batch);

double loss_and_grad(const ModelParams& p, const ModelSpec& spec,
                     const LossSpec& loss_spec, const Dataset& batch,
                     std::vector<double>* grad_out);

}  // namespace fedstr::ml
