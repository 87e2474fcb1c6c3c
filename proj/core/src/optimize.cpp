#include "fedstr/ml/optimize.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "fedstr/errors.hpp"
#include "fedstr/util/rng.hpp"

namespace fedstr::ml {

void InnerHyperparams::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(learning_rate >= 0)) throw ConfigError("learning rate must be >= 0");
  if (adamw.beta1 < 0 || adamw.beta1 >= 1 || adamw.beta2 < 0 || adamw.beta2 >= 1)
    throw ConfigError("adamw betas must lie in [0, 1)");
  if (!(adamw.eps > 0)) throw ConfigError("adamw eps must be > 0");
  if (adamw.weight_decay < 0) throw ConfigError("weight decay must be >= 0");
}

std::string InnerHyperparams::to_param_string() const {
  std::ostringstream out;
  out << "E=" << epochs << ";bs=" << batch_size << ";lr=" << learning_rate
      << ";seed=" << shuffle_seed << ";b1=" << adamw.beta1 << ";b2=" << adamw.beta2
      << ";eps=" << adamw.eps << ";wd=" << adamw.weight_decay;
  return out.str();
}

InnerHyperparams InnerHyperparams::parse(const std::string& s) {
  InnerHyperparams hp;
  std::istringstream in(s);
  std::string field;
  while (std::getline(in, field, ';')) {
    auto eq = field.find('=');
    if (eq == std::string::npos) throw ConfigError("bad hyperparam field: " + field);
    std::string key = field.substr(0, eq);
    std::string value = field.substr(eq + 1);
    if (key == "E") hp.epochs = std::atoi(value.c_str());
    else if (key == "bs") hp.batch_size = std::atoi(value.c_str());
    else if (key == "lr") hp.learning_rate = std::atof(value.c_str());
    else if (key == "seed") hp.shuffle_seed = std::strtoull(value.c_str(), nullptr, 10);
    else if (key == "b1") hp.adamw.beta1 = std::atof(value.c_str());
    else if (key == "b2") hp.adamw.beta2 = std::atof(value.c_str());
    else if (key == "eps") hp.adamw.eps = std::atof(value.c_str());
    else if (key == "wd") hp.adamw.weight_decay = std::atof(value.c_str());
    else throw ConfigError("unknown hyperparam field: " + key);
  }
  hp.validate();
  return hp;
}

namespace {

void check_finite_loss(double l, const ModelParams& last_finite) {
  if (!std::isfinite(l))
    throw DivergenceError("training diverged: non-finite loss", last_finite);
}

ModelParams inner_fedavg(ModelParams p, const ModelSpec& spec, const LossSpec& loss_spec,
                         const Dataset& data, const InnerHyperparams& hp,
                         const ProgressFn& progress) {
  std::vector<double> g;
  std::vector<std::size_t> order(data.rows());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    if (progress) progress(epoch, loss(p, spec, loss_spec, data));
    Rng rng(mix_seed(hp.shuffle_seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(hp.batch_size)) {
      std::size_t end = std::min(order.size(), start + hp.batch_size);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
      Dataset batch = subset(data, idx);
      ModelParams before = p;
      double l = loss_and_grad(p, spec, loss_spec, batch, &g);
      check_finite_loss(l, before);
      for (std::size_t i = 0; i < p.values.size(); ++i)
        p.values[i] -= hp.learning_rate * g[i];
    }
  }
  return p;
}

ModelParams inner_diloco(ModelParams p, const ModelSpec& spec, const LossSpec& loss_spec,
                         const Dataset& data, const InnerHyperparams& hp,
                         const ProgressFn& progress) {
  std::vector<double> g;
  std::vector<double> m(p.values.size(), 0.0);
  std::vector<double> v(p.values.size(), 0.0);
  const auto& aw = hp.adamw;
  Rng rng(mix_seed(hp.shuffle_seed, 0x11d0c0));
  std::vector<std::size_t> idx;
  for (int step = 1; step <= hp.epochs; ++step) {
    std::size_t take = std::min<std::size_t>(data.rows(), hp.batch_size);
    idx.clear();
    // sample a batch without replacement
    std::vector<std::size_t> pool(data.rows());
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < take; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      idx.push_back(pool[i]);
    }
    Dataset batch = subset(data, idx);
    ModelParams before = p;
    double l = loss_and_grad(p, spec, loss_spec, batch, &g);
    check_finite_loss(l, before);
    double bc1 = 1.0 - std::pow(aw.beta1, step);
    double bc2 = 1.0 - std::pow(aw.beta2, step);
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      m[i] = aw.beta1 * m[i] + (1.0 - aw.beta1) * g[i];
      v[i] = aw.beta2 * v[i] + (1.0 - aw.beta2) * g[i] * g[i];
      double m_hat = m[i] / bc1;
      double v_hat = v[i] / bc2;
      p.values[i] -= hp.learning_rate *
                     (m_hat / (std::sqrt(v_hat) + aw.eps) + aw.weight_decay * p.values[i]);
    }
    if (progress) progress(step, l);
  }
  return p;
}

}  // namespace

ModelParams inner_optimize(const ModelParams& start, const ModelSpec& spec,
                           const LossSpec& loss_spec, const Dataset& data,
                           RunOption run_option, const InnerHyperparams& hp,
                           const ProgressFn& progress) {
  hp.validate();
  start.validate();
  if (run_option == RunOption::kFedAvg)
    return inner_fedavg(start, spec, loss_spec, data, hp, progress);
  return inner_diloco(start, spec, loss_spec, data, hp, progress);
}

namespace {

std::vector<double> effective_weights(std::size_t k, const std::vector<double>& weights) {
  if (weights.empty()) return std::vector<double>(k, 1.0);
  if (weights.size() != k)
    throw ConfigError("weight count " + std::to_string(weights.size()) +
                      " does not match provider count " + std::to_string(k));
  for (double w : weights)
    if (w < 0) throw ConfigError("aggregation weights must be >= 0");
  return weights;
}

void check_layouts(const std::vector<ModelParams>& inner) {
  if (inner.empty()) throw ConfigError("no inner results to aggregate");
  for (const auto& p : inner) {
    p.validate();
    if (!p.same_layout(inner.front()) || p.size() != inner.front().size())
      throw ConfigError("inner results disagree on parameter layout");
  }
}

}  // namespace

ModelParams outer_fedavg(const std::vector<ModelParams>& inner,
                         const std::vector<double>& weights) {
  check_layouts(inner);
  auto w = effective_weights(inner.size(), weights);
  const double scale = 1.0 / static_cast<double>(inner.size());
  ModelParams out;
  out.layout = inner.front().layout;
  out.values.assign(inner.front().size(), 0.0);
  for (std::size_t k = 0; k < inner.size(); ++k)
    for (std::size_t i = 0; i < out.values.size(); ++i)
      out.values[i] += w[k] * inner[k].values[i];
  for (auto& v : out.values) v *= scale;
  return out;
}

std::pair<ModelParams, OuterState> outer_diloco(const ModelParams& theta_global,
                                                const std::vector<ModelParams>& inner,
                                                OuterState state) {
  check_layouts(inner);
  theta_global.validate();
  if (!theta_global.same_layout(inner.front()))
    throw ConfigError("global params disagree with inner results on layout");
  auto w = effective_weights(inner.size(), state.weights);
  const std::size_t n = theta_global.size();
  if (state.velocity.empty()) state.velocity.assign(n, 0.0);
  if (state.velocity.size() != n)
    throw ConfigError("outer velocity length does not match parameters");

  // outer gradient: points from the inner results back toward theta_global
  std::vector<double> delta(n, 0.0);
  const double scale = 1.0 / static_cast<double>(inner.size());
  for (std::size_t k = 0; k < inner.size(); ++k)
    for (std::size_t i = 0; i < n; ++i)
      delta[i] += w[k] * (theta_global.values[i] - inner[k].values[i]);
  for (auto& d : delta) d *= scale;

  ModelParams out = theta_global;
  for (std::size_t i = 0; i < n; ++i) {
    state.velocity[i] = state.momentum * state.velocity[i] + delta[i];
    out.values[i] -= state.outer_lr * (state.momentum * state.velocity[i] + delta[i]);
  }
  return {std::move(out), std::move(state)};
}

}  // namespace fedstr::ml
