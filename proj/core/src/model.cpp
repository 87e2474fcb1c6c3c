#include "fedstr/ml/model.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "fedstr/errors.hpp"
#include "fedstr/util/rng.hpp"

namespace fedstr::ml {

namespace {

std::string family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::kLinearRegression: return "linear";
    case ModelFamily::kLogisticRegression: return "logistic";
    case ModelFamily::kMlp: return "mlp";
  }
  return "linear";
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "tanh";
}

// Layer dims [in, hidden..., out]; linear/logistic are single-layer.
std::vector<int> layer_dims(const ModelSpec& spec) {
  std::vector<int> dims{spec.input_dim};
  if (spec.family == ModelFamily::kMlp)
    dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(spec.output_dim);
  return dims;
}

void check_spec(const ModelSpec& spec) {
  if (spec.input_dim < 1 || spec.output_dim < 1)
    throw ConfigError("model dims must be >= 1");
  for (int h : spec.hidden)
    if (h < 1) throw ConfigError("hidden layer sizes must be >= 1");
  if (spec.family != ModelFamily::kMlp && !spec.hidden.empty())
    throw ConfigError("hidden layers only apply to the mlp family");
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::kTanh: return std::tanh(z);
    case Activation::kRelu: return z > 0 ? z : 0;
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

// Derivative expressed through the post-activation value.
double activate_deriv(Activation a, double out) {
  switch (a) {
    case Activation::kTanh: return 1.0 - out * out;
    case Activation::kRelu: return out > 0 ? 1.0 : 0.0;
    case Activation::kSigmoid: return out * (1.0 - out);
  }
  return 1.0;
}

}  // namespace

std::string ModelSpec::to_string() const {
  std::ostringstream out;
  out << "family=" << family_name(family) << ";in=" << input_dim << ";out=" << output_dim;
  if (family == ModelFamily::kMlp) {
    out << ";hidden=";
    for (std::size_t i = 0; i < hidden.size(); ++i)
      out << (i ? "," : "") << hidden[i];
    out << ";act=" << activation_name(activation);
  }
  out << ";seed=" << init_seed;
  return out.str();
}

ModelSpec ModelSpec::parse(const std::string& s) {
  ModelSpec spec;
  spec.input_dim = 0;
  std::istringstream in(s);
  std::string field;
  while (std::getline(in, field, ';')) {
    auto eq = field.find('=');
    if (eq == std::string::npos) throw ConfigError("bad model spec field: " + field);
    std::string key = field.substr(0, eq);
    std::string value = field.substr(eq + 1);
    if (key == "family") {
      if (value == "linear") spec.family = ModelFamily::kLinearRegression;
      else if (value == "logistic") spec.family = ModelFamily::kLogisticRegression;
      else if (value == "mlp") spec.family = ModelFamily::kMlp;
      else throw ConfigError("unknown model family: " + value);
    } else if (key == "in") {
      spec.input_dim = std::atoi(value.c_str());
    } else if (key == "out") {
      spec.output_dim = std::atoi(value.c_str());
    } else if (key == "hidden") {
      spec.hidden.clear();
      std::istringstream hs(value);
      std::string h;
      while (std::getline(hs, h, ',')) spec.hidden.push_back(std::atoi(h.c_str()));
    } else if (key == "act") {
      if (value == "tanh") spec.activation = Activation::kTanh;
      else if (value == "relu") spec.activation = Activation::kRelu;
      else if (value == "sigmoid") spec.activation = Activation::kSigmoid;
      else throw ConfigError("unknown activation: " + value);
    } else if (key == "seed") {
      spec.init_seed = std::strtoull(value.c_str(), nullptr, 10);
    } else {
      throw ConfigError("unknown model spec field: " + key);
    }
  }
  if (spec.input_dim < 1) throw ConfigError("model spec needs in=<dim>");
  check_spec(spec);
  return spec;
}

ModelParams init_model(const ModelSpec& spec) {
  check_spec(spec);
  auto dims = layer_dims(spec);
  ModelParams p;
  Rng rng(spec.init_seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    int fan_in = dims[l];
    int fan_out = dims[l + 1];
    LayoutEntry w{"w" + std::to_string(l),
                  {static_cast<std::uint32_t>(fan_out), static_cast<std::uint32_t>(fan_in)}};
    LayoutEntry b{"b" + std::to_string(l), {static_cast<std::uint32_t>(fan_out)}};
    double limit = spec.family == ModelFamily::kMlp
                       ? std::sqrt(6.0 / (fan_in + fan_out))
                       : 0.0;
    for (int i = 0; i < fan_out * fan_in; ++i)
      p.values.push_back(limit == 0.0 ? 0.0 : rng.uniform(-limit, limit));
    for (int i = 0; i < fan_out; ++i) p.values.push_back(0.0);
    p.layout.push_back(std::move(w));
    p.layout.push_back(std::move(b));
  }
  p.validate();
  return p;
}

double loss_and_grad(const ModelParams& p, const ModelSpec& spec,
                     const LossSpec& loss_spec, const Dataset& batch,
                     std::vector<double>* grad_out) {
  check_spec(spec);
  if (batch.rows() == 0) throw ConfigError("empty batch");
  if (batch.dim != static_cast<std::size_t>(spec.input_dim))
    throw ConfigError("batch dim " + std::to_string(batch.dim) +
                      " does not match model input dim " +
                      std::to_string(spec.input_dim));
  if (loss_spec.kind == LossKind::kMse && spec.output_dim != 1)
    throw ConfigError("mse expects a single-output model");
  if (loss_spec.kind == LossKind::kCrossEntropy && spec.output_dim < 2)
    throw ConfigError("cross-entropy expects >= 2 outputs");

  auto dims = layer_dims(spec);
  std::size_t n_layers = dims.size() - 1;

  // flat offsets per layer: w then b, matching init_model's layout
  std::vector<std::size_t> w_off(n_layers), b_off(n_layers);
  std::size_t off = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    w_off[l] = off;
    off += static_cast<std::size_t>(dims[l + 1]) * dims[l];
    b_off[l] = off;
    off += dims[l + 1];
  }
  if (off != p.values.size())
    throw ConfigError("parameter vector does not fit the model spec");

  if (grad_out) grad_out->assign(p.values.size(), 0.0);
  const double* theta = p.values.data();
  double* g = grad_out ? grad_out->data() : nullptr;
  const std::size_t n = batch.rows();
  double total_loss = 0.0;

  std::vector<std::vector<double>> acts(n_layers + 1);
  std::vector<double> delta, next_delta;
  for (std::size_t i = 0; i < n; ++i) {
    acts[0].assign(batch.row(i), batch.row(i) + batch.dim);
    for (std::size_t l = 0; l < n_layers; ++l) {
      const int rows = dims[l + 1], cols = dims[l];
      acts[l + 1].assign(rows, 0.0);
      for (int r = 0; r < rows; ++r) {
        double z = theta[b_off[l] + r];
        const double* w_row = theta + w_off[l] + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) z += w_row[c] * acts[l][c];
        acts[l + 1][r] = (l + 1 < n_layers) ? activate(spec.activation, z) : z;
      }
    }

    const auto& out = acts[n_layers];
    delta.assign(out.size(), 0.0);
    if (loss_spec.kind == LossKind::kMse) {
      double err = out[0] - batch.y[i];
      total_loss += err * err;
      delta[0] = 2.0 * err / static_cast<double>(n);
    } else {
      int target = static_cast<int>(batch.y[i]);
      if (target < 0 || target >= spec.output_dim ||
          batch.y[i] != static_cast<double>(target))
        throw ConfigError("cross-entropy target out of range or not integral");
      double max_z = out[0];
      for (double z : out) max_z = std::max(max_z, z);
      double denom = 0.0;
      for (double z : out) denom += std::exp(z - max_z);
      total_loss += -(out[target] - max_z - std::log(denom));
      for (std::size_t c = 0; c < out.size(); ++c) {
        double prob = std::exp(out[c] - max_z) / denom;
        delta[c] = (prob - (static_cast<int>(c) == target ? 1.0 : 0.0)) /
                   static_cast<double>(n);
      }
    }

    if (!g) continue;
    for (std::size_t l = n_layers; l-- > 0;) {
      const int rows = dims[l + 1], cols = dims[l];
      for (int r = 0; r < rows; ++r) {
        double d = delta[r];
        g[b_off[l] + r] += d;
        double* gw_row = g + w_off[l] + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) gw_row[c] += d * acts[l][c];
      }
      if (l == 0) break;
      next_delta.assign(cols, 0.0);
      for (int c = 0; c < cols; ++c) {
        double da = 0.0;
        for (int r = 0; r < rows; ++r)
          da += theta[w_off[l] + static_cast<std::size_t>(r) * cols + c] * delta[r];
        next_delta[c] = da * activate_deriv(spec.activation, acts[l][c]);
      }
      delta.swap(next_delta);
    }
  }
  return total_loss / static_cast<double>(n);
}

double loss(const ModelParams& p, const ModelSpec& spec, const LossSpec& loss_spec,
            const Dataset& batch) {
  return loss_and_grad(p, spec, loss_spec, batch, nullptr);
}

std::vector<double> grad(const ModelParams& p, const ModelSpec& spec,
                         const LossSpec& loss_spec, const Dataset& batch) {
  std::vector<double> g;
  loss_and_grad(p, spec, loss_spec, batch, &g);
  return g;
}

}  // namespace fedstr::ml
