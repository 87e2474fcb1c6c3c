#include "fedstr/validation/validate.hpp"

#include <sstream>

#include "fedstr/errors.hpp"

namespace fedstr::validation {

void ParamHistory::push(const std::string& key, ml::ModelParams params) {
  series_[key].push_back(std::move(params));
}

void ParamHistory::pop(const std::string& key) {
  auto it = series_.find(key);
  if (it != series_.end() && !it->second.empty()) it->second.pop_back();
}

const std::vector<ml::ModelParams>* ParamHistory::series(const std::string& key) const {
  auto it = series_.find(key);
  return it == series_.end() ? nullptr : &it->second;
}

std::size_t ParamHistory::depth(const std::string& key) const {
  auto s = series(key);
  return s ? s->size() : 0;
}

std::map<std::string, ml::ModelParams> compute_deltas(
    const ml::ModelParams& theta_global,
    const std::map<std::string, ml::ModelParams>& inner_by_provider) {
  std::map<std::string, ml::ModelParams> deltas;
  for (const auto& [pk, inner] : inner_by_provider) {
    if (!inner.same_layout(theta_global))
      throw ConfigError("inner result layout mismatch for " + pk);
    ml::ModelParams d = inner;
    for (std::size_t i = 0; i < d.values.size(); ++i)
      d.values[i] = inner.values[i] - theta_global.values[i];
    deltas.emplace(pk, std::move(d));
  }
  return deltas;
}

namespace {

// Summed per-sample loss over the test set (the tests are defined on sums,
// not means).
double summed_loss(const ml::ModelParams& p, const ValidationConfig& cfg) {
  return ml::loss(p, cfg.model, cfg.loss, cfg.test_dataset) *
         static_cast<double>(cfg.test_dataset.rows());
}

ml::ModelParams add(const ml::ModelParams& base, const ml::ModelParams& delta) {
  ml::ModelParams out = base;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] += delta.values[i];
  return out;
}

}  // namespace

Verdict validate_test_a(const std::string& sp_pubkey, const ml::ModelParams& theta_global,
                        const std::map<std::string, ml::ModelParams>& deltas,
                        const ValidationConfig& cfg) {
  auto it = deltas.find(sp_pubkey);
  if (it == deltas.end())
    throw ConfigError("no delta recorded for provider " + sp_pubkey);
  if (cfg.test_dataset.rows() == 0) throw ConfigError("empty validation dataset");

  if (deltas.size() < 2) {
    Verdict v;
    v.pass = true;
    v.advisory = true;
    v.detail = "single provider: no peers to compare against";
    return v;
  }

  ml::ModelParams candidate = add(theta_global, it->second);

  ml::ModelParams others = theta_global;
  for (const auto& [pk, delta] : deltas) {
    if (pk == sp_pubkey) continue;
    for (std::size_t i = 0; i < others.values.size(); ++i)
      others.values[i] += delta.values[i];
  }

  double diff = summed_loss(candidate, cfg) - summed_loss(others, cfg);
  Verdict v;
  v.statistic = diff;
  v.pass = !(diff > cfg.gamma_t);
  std::ostringstream detail;
  detail << "test-a loss-diff=" << diff << " gamma=" << cfg.gamma_t;
  v.detail = detail.str();
  return v;
}

Verdict validate_test_b(const std::string& sp_pubkey, const ParamHistory& history,
                        const ValidationConfig& cfg) {
  if (cfg.test_dataset.rows() == 0) throw ConfigError("empty validation dataset");
  const auto* series = history.series(sp_pubkey);
  std::size_t needed = cfg.tau_c + 1;
  if (!series || series->size() < needed) {
    Verdict v;
    v.pass = true;
    v.advisory = true;
    v.detail = "insufficient history (" +
               std::to_string(series ? series->size() : 0) + "/" +
               std::to_string(needed) + " snapshots): deferred";
    return v;
  }

  double total = 0.0;
  for (std::size_t i = series->size() - needed; i < series->size(); ++i)
    total += summed_loss((*series)[i], cfg);
  double moving_average = total / static_cast<double>(needed);

  Verdict v;
  v.statistic = moving_average;
  v.pass = !(moving_average > cfg.beta_t);
  std::ostringstream detail;
  detail << "test-b moving-avg=" << moving_average << " beta=" << cfg.beta_t
         << " window=" << needed;
  v.detail = detail.str();
  return v;
}

}  // namespace fedstr::validation
