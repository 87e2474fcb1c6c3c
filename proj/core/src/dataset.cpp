#include "fedstr/ml/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>

#include "fedstr/errors.hpp"
#include "fedstr/util/rng.hpp"

namespace fedstr::ml {

Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.dim = d.dim;
  out.x.reserve(indices.size() * d.dim);
  out.y.reserve(indices.size());
  for (auto i : indices) {
    out.x.insert(out.x.end(), d.row(i), d.row(i) + d.dim);
    out.y.push_back(d.y[i]);
  }
  return out;
}

std::vector<Dataset> split_dataset(const Dataset& d, std::size_t n_parts,
                                   std::uint64_t seed) {
  if (n_parts == 0 || n_parts > d.rows())
    throw ConfigError("cannot split " + std::to_string(d.rows()) + " rows into " +
                      std::to_string(n_parts) + " parts");
  std::vector<std::size_t> order(d.rows());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<Dataset> parts;
  std::size_t base = d.rows() / n_parts;
  std::size_t extra = d.rows() % n_parts;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < n_parts; ++k) {
    std::size_t len = base + (k < extra ? 1 : 0);
    std::vector<std::size_t> idx(order.begin() + offset, order.begin() + offset + len);
    parts.push_back(subset(d, idx));
    offset += len;
  }
  return parts;
}

std::string dataset_to_csv(const Dataset& d) {
  std::ostringstream out;
  for (std::size_t j = 0; j < d.dim; ++j) out << 'f' << j << ',';
  out << "y\n";
  char buf[64];
  for (std::size_t i = 0; i < d.rows(); ++i) {
    for (std::size_t j = 0; j < d.dim; ++j) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), d.row(i)[j]);
      out.write(buf, ptr - buf);
      out << ',';
    }
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), d.y[i]);
    out.write(buf, ptr - buf);
    out << '\n';
  }
  return out.str();
}

Dataset dataset_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty csv");
  std::size_t columns = 1 + static_cast<std::size_t>(
                                std::count(line.begin(), line.end(), ','));
  if (columns < 2) throw FormatError("csv needs at least one feature and a y column");
  if (line.rfind(",y") != line.size() - 2)
    throw FormatError("csv target column must be named y and come last");

  Dataset d;
  d.dim = columns - 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t start = 0;
    std::size_t field = 0;
    while (field < columns) {
      auto end = line.find(',', start);
      std::string_view cell(line.data() + start,
                            (end == std::string::npos ? line.size() : end) - start);
      double v = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size())
        throw FormatError("bad numeric cell in csv: " + std::string(cell));
      if (field + 1 == columns)
        d.y.push_back(v);
      else
        d.x.push_back(v);
      ++field;
      if (end == std::string::npos) break;
      start = end + 1;
    }
    if (field != columns) throw FormatError("short csv row");
  }
  if (d.y.empty()) throw FormatError("csv has no data rows");
  return d;
}

Dataset make_synthetic_linear(std::size_t n, std::size_t d, double noise,
                              std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> theta(d);
  for (auto& t : theta) t = rng.normal();
  double bias = rng.normal();

  Dataset out;
  out.dim = d;
  out.x.resize(n * d);
  out.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = bias;
    for (std::size_t j = 0; j < d; ++j) {
      double v = rng.normal();
      out.x[i * d + j] = v;
      dot += v * theta[j];
    }
    out.y[i] = dot + noise * rng.normal();
  }
  return out;
}

Dataset make_synthetic_classify(std::size_t n, std::size_t d, int classes,
                                std::uint64_t seed) {
  if (classes < 2) throw ConfigError("classification needs >= 2 classes");
  Rng rng(seed);
  std::vector<double> w(static_cast<std::size_t>(classes) * d);
  for (auto& v : w) v = rng.normal();

  Dataset out;
  out.dim = d;
  out.x.resize(n * d);
  out.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out.x[i * d + j] = rng.normal();
    int best = 0;
    double best_score = -1e300;
    for (int c = 0; c < classes; ++c) {
      double score = 0.3 * rng.normal();
      for (std::size_t j = 0; j < d; ++j)
        score += w[static_cast<std::size_t>(c) * d + j] * out.x[i * d + j];
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    out.y[i] = best;
  }
  return out;
}

}  // namespace fedstr::ml
