#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedstr/util/hex.hpp"

namespace fedstr::ml {

// Dense feature matrix (row major) with one target per row; targets hold
// regression values or class indices depending on the loss.
struct Dataset {
  std::size_t dim = 0;
  std::vector<double> x;  // rows * dim
  std::vector<double> y;  // rows

  std::size_t rows() const { return y.size(); }
  const double* row(std::size_t i) const { return x.data() + i * dim; }
  bool operator==(const Dataset&) const = default;
};

Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices);

// Seeded shuffle then contiguous near-equal split: parts are disjoint, their
// union is the input, and the remainder spreads over the first parts.
std::vector<Dataset> split_dataset(const Dataset& d, std::size_t n_parts,
                                   std::uint64_t seed);

// CSV with header f0..f{d-1},y.
std::string dataset_to_csv(const Dataset& d);
Dataset dataset_from_csv(const std::string& text);  // throws FormatError

// y = x . theta* + b* + sigma * noise, with x, theta*, b* standard normal.
Dataset make_synthetic_linear(std::size_t n, std::size_t d, double noise,
                              std::uint64_t seed);
// Linearly separable-ish classes from a random score matrix plus noise.
Dataset make_synthetic_classify(std::size_t n, std::size_t d, int classes,
                                std::uint64_t seed);

}  // namespace fedstr::ml
