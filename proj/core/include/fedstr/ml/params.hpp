#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedstr/util/hex.hpp"

namespace fedstr::ml {

struct LayoutEntry {
  std::string name;
  std::vector<std::uint32_t> shape;

  std::size_t size() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  bool operator==(const LayoutEntry&) const = default;
};

// Flat parameter vector plus the tensor layout it flattens. All entries must
// be finite and the layout sizes must sum exactly to the vector length.
struct ModelParams {
  std::vector<double> values;
  std::vector<LayoutEntry> layout;

  std::size_t size() const { return values.size(); }
  void validate() const;  // throws FormatError on violated invariants
  bool same_layout(const ModelParams& other) const { return layout == other.layout; }
  bool operator==(const ModelParams&) const = default;
};

// Deterministic byte-exact encoding (hash-stable): magic "FSTR", version
// u16=1, entry count u32, per entry (name u16-len + bytes, rank u8, dims
// u32 each), then values as little-endian IEEE-754 doubles, length-checked.
Bytes serialize_params(const ModelParams& p);
ModelParams deserialize_params(const Bytes& data);  // throws FormatError

}  // namespace fedstr::ml
