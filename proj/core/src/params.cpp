#include "fedstr/ml/params.hpp"

#include <cmath>
#include <cstring>

#include "fedstr/errors.hpp"

namespace fedstr::ml {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'T', 'R'};
constexpr std::uint16_t kVersion = 1;

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
  const Bytes& data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > data.size()) throw FormatError("truncated parameter blob");
  }
  std::uint8_t u8() {
    need(1);
    return data[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(data[pos] | (data[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data.data() + pos), n);
    pos += n;
    return s;
  }
};

static_assert(sizeof(double) == 8);

}  // namespace

void ModelParams::validate() const {
  std::size_t total = 0;
  for (const auto& entry : layout) {
    if (entry.shape.empty()) throw FormatError("layout entry with empty shape: " + entry.name);
    total += entry.size();
  }
  if (total != values.size())
    throw FormatError("layout sizes sum to " + std::to_string(total) + " but vector has " +
                      std::to_string(values.size()) + " values");
  for (double v : values)
    if (!std::isfinite(v)) throw FormatError("non-finite parameter value");
}

Bytes serialize_params(const ModelParams& p) {
  p.validate();
  Bytes out;
  out.reserve(16 + p.values.size() * 8);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(p.layout.size()));
  for (const auto& entry : p.layout) {
    if (entry.name.size() > 0xffff) throw FormatError("layout name too long");
    if (entry.shape.size() > 0xff) throw FormatError("layout rank too large");
    put_u16(out, static_cast<std::uint16_t>(entry.name.size()));
    out.insert(out.end(), entry.name.begin(), entry.name.end());
    out.push_back(static_cast<std::uint8_t>(entry.shape.size()));
    for (auto d : entry.shape) put_u32(out, d);
  }
  // little-endian doubles; this code targets little-endian hosts
  std::size_t value_start = out.size();
  out.resize(out.size() + p.values.size() * 8);
  std::memcpy(out.data() + value_start, p.values.data(), p.values.size() * 8);
  return out;
}

ModelParams deserialize_params(const Bytes& data) {
  Reader r{data};
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("bad magic, not a parameter blob");
  if (r.u16() != kVersion) throw FormatError("unsupported parameter blob version");
  ModelParams p;
  std::uint32_t entries = r.u32();
  std::size_t total = 0;
  for (std::uint32_t i = 0; i < entries; ++i) {
    LayoutEntry entry;
    entry.name = r.str(r.u16());
    std::uint8_t rank = r.u8();
    if (rank == 0) throw FormatError("layout entry with empty shape: " + entry.name);
    for (std::uint8_t d = 0; d < rank; ++d) entry.shape.push_back(r.u32());
    total += entry.size();
    p.layout.push_back(std::move(entry));
  }
  if (data.size() - r.pos != total * 8)
    throw FormatError("value section length mismatch: expected " +
                      std::to_string(total * 8) + " bytes, have " +
                      std::to_string(data.size() - r.pos));
  p.values.resize(total);
  std::memcpy(p.values.data(), data.data() + r.pos, total * 8);
  p.validate();
  return p;
}

}  // namespace fedstr::ml
