#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedstr {

using Bytes = std::vector<std::uint8_t>;

std::string to_hex(const std::uint8_t* data, std::size_t len);
std::string to_hex(const Bytes& data);

template <std::size_t N>
std::string to_hex(const std::array<std::uint8_t, N>& data) {
  return to_hex(data.data(), N);
}

// Strict lowercase/uppercase hex decode; nullopt on odd length or bad digit.
std::optional<Bytes> from_hex(std::string_view hex);

// Fixed-size decode; nullopt unless hex decodes to exactly N bytes.
template <std::size_t N>
std::optional<std::array<std::uint8_t, N>> from_hex_array(std::string_view hex) {
  auto raw = from_hex(hex);
  if (!raw || raw->size() != N) return std::nullopt;
  std::array<std::uint8_t, N> out{};
  std::copy(raw->begin(), raw->end(), out.begin());
  return out;
}

bool is_hex(std::string_view s, std::size_t expected_len);

}  // namespace fedstr
