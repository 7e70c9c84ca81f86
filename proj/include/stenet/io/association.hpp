#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <vector>

#include "stenet/io/atomic_file.hpp"
#include "stenet/tensor.hpp"

// Association matrix file: "SPAS" | u32 N | u32 M | N*M float32, all
// little-endian, row-major.

namespace stenet::io {

struct AssociationDump {
  std::uint32_t rows = 0;  // N pixels
  std::uint32_t cols = 0;  // M superpixels
  std::vector<float> values;

  static AssociationDump from_tensor(const Tensor& a) {
    if (a.dim() != 2) throw ShapeError("association dump: expected [N, M], got " + to_string(a.shape()));
    AssociationDump d{static_cast<std::uint32_t>(a.size(0)), static_cast<std::uint32_t>(a.size(1)), {}};
    d.values.reserve(a.numel());
    for (double v : a.data()) d.values.push_back(static_cast<float>(v));
    return d;
  }

  bool operator==(const AssociationDump&) const = default;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_association(const AssociationDump& d) {
  if (d.values.size() != static_cast<std::size_t>(d.rows) * d.cols) {
    throw std::invalid_argument("association dump: value count does not match N x M");
  }
  std::vector<std::uint8_t> out{'S', 'P', 'A', 'S'};
  detail::put_u32(out, d.rows);
  detail::put_u32(out, d.cols);
  out.reserve(out.size() + 4 * d.values.size());
  for (float f : d.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline AssociationDump decode_association(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "SPAS", 4) != 0) {
    throw IoError("association dump: bad magic or short header");
  }
  AssociationDump d;
  d.rows = detail::get_u32(bytes.data() + 4);
  d.cols = detail::get_u32(bytes.data() + 8);
  const std::size_t n = static_cast<std::size_t>(d.rows) * d.cols;
  if (bytes.size() != 12 + 4 * n) throw IoError("association dump: payload size does not match N x M");
  d.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.values[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + 12 + 4 * i));
  return d;
}

inline void write_association(const std::filesystem::path& path, const AssociationDump& d) {
  write_atomic(path, encode_association(d));
}

inline AssociationDump read_association(const std::filesystem::path& path) {
  return decode_association(read_bytes(path));
}

}  // namespace stenet::io
