#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "stenet/io/atomic_file.hpp"
#include "stenet/tensor.hpp"

// Binary netpbm: P5 (grey) and P6 (RGB), maxval 255 only.

namespace stenet::io {

class ImageFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;  // interleaved, row-major

  bool operator==(const Image8&) const = default;
};

namespace detail {

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<std::uint8_t>& bytes) : b_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) {
      throw ImageFormatError(std::string("netpbm header: expected ") + what);
    }
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_++] - '0');
      if (v > (1u << 24)) throw ImageFormatError(std::string("netpbm header: ") + what + " too large");
    }
    return v;
  }

  /// Exactly one whitespace byte separates the header from the raster.
  void end_of_header() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw ImageFormatError("netpbm header: missing raster separator");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Image8 decode_netpbm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ImageFormatError("not a binary PGM/PPM (expected P5 or P6)");
  }
  Image8 img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  detail::HeaderReader h(bytes);
  h.advance(2);
  img.width = h.number("width");
  img.height = h.number("height");
  const std::size_t maxval = h.number("maxval");
  if (img.width == 0 || img.height == 0) throw ImageFormatError("netpbm: zero dimension");
  if (maxval != 255) throw ImageFormatError("netpbm: maxval " + std::to_string(maxval) + " unsupported (need 255)");
  h.end_of_header();
  const std::size_t n = img.width * img.height * img.channels;
  if (bytes.size() - h.pos() < n) {
    throw ImageFormatError("netpbm: truncated raster (" + std::to_string(bytes.size() - h.pos()) + " of " +
                           std::to_string(n) + " bytes)");
  }
  img.pixels.assign(bytes.begin() + static_cast<long>(h.pos()), bytes.begin() + static_cast<long>(h.pos() + n));
  return img;
}

inline Image8 read_netpbm(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_bytes(path);
  } catch (const IoError& e) {
    throw ImageFormatError(e.what());
  }
  return decode_netpbm(bytes);
}

inline std::vector<std::uint8_t> encode_netpbm(const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("netpbm: channels must be 1 or 3");
  if (img.pixels.size() != img.width * img.height * img.channels) {
    throw std::invalid_argument("netpbm: pixel buffer does not match dimensions");
  }
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline void write_netpbm(const std::filesystem::path& path, const Image8& img) { write_atomic(path, encode_netpbm(img)); }

/// [C, H, W] tensor with values in [0, 1].
inline Tensor image_to_tensor(const Image8& img) {
  const std::size_t hw = img.width * img.height;
  std::vector<double> v(img.channels * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < img.channels; ++c) v[c * hw + i] = img.pixels[i * img.channels + c] / 255.0;
  }
  return Tensor({img.channels, img.height, img.width}, std::move(v));
}

inline std::uint8_t quantize(double s) {
  const double clamped = std::min(1.0, std::max(0.0, s));
  return static_cast<std::uint8_t>(std::lround(255.0 * clamped));
}

/// [C, H, W] or [H, W] tensor in [0, 1] to 8 bits, value = round(255 s).
inline Image8 tensor_to_image(const Tensor& t) {
  Image8 img;
  if (t.dim() == 2) {
    img.channels = 1;
    img.height = t.size(0);
    img.width = t.size(1);
  } else if (t.dim() == 3 && (t.size(0) == 1 || t.size(0) == 3)) {
    img.channels = t.size(0);
    img.height = t.size(1);
    img.width = t.size(2);
  } else {
    throw ShapeError("tensor_to_image: expected [H, W] or [1|3, H, W], got " + to_string(t.shape()));
  }
  const std::size_t hw = img.width * img.height;
  img.pixels.resize(hw * img.channels);
  auto d = t.data();
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < img.channels; ++c) img.pixels[i * img.channels + c] = quantize(d[c * hw + i]);
  }
  return img;
}

}  // namespace stenet::io
