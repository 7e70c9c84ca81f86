#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "stenet/tensor.hpp"

namespace stenet::io {

/// Bilinear resize of a [C, H, W] tensor to [C, out_h, out_w] with
/// half-pixel centres and edge clamping. Same size is a copy.
inline Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.dim() != 3) throw ShapeError("resize_bilinear: expected [C, H, W], got " + to_string(x.shape()));
  const std::size_t C = x.size(0), H = x.size(1), W = x.size(2);
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: zero output size");
  if (H == out_h && W == out_w) return x.detach();

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double src = std::max(0.0, (static_cast<double>(o) + 0.5) * ratio - 0.5);
      const auto lo = std::min(static_cast<std::size_t>(src), in - 1);
      t[o] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(H, out_h), tx = taps(W, out_w);
  auto d = x.data();
  std::vector<double> out(C * out_h * out_w);
  for (std::size_t c = 0; c < C; ++c) {
    const double* plane = d.data() + c * H * W;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const double top = (1 - b.frac) * plane[a.lo * W + b.lo] + b.frac * plane[a.lo * W + b.hi];
        const double bot = (1 - b.frac) * plane[a.hi * W + b.lo] + b.frac * plane[a.hi * W + b.hi];
        out[(c * out_h + oy) * out_w + ox] = (1 - a.frac) * top + a.frac * bot;
      }
    }
  }
  return Tensor({C, out_h, out_w}, std::move(out));
}

}  // namespace stenet::io
