#pragma once

#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "stenet/flops.hpp"
#include "stenet/nn.hpp"

// Superpixel tokens by iterative masked local cross-attention. Pixels attend
// to the superpixels of an expanded cell window around their own cell, keep
// the top-9 most similar, and superpixels symmetrically keep their top 9*p^2
// pixels. Both sides update residually for T iterations.

namespace stenet::superpixel {

/// Square p x p cells tiling an H x W feature map.
struct GridGeometry {
  std::size_t feature_h = 0;
  std::size_t feature_w = 0;
  std::size_t cell = 1;

  static GridGeometry make(std::size_t h, std::size_t w, std::size_t p) {
    if (h == 0 || w == 0 || p == 0 || h % p != 0 || w % p != 0) {
      throw ShapeError("cell size " + std::to_string(p) + " does not tile a " + std::to_string(h) +
                       "x" + std::to_string(w) + " feature map");
    }
    return {h, w, p};
  }

  std::size_t grid_h() const { return feature_h / cell; }
  std::size_t grid_w() const { return feature_w / cell; }
  std::size_t M() const { return grid_h() * grid_w(); }
  std::size_t N() const { return feature_h * feature_w; }
  Extent extent() const { return {feature_h, feature_w}; }

  std::size_t cell_row(std::size_t pixel) const { return pixel / feature_w / cell; }
  std::size_t cell_col(std::size_t pixel) const { return (pixel % feature_w) / cell; }
  std::size_t cell_of(std::size_t pixel) const { return cell_row(pixel) * grid_w() + cell_col(pixel); }

  /// Chebyshev distance between two cells, in cells.
  std::size_t cell_distance(std::size_t a, std::size_t b) const {
    const auto dr = std::labs(static_cast<long>(a / grid_w()) - static_cast<long>(b / grid_w()));
    const auto dc = std::labs(static_cast<long>(a % grid_w()) - static_cast<long>(b % grid_w()));
    return static_cast<std::size_t>(std::max(dr, dc));
  }

  bool operator==(const GridGeometry&) const = default;
};

struct NeighborhoodSpec {
  std::size_t radius_cells = 2;  // 2 -> 5x5 window
  std::size_t pixel_topk = 9;
  std::size_t superpixel_topk = 0;  // 0 selects 9 * p^2

  std::size_t superpixel_topk_for(const GridGeometry& geo) const {
    return superpixel_topk != 0 ? superpixel_topk : pixel_topk * geo.cell * geo.cell;
  }
};

struct Masks {
  SparseMask pixel_candidates;  // N rows over M superpixels
  SparseMask sp_candidates;     // M rows over N pixels
};

/// Cells within the clamped (2r+1)^2 window around a cell, ascending.
inline std::vector<std::size_t> window_cells(const GridGeometry& geo, std::size_t cell, std::size_t radius) {
  const std::size_t gh = geo.grid_h(), gw = geo.grid_w();
  const std::size_t r = cell / gw, c = cell % gw;
  const std::size_t r0 = r >= radius ? r - radius : 0, r1 = std::min(gh - 1, r + radius);
  const std::size_t c0 = c >= radius ? c - radius : 0, c1 = std::min(gw - 1, c + radius);
  std::vector<std::size_t> out;
  for (std::size_t rr = r0; rr <= r1; ++rr) {
    for (std::size_t cc = c0; cc <= c1; ++cc) out.push_back(rr * gw + cc);
  }
  return out;
}

inline Masks build_masks(const GridGeometry& geo, const NeighborhoodSpec& spec) {
  const std::size_t M = geo.M(), N = geo.N();
  std::vector<std::vector<std::size_t>> cell_windows(M);
  for (std::size_t m = 0; m < M; ++m) cell_windows[m] = window_cells(geo, m, spec.radius_cells);

  std::vector<std::vector<std::size_t>> pix(N);
  for (std::size_t i = 0; i < N; ++i) pix[i] = cell_windows[geo.cell_of(i)];

  // The window relation is symmetric, so superpixel j's pixels are exactly
  // those whose own cell's window contains j.
  std::vector<std::vector<std::size_t>> sp(M);
  for (std::size_t i = 0; i < N; ++i) {
    for (auto m : cell_windows[geo.cell_of(i)]) sp[m].push_back(i);
  }
  return {SparseMask(M, pix), SparseMask(N, sp)};
}

/// Query/key/value embeddings for both token types, shared across
/// iterations.
struct Params {
  Linear q_pix, k_pix, v_pix;
  Linear q_sp, k_sp, v_sp;

  /// Xavier init with each similarity's query and key starting from the
  /// same draw, so both similarities begin as positive semi-definite kernels
  /// <Wx, Wy>. The tied copies are independent leaves afterwards.
  static Params init(std::size_t channels, Rng& rng) {
    Params p;
    p.q_pix = Linear::init(channels, channels, rng);
    p.k_sp = p.q_pix.clone();
    p.q_sp = Linear::init(channels, channels, rng);
    p.k_pix = p.q_sp.clone();
    p.v_pix = Linear::init(channels, channels, rng);
    p.v_sp = Linear::init(channels, channels, rng);
    return p;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    q_pix.collect(out, prefix + ".q_pix");
    k_pix.collect(out, prefix + ".k_pix");
    v_pix.collect(out, prefix + ".v_pix");
    q_sp.collect(out, prefix + ".q_sp");
    k_sp.collect(out, prefix + ".k_sp");
    v_sp.collect(out, prefix + ".v_sp");
  }
};

struct State {
  Tensor S;  // [M, C] superpixel features
  Tensor P;  // [N, C] pixel features
  Tensor A;  // [N, M] masked pixel-side attention (association)
  std::size_t iter = 0;
};

/// Mean of the p^2 pixel features in each cell.
inline Tensor init_superpixels(const Tensor& pixels, const GridGeometry& geo) {
  if (pixels.dim() != 2 || pixels.size(0) != geo.N()) {
    throw ShapeError("init_superpixels: pixels " + to_string(pixels.shape()) + " vs N = " +
                     std::to_string(geo.N()));
  }
  return avgpool_grid(pixels, geo.extent(), geo.cell);
}

/// Hard assignment of every pixel to its own cell.
inline Tensor own_cell_association(const GridGeometry& geo) {
  std::vector<double> a(geo.N() * geo.M(), 0.0);
  for (std::size_t i = 0; i < geo.N(); ++i) a[i * geo.M() + geo.cell_of(i)] = 1.0;
  return Tensor({geo.N(), geo.M()}, std::move(a));
}

inline State iterate(const State& state, const Params& params, const GridGeometry& geo,
                     const NeighborhoodSpec& spec, const Masks& masks) {
  const std::size_t C = state.P.size(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(C));

  const auto q_p = params.q_pix(state.P);
  const auto k_p = params.k_pix(state.P);
  const auto v_p = params.v_pix(state.P);
  const auto q_s = params.q_sp(state.S);
  const auto k_s = params.k_sp(state.S);
  const auto v_s = params.v_sp(state.S);

  // Pixel side: similarity to window superpixels, keep the top pixel_topk.
  const auto a_logits = masked_scores(q_p, k_s, masks.pixel_candidates, scale);
  const auto a_keep =
      topk_indices(a_logits, static_cast<int>(spec.pixel_topk), masks.pixel_candidates);
  const auto a = masked_softmax(a_logits, a_keep, 1);

  // Superpixel side: similarity to window pixels, keep the top 9 * p^2.
  const auto b_logits = masked_scores(q_s, k_p, masks.sp_candidates, scale);
  const auto b_keep = topk_indices(b_logits, static_cast<int>(spec.superpixel_topk_for(geo)),
                                   masks.sp_candidates);
  const auto b = masked_softmax(b_logits, b_keep, 1);

  State next;
  next.P = sparse_matmul(a, a_keep, v_s) + state.P;
  next.S = sparse_matmul(b, b_keep, v_p) + state.S;
  next.A = a;
  next.iter = state.iter + 1;
  return next;
}

inline State iterate(const State& state, const Params& params, const GridGeometry& geo,
                     const NeighborhoodSpec& spec) {
  return iterate(state, params, geo, spec, build_masks(geo, spec));
}

/// Initial cell averages followed by `iters` refinement steps. With zero
/// iterations the association is the hard own-cell assignment.
inline State generate(const Tensor& pixels, const GridGeometry& geo, const NeighborhoodSpec& spec,
                      const Params& params, std::size_t iters) {
  State state{init_superpixels(pixels, geo), pixels, own_cell_association(geo), 0};
  if (iters == 0) return state;
  const auto masks = build_masks(geo, spec);
  for (std::size_t t = 0; t < iters; ++t) state = iterate(state, params, geo, spec, masks);
  return state;
}

/// label[i] = argmax_j A[i, j], ties to the smaller j.
inline std::vector<std::size_t> argmax_labels(const Tensor& association) {
  if (association.dim() != 2) throw ShapeError("argmax_labels: association must be [N, M]");
  const std::size_t N = association.size(0), M = association.size(1);
  auto a = association.data();
  std::vector<std::size_t> labels(N, 0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 1; j < M; ++j) {
      if (a[i * M + j] > a[i * M + labels[i]]) labels[i] = j;
    }
  }
  return labels;
}

inline std::vector<std::size_t> argmax_labels(const State& state) { return argmax_labels(state.A); }

/// Executed flops of `generate` for C channels.
inline FlopCount flops(const GridGeometry& geo, std::size_t C, const NeighborhoodSpec& spec,
                       std::size_t iters) {
  FlopCount out;
  if (iters == 0) return out;
  const std::uint64_t N = geo.N(), M = geo.M();
  std::uint64_t pix_cand = 0, pix_keep = 0, sp_cand = 0, sp_keep = 0;
  const std::size_t sp_topk = spec.superpixel_topk_for(geo);
  std::vector<std::uint64_t> sp_window_pixels(M, 0);
  for (std::size_t m = 0; m < M; ++m) {
    const auto w = window_cells(geo, m, spec.radius_cells).size();
    const std::uint64_t cell_pixels = geo.cell * geo.cell;
    pix_cand += cell_pixels * w;
    pix_keep += cell_pixels * std::min<std::uint64_t>(w, spec.pixel_topk);
    sp_cand += w * cell_pixels;
    sp_keep += std::min<std::uint64_t>(w * cell_pixels, sp_topk);
  }
  const std::uint64_t T = iters;
  out.add("embed_pixels", T * 3 * matmul_flops(N, C, C));
  out.add("embed_superpixels", T * 3 * matmul_flops(M, C, C));
  out.add("pixel_scores", T * 2 * C * pix_cand);
  out.add("superpixel_scores", T * 2 * C * sp_cand);
  out.add("pixel_aggregate", T * 2 * C * pix_keep);
  out.add("superpixel_aggregate", T * 2 * C * sp_keep);
  return out;
}

}  // namespace stenet::superpixel
