#pragma once

#include <cmath>
#include <string>

#include "stenet/superpixel.hpp"

// Local cross-modal refinement. The two modalities' association matrices are
// multiplied, each superpixel keeps its k best-matched pixels, RGB queries
// attend to depth keys among those k pixels, and both modalities' values are
// refined by the same local map before being scattered back.

namespace stenet::salrm {

namespace sp = stenet::superpixel;

struct Params {
  sp::Params sp_rgb, sp_depth;
  Linear q_rgb, k_depth;
  Linear v_rgb, v_depth;
  Mlp ffn_rgb, ffn_depth;
  std::size_t k = 9;

  static Params init(std::size_t C, Rng& rng, std::size_t k = 9) {
    Params p;
    p.sp_rgb = sp::Params::init(C, rng);
    p.sp_depth = sp::Params::init(C, rng);
    p.q_rgb = Linear::init(C, C, rng);
    p.k_depth = Linear::init(C, C, rng);
    p.v_rgb = Linear::init(C, C, rng);
    p.v_depth = Linear::init(C, C, rng);
    p.ffn_rgb = Mlp::init(C, rng);
    p.ffn_depth = Mlp::init(C, rng);
    p.k = k;
    return p;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    sp_rgb.collect(out, prefix + ".sp_rgb");
    sp_depth.collect(out, prefix + ".sp_depth");
    q_rgb.collect(out, prefix + ".q_rgb");
    k_depth.collect(out, prefix + ".k_depth");
    v_rgb.collect(out, prefix + ".v_rgb");
    v_depth.collect(out, prefix + ".v_depth");
    ffn_rgb.collect(out, prefix + ".ffn_rgb");
    ffn_depth.collect(out, prefix + ".ffn_depth");
  }
};

/// Elementwise product of two [N, M] association matrices.
inline Tensor combine_associations(const Tensor& s_rgb, const Tensor& s_depth) {
  if (s_rgb.shape() != s_depth.shape() || s_rgb.dim() != 2) {
    throw ShapeError("combine_associations: " + to_string(s_rgb.shape()) + " vs " + to_string(s_depth.shape()));
  }
  return s_rgb * s_depth;
}

/// Per superpixel column, the k pixels with the largest combined weight,
/// descending, ties to the smaller pixel index. Returns [M, k].
inline IndexMatrix select_local(const Tensor& s_rd, std::size_t k) {
  if (s_rd.dim() != 2) throw ShapeError("select_local: expected [N, M]");
  if (k == 0 || k > s_rd.size(0)) {
    throw std::invalid_argument("select_local: k = " + std::to_string(k) + " outside [1, " +
                                std::to_string(s_rd.size(0)) + "]");
  }
  return topk_indices(transpose_last(s_rd.detach()), static_cast<int>(k));
}

/// Intermediates of one pass, exposed for inspection.
struct LocalRefinement {
  Tensor s_rd;        // [N, M]
  IndexMatrix selected;  // [M, k]
  Tensor f_att;       // [M, k, k]
  Tensor refined_rgb, refined_depth;  // [N, C], mean-scattered
  Tensor output;      // [N, C]
};

inline LocalRefinement refine(const Tensor& f_rgb, const Tensor& f_depth, const Params& params,
                              const sp::GridGeometry& geo, const sp::NeighborhoodSpec& spec, std::size_t iters) {
  if (f_rgb.shape() != f_depth.shape() || f_rgb.dim() != 2 || f_rgb.size(0) != geo.N()) {
    throw ShapeError("salrm: features " + to_string(f_rgb.shape()) + " / " + to_string(f_depth.shape()) +
                     " do not match HW = " + std::to_string(geo.N()));
  }
  const std::size_t N = geo.N();
  const double scale = 1.0 / std::sqrt(static_cast<double>(f_rgb.size(1)));

  LocalRefinement out;
  {
    // The associations only choose indices, so no gradient flows through them.
    NoGradGuard no_grad;
    const auto s_rgb = sp::generate(f_rgb, geo, spec, params.sp_rgb, iters).A;
    const auto s_depth = sp::generate(f_depth, geo, spec, params.sp_depth, iters).A;
    out.s_rd = combine_associations(s_rgb, s_depth);
    out.selected = select_local(out.s_rd, params.k);
  }

  const auto q = gather_rows(params.q_rgb(f_rgb), out.selected);
  const auto kd = gather_rows(params.k_depth(f_depth), out.selected);
  const auto v_rgb = gather_rows(params.v_rgb(f_rgb), out.selected);
  const auto v_depth = gather_rows(params.v_depth(f_depth), out.selected);

  out.f_att = softmax(affine(matmul(q, transpose_last(kd)), scale), 2);
  out.refined_rgb = scatter_mean(N, matmul(out.f_att, v_rgb), out.selected);
  out.refined_depth = scatter_mean(N, matmul(out.f_att, v_depth), out.selected);
  out.output = ffn_block(params.ffn_rgb, out.refined_rgb + f_rgb) +
               ffn_block(params.ffn_depth, out.refined_depth + f_depth);
  return out;
}

inline Tensor forward(const Tensor& f_rgb, const Tensor& f_depth, const Params& params,
                      const sp::GridGeometry& geo, const sp::NeighborhoodSpec& spec, std::size_t iters) {
  return refine(f_rgb, f_depth, params, geo, spec, iters).output;
}

/// Executed flops; the local attention terms scale as M * k^2 * C.
inline FlopCount flops(const sp::GridGeometry& geo, std::size_t C, std::size_t k,
                       const sp::NeighborhoodSpec& spec = {}, std::size_t iters = 2) {
  const std::uint64_t N = geo.N(), M = geo.M(), c = C, kk = k;
  FlopCount out;
  const auto gen = sp::flops(geo, C, spec, iters);
  out.merge(gen, "sp_rgb.");
  out.merge(gen, "sp_depth.");
  out.add("combine", N * M);
  out.add("embed", 4 * matmul_flops(N, c, c));
  out.add("q_kt", M * matmul_flops(kk, c, kk), true);
  out.add("fatt_v_rgb", M * matmul_flops(kk, kk, c), true);
  out.add("fatt_v_depth", M * matmul_flops(kk, kk, c), true);
  const std::uint64_t ffn = matmul_flops(N, c, Mlp::kExpansion * c) + matmul_flops(N, Mlp::kExpansion * c, c);
  out.add("ffn_rgb", ffn);
  out.add("ffn_depth", ffn);
  return out;
}

}  // namespace stenet::salrm
