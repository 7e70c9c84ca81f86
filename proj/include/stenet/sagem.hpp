#pragma once

#include <cmath>
#include <string>

#include "stenet/superpixel.hpp"

// Global cross-modal enhancement through superpixel tokens. Each modality's
// superpixels attend over all pixels (M x HW), the two maps are multiplied
// into a shared map, values are aggregated per superpixel and redistributed
// to pixels by a pixel-query / superpixel-key map (HW x M).

namespace stenet::sagem {

namespace sp = stenet::superpixel;

struct Params {
  sp::Params sp_rgb, sp_depth;
  Linear q_rgb, k_rgb, v_rgb;
  Linear q_depth, k_depth, v_depth;
  Linear qs_rgb, ks_rgb;
  Linear qs_depth, ks_depth;
  Mlp ffn;

  static Params init(std::size_t C, Rng& rng) {
    Params p;
    p.sp_rgb = sp::Params::init(C, rng);
    p.sp_depth = sp::Params::init(C, rng);
    p.q_rgb = Linear::init(C, C, rng);
    p.k_rgb = Linear::init(C, C, rng);
    p.v_rgb = Linear::init(C, C, rng);
    p.q_depth = Linear::init(C, C, rng);
    p.k_depth = Linear::init(C, C, rng);
    p.v_depth = Linear::init(C, C, rng);
    p.qs_rgb = Linear::init(C, C, rng);
    p.ks_rgb = Linear::init(C, C, rng);
    p.qs_depth = Linear::init(C, C, rng);
    p.ks_depth = Linear::init(C, C, rng);
    p.ffn = Mlp::init(C, rng);
    return p;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    sp_rgb.collect(out, prefix + ".sp_rgb");
    sp_depth.collect(out, prefix + ".sp_depth");
    q_rgb.collect(out, prefix + ".q_rgb");
    k_rgb.collect(out, prefix + ".k_rgb");
    v_rgb.collect(out, prefix + ".v_rgb");
    q_depth.collect(out, prefix + ".q_depth");
    k_depth.collect(out, prefix + ".k_depth");
    v_depth.collect(out, prefix + ".v_depth");
    qs_rgb.collect(out, prefix + ".qs_rgb");
    ks_rgb.collect(out, prefix + ".ks_rgb");
    qs_depth.collect(out, prefix + ".qs_depth");
    ks_depth.collect(out, prefix + ".ks_depth");
    ffn.collect(out, prefix + ".ffn");
  }
};

/// Intermediate maps of one forward pass.
struct GlobalAttentionBundle {
  Tensor A_rgb, A_depth;  // [M, HW], rows sum to 1
  Tensor A_att;           // [M, HW], A_rgb * A_depth
  Tensor P_rgb, P_depth;  // [HW, M], rows sum to 1
  Tensor V_rgb, V_depth;  // [HW, C]
};

inline GlobalAttentionBundle global_maps(const Tensor& f_rgb, const Tensor& f_depth, const Params& params,
                                         const sp::GridGeometry& geo, const sp::NeighborhoodSpec& spec,
                                         std::size_t iters) {
  if (f_rgb.shape() != f_depth.shape() || f_rgb.dim() != 2 || f_rgb.size(0) != geo.N()) {
    throw ShapeError("sagem: features " + to_string(f_rgb.shape()) + " / " +
                     to_string(f_depth.shape()) + " do not match HW = " + std::to_string(geo.N()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(f_rgb.size(1)));

  const auto s_rgb = sp::generate(f_rgb, geo, spec, params.sp_rgb, iters).S;
  const auto s_depth = sp::generate(f_depth, geo, spec, params.sp_depth, iters).S;

  GlobalAttentionBundle out;
  out.A_rgb = softmax(affine(matmul(params.qs_rgb(s_rgb), transpose_last(params.k_rgb(f_rgb))), scale), 1);
  out.A_depth =
      softmax(affine(matmul(params.qs_depth(s_depth), transpose_last(params.k_depth(f_depth))), scale), 1);
  out.A_att = out.A_rgb * out.A_depth;
  out.P_rgb = softmax(affine(matmul(params.q_rgb(f_rgb), transpose_last(params.ks_rgb(s_rgb))), scale), 1);
  out.P_depth =
      softmax(affine(matmul(params.q_depth(f_depth), transpose_last(params.ks_depth(s_depth))), scale), 1);
  out.V_rgb = params.v_rgb(f_rgb);
  out.V_depth = params.v_depth(f_depth);
  return out;
}

/// f~ = P_rgb (A_att V_rgb) + P_depth (A_att V_depth), then f~ + FFN(f~).
inline Tensor forward(const Tensor& f_rgb, const Tensor& f_depth, const Params& params,
                      const sp::GridGeometry& geo, const sp::NeighborhoodSpec& spec, std::size_t iters) {
  const auto g = global_maps(f_rgb, f_depth, params, geo, spec, iters);
  const auto fused = matmul(g.P_rgb, matmul(g.A_att, g.V_rgb)) + matmul(g.P_depth, matmul(g.A_att, g.V_depth));
  return ffn_block(params.ffn, fused);
}

/// Executed flops. Terms flagged as attention scale with M; the dense
/// hypothetical replaces the M superpixel tokens by all HW pixels.
inline FlopCount flops(const sp::GridGeometry& geo, std::size_t C, const sp::NeighborhoodSpec& spec = {},
                       std::size_t iters = 2) {
  const std::uint64_t HW = geo.N(), M = geo.M(), c = C;
  FlopCount out;
  const auto gen = sp::flops(geo, C, spec, iters);
  out.merge(gen, "sp_rgb.");
  out.merge(gen, "sp_depth.");
  out.add("embed_pixels", 6 * matmul_flops(HW, c, c));
  out.add("embed_superpixels", 4 * matmul_flops(M, c, c));
  for (const char* mod : {"rgb", "depth"}) {
    const std::string m = mod;
    out.add("qs_kt_" + m, matmul_flops(M, c, HW), true);
    out.add("q_kst_" + m, matmul_flops(HW, c, M), true);
    out.add("aatt_v_" + m, matmul_flops(M, HW, c), true);
    out.add("p_remap_" + m, matmul_flops(HW, M, c), true);
  }
  out.add("shared_map", M * HW, true);
  out.add("ffn", matmul_flops(HW, c, Mlp::kExpansion * c) + matmul_flops(HW, Mlp::kExpansion * c, c));
  out.add_dense(2 * (2 * matmul_flops(HW, c, HW) + 2 * matmul_flops(HW, HW, c)) + HW * HW);
  return out;
}

}  // namespace stenet::sagem
