#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "stenet/loss.hpp"
#include "stenet/sagem.hpp"
#include "stenet/saliency.hpp"
#include "stenet/salrm.hpp"

// Two-stream encoder -> per-stage global (SAGEM) and local (SALRM) branches
// -> coarse-to-fine fusion -> decoder with a saliency head per block.

namespace stenet::network {

namespace sp = stenet::superpixel;

inline constexpr std::size_t kStages = 4;

struct ModelConfig {
  std::size_t input_size = 64;
  std::array<std::size_t, kStages> channels{32, 64, 128, 256};
  std::array<std::size_t, kStages> cells{2, 2, 1, 1};
  std::size_t mask_radius = 2;
  std::size_t iters = 2;
  std::size_t salrm_k = 9;
  std::uint64_t seed = 1;

  /// Smallest configuration whose four stages all exist (sides 8, 4, 2, 1).
  static ModelConfig tiny() {
    ModelConfig c;
    c.input_size = 32;
    c.channels = {4, 8, 16, 32};
    return c;
  }

  /// Feature side of stage i (0-based): input / 4, / 8, / 16, / 32.
  std::size_t side(std::size_t i) const { return input_size >> (i + 2); }
  Extent extent(std::size_t i) const { return {side(i), side(i)}; }

  sp::GridGeometry geometry(std::size_t i) const { return sp::GridGeometry::make(side(i), side(i), cells[i]); }
  sp::NeighborhoodSpec neighborhood() const { return {mask_radius, 9, 0}; }

  /// SALRM pixels per superpixel at stage i, clamped to the pixel count.
  std::size_t local_k(std::size_t i) const { return std::min(salrm_k, side(i) * side(i)); }

  void validate() const {
    if (input_size == 0 || input_size % 32 != 0) {
      throw std::invalid_argument("input_size must be a positive multiple of 32");
    }
    for (std::size_t i = 0; i < kStages; ++i) {
      if (channels[i] == 0) throw std::invalid_argument("channel counts must be positive");
      if (cells[i] == 0 || side(i) % cells[i] != 0) {
        throw std::invalid_argument("cell " + std::to_string(cells[i]) + " does not divide stage " +
                                    std::to_string(i + 1) + " side " + std::to_string(side(i)));
      }
    }
    if (mask_radius < 1 || mask_radius > 3) throw std::invalid_argument("mask_radius must be 1, 2 or 3");
    if (salrm_k == 0) throw std::invalid_argument("salrm_k must be >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct EncoderStage {
  Tensor weight;  // [k*k*Cin, Cout]
  Tensor bias;    // [Cout]
  LayerNormParams norm;
  std::size_t kernel = 2;
};

using Encoder = std::array<EncoderStage, kStages>;

struct FusionParams {
  Linear proj;                 // 2C -> C
  Linear q, k, v;              // C -> C
  std::optional<Linear> cross; // C_{i+1} -> C_i, absent at the coarsest stage
};

struct DecoderParams {
  Tensor dw_weight;  // [25, C]
  Tensor dw_bias;    // [C]
  LayerNormParams norm;
  Linear pw1;        // C -> 4C
  Linear pw2;        // 4C -> C
  LayerNormParams head_norm;
  Linear head;       // C -> 1, applied to head_norm(block output)
  std::optional<Linear> in_proj;  // C_{i+1} -> C_i, absent at the coarsest stage
};

struct StageParams {
  sagem::Params sagem;
  salrm::Params salrm;
  FusionParams fusion;
  DecoderParams decoder;
};

struct NetworkParams {
  Encoder rgb;
  Encoder depth;
  std::array<StageParams, kStages> stages;

  static NetworkParams init(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    NetworkParams p;
    p.rgb = init_encoder(cfg, rng);
    p.depth = init_encoder(cfg, rng);
    for (std::size_t i = 0; i < kStages; ++i) {
      const std::size_t C = cfg.channels[i];
      auto& s = p.stages[i];
      s.sagem = sagem::Params::init(C, rng);
      s.salrm = salrm::Params::init(C, rng, cfg.local_k(i));
      s.fusion.proj = Linear::init(2 * C, C, rng);
      s.fusion.q = Linear::init(C, C, rng);
      s.fusion.k = Linear::init(C, C, rng);
      s.fusion.v = Linear::init(C, C, rng);
      if (i + 1 < kStages) s.fusion.cross = Linear::init(cfg.channels[i + 1], C, rng);
      s.decoder.dw_weight = Tensor::xavier({25, C}, 25, 25, rng);
      s.decoder.dw_bias = Tensor::zeros({C}, true);
      s.decoder.norm = LayerNormParams::init(C);
      s.decoder.pw1 = Linear::init(C, Mlp::kExpansion * C, rng);
      s.decoder.pw2 = Linear::init(Mlp::kExpansion * C, C, rng);
      s.decoder.head_norm = LayerNormParams::init(C);
      s.decoder.head = Linear::init(C, 1, rng);
      if (i + 1 < kStages) s.decoder.in_proj = Linear::init(cfg.channels[i + 1], C, rng);
    }
    return p;
  }

  ParamList parameters() const {
    ParamList out;
    collect_encoder(rgb, out, "enc_rgb");
    collect_encoder(depth, out, "enc_depth");
    for (std::size_t i = 0; i < kStages; ++i) {
      const auto& s = stages[i];
      const std::string pre = "stage" + std::to_string(i + 1);
      s.sagem.collect(out, pre + ".sagem");
      s.salrm.collect(out, pre + ".salrm");
      s.fusion.proj.collect(out, pre + ".fusion.proj");
      s.fusion.q.collect(out, pre + ".fusion.q");
      s.fusion.k.collect(out, pre + ".fusion.k");
      s.fusion.v.collect(out, pre + ".fusion.v");
      if (s.fusion.cross) s.fusion.cross->collect(out, pre + ".fusion.cross");
      out.emplace_back(pre + ".decoder.dw_weight", s.decoder.dw_weight);
      out.emplace_back(pre + ".decoder.dw_bias", s.decoder.dw_bias);
      s.decoder.norm.collect(out, pre + ".decoder.norm");
      s.decoder.pw1.collect(out, pre + ".decoder.pw1");
      s.decoder.pw2.collect(out, pre + ".decoder.pw2");
      s.decoder.head_norm.collect(out, pre + ".decoder.head_norm");
      s.decoder.head.collect(out, pre + ".decoder.head");
      if (s.decoder.in_proj) s.decoder.in_proj->collect(out, pre + ".decoder.in_proj");
    }
    return out;
  }

  ParamList encoder_parameters() const {
    ParamList out;
    collect_encoder(rgb, out, "enc_rgb");
    collect_encoder(depth, out, "enc_depth");
    return out;
  }

 private:
  static Encoder init_encoder(const ModelConfig& cfg, Rng& rng) {
    Encoder enc;
    std::size_t in = 3;
    for (std::size_t i = 0; i < kStages; ++i) {
      const std::size_t k = i == 0 ? 4 : 2, out = cfg.channels[i];
      enc[i].kernel = k;
      enc[i].weight = Tensor::xavier({k * k * in, out}, k * k * in, out, rng);
      enc[i].bias = Tensor::zeros({out}, true);
      enc[i].norm = LayerNormParams::init(out);
      in = out;
    }
    return enc;
  }

  static void collect_encoder(const Encoder& enc, ParamList& out, const std::string& prefix) {
    for (std::size_t i = 0; i < kStages; ++i) {
      const std::string pre = prefix + ".stage" + std::to_string(i + 1);
      out.emplace_back(pre + ".weight", enc[i].weight);
      out.emplace_back(pre + ".bias", enc[i].bias);
      enc[i].norm.collect(out, pre + ".norm");
    }
  }
};

/// Closed-form parameter count of one encoder stream.
inline std::size_t encoder_param_count(const ModelConfig& cfg) {
  std::size_t n = 0, in = 3;
  for (std::size_t i = 0; i < kStages; ++i) {
    const std::size_t k = i == 0 ? 4 : 2, out = cfg.channels[i];
    n += k * k * in * out + out + 2 * out;
    in = out;
  }
  return n;
}

struct StageFeatures {
  std::array<Tensor, kStages> rgb;    // [side_i^2, C_i]
  std::array<Tensor, kStages> depth;
};

inline std::array<Tensor, kStages> encode_stream(const Tensor& x_hwc, const Encoder& enc, std::size_t input_size) {
  std::array<Tensor, kStages> out;
  Tensor x = x_hwc;
  Extent ext{input_size, input_size};
  for (std::size_t i = 0; i < kStages; ++i) {
    x = enc[i].norm(strided_conv(x, ext, enc[i].weight, enc[i].bias, enc[i].kernel));
    ext = {ext.h / enc[i].kernel, ext.w / enc[i].kernel};
    out[i] = x;
  }
  return out;
}

/// rgb[3, H, W], depth[1, H, W] with H = W = input_size. Depth is replicated
/// to three channels before its own encoder.
inline StageFeatures toy_encode(const Tensor& rgb, const Tensor& depth, const NetworkParams& params,
                                const ModelConfig& cfg) {
  const Shape rgb_shape{3, cfg.input_size, cfg.input_size}, depth_shape{1, cfg.input_size, cfg.input_size};
  if (rgb.shape() != rgb_shape || depth.shape() != depth_shape) {
    throw ShapeError("toy_encode: expected rgb " + to_string(rgb_shape) + " and depth " + to_string(depth_shape) +
                     ", got " + to_string(rgb.shape()) + " and " + to_string(depth.shape()));
  }
  const auto d = chw_to_hwc(depth);
  StageFeatures f;
  f.rgb = encode_stream(chw_to_hwc(rgb), params.rgb, cfg.input_size);
  f.depth = encode_stream(concat({d, d, d}, 1), params.depth, cfg.input_size);
  return f;
}

/// Concatenate global and local features, project 2C -> C, add the coarser
/// stage (already upsampled and projected) when present, then residual
/// single-head pixel self-attention.
inline Tensor fuse_stage(const Tensor& global, const Tensor& local, const std::optional<Tensor>& coarser,
                         const FusionParams& params) {
  if (global.shape() != local.shape()) {
    throw ShapeError("fuse_stage: " + to_string(global.shape()) + " vs " + to_string(local.shape()));
  }
  auto x = params.proj(concat({global, local}, 1));
  if (coarser) {
    if (coarser->shape() != x.shape()) {
      throw ShapeError("fuse_stage: coarser feature " + to_string(coarser->shape()) + " vs " + to_string(x.shape()));
    }
    x = x + *coarser;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.size(1)));
  const auto attn = softmax(affine(matmul(params.q(x), transpose_last(params.k(x))), scale), 1);
  return x + matmul(attn, params.v(x));
}

/// One decoder block: depthwise 5x5 -> layer norm -> pointwise -> GELU ->
/// pointwise, residual, 2x upsample.
inline Tensor decoder_block(const Tensor& x, Extent ext, const DecoderParams& p) {
  const auto h = p.pw2(gelu(p.pw1(p.norm(depthwise_conv5x5(x, ext, p.dw_weight, p.dw_bias)))));
  return upsample_bilinear_x2(x + h, ext);
}

/// Coarse-to-fine decoding of the four fused stages (finest first in
/// `fused`). Every block feeds a layer norm and a 1x1 head whose logits are
/// upsampled to the input size and squashed.
inline SaliencyOutput decode(const std::array<Tensor, kStages>& fused, const NetworkParams& params,
                             const ModelConfig& cfg) {
  SaliencyOutput out;
  std::optional<Tensor> prev;
  for (std::size_t s = kStages; s-- > 0;) {
    const auto& dp = params.stages[s].decoder;
    Tensor x = fused[s];
    if (prev) x = x + (*dp.in_proj)(*prev);
    const auto y = decoder_block(x, cfg.extent(s), dp);
    Extent ext{2 * cfg.side(s), 2 * cfg.side(s)};
    auto logits = dp.head(dp.head_norm(y));
    while (ext.h < cfg.input_size) {
      logits = upsample_bilinear_x2(logits, ext);
      ext = {2 * ext.h, 2 * ext.w};
    }
    out.maps[s] = reshape(sigmoid(logits), {cfg.input_size, cfg.input_size});
    prev = y;
  }
  return out;
}

/// Every intermediate of a forward pass.
struct ForwardTrace {
  StageFeatures features;
  std::array<Tensor, kStages> global;  // SAGEM outputs
  std::array<Tensor, kStages> local;   // SALRM outputs
  std::array<Tensor, kStages> fused;
  SaliencyOutput output;
};

inline ForwardTrace trace_forward(const Tensor& rgb, const Tensor& depth, const NetworkParams& params,
                                  const ModelConfig& cfg) {
  cfg.validate();
  ForwardTrace t;
  t.features = toy_encode(rgb, depth, params, cfg);
  const auto spec = cfg.neighborhood();
  for (std::size_t i = 0; i < kStages; ++i) {
    const auto geo = cfg.geometry(i);
    const auto& sp = params.stages[i];
    t.global[i] = sagem::forward(t.features.rgb[i], t.features.depth[i], sp.sagem, geo, spec, cfg.iters);
    t.local[i] = salrm::forward(t.features.rgb[i], t.features.depth[i], sp.salrm, geo, spec, cfg.iters);
  }
  for (std::size_t s = kStages; s-- > 0;) {
    std::optional<Tensor> coarser;
    if (s + 1 < kStages) {
      coarser = (*params.stages[s].fusion.cross)(upsample_bilinear_x2(t.fused[s + 1], cfg.extent(s + 1)));
    }
    t.fused[s] = fuse_stage(t.global[s], t.local[s], coarser, params.stages[s].fusion);
  }
  t.output = decode(t.fused, params, cfg);
  return t;
}

inline SaliencyOutput forward(const Tensor& rgb, const Tensor& depth, const NetworkParams& params,
                              const ModelConfig& cfg) {
  return trace_forward(rgb, depth, params, cfg).output;
}

struct StageFlops {
  FlopCount encoder;  // both streams
  FlopCount sagem;
  FlopCount salrm;
  FlopCount fusion;
  FlopCount decoder;

  std::uint64_t total() const {
    return encoder.total() + sagem.total() + salrm.total() + fusion.total() + decoder.total();
  }
};

struct FlopReport {
  std::array<StageFlops, kStages> stages;

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& s : stages) t += s.total();
    return t;
  }

  /// Total with every SAGEM attention product evaluated pixel-to-pixel.
  std::uint64_t dense_total() const {
    std::uint64_t t = total();
    for (const auto& s : stages) t = t - s.sagem.attention() + s.sagem.dense_attention();
    return t;
  }
};

/// Executed flops of `forward` under the counting convention of FlopCount.
inline FlopReport count_flops(const ModelConfig& cfg) {
  cfg.validate();
  FlopReport r;
  const auto spec = cfg.neighborhood();
  std::uint64_t in = 3;
  for (std::size_t i = 0; i < kStages; ++i) {
    auto& s = r.stages[i];
    const std::uint64_t C = cfg.channels[i], N = cfg.side(i) * cfg.side(i), k = i == 0 ? 4 : 2;
    s.encoder.add("conv_rgb", matmul_flops(N, k * k * in, C));
    s.encoder.add("conv_depth", matmul_flops(N, k * k * in, C));
    in = C;

    const auto geo = cfg.geometry(i);
    s.sagem = sagem::flops(geo, C, spec, cfg.iters);
    s.salrm = salrm::flops(geo, C, cfg.local_k(i), spec, cfg.iters);

    s.fusion.add("proj", matmul_flops(N, 2 * C, C));
    if (i + 1 < kStages) s.fusion.add("cross", matmul_flops(N, cfg.channels[i + 1], C));
    s.fusion.add("qkv", 3 * matmul_flops(N, C, C));
    s.fusion.add("q_kt", matmul_flops(N, C, N));
    s.fusion.add("attn_v", matmul_flops(N, N, C));

    if (i + 1 < kStages) s.decoder.add("in_proj", matmul_flops(N, cfg.channels[i + 1], C));
    s.decoder.add("depthwise", 2 * 25 * N * C);
    s.decoder.add("pw1", matmul_flops(N, C, Mlp::kExpansion * C));
    s.decoder.add("pw2", matmul_flops(N, Mlp::kExpansion * C, C));
    s.decoder.add("head", matmul_flops(4 * N, C, 1));
  }
  return r;
}

/// Adam over a parameter list; used for the smoke-test fit.
class Adam {
 public:
  explicit Adam(ParamList params, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params_) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
      auto& t = params_[p].second;
      if (!t.has_grad()) continue;
      auto g = t.grad();
      auto w = t.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m_[p][i] = b1_ * m_[p][i] + (1.0 - b1_) * g[i];
        v_[p][i] = b2_ * v_[p][i] + (1.0 - b2_) * g[i] * g[i];
        w[i] -= lr_ * (m_[p][i] / c1) / (std::sqrt(v_[p][i] / c2) + eps_);
      }
    }
  }

  void zero_grad() { zero_grads(params_); }

 private:
  ParamList params_;
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace stenet::network
