#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stenet/ops.hpp"

namespace stenet {

/// Named trainable leaves, in a stable traversal order.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

inline std::size_t param_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

inline void zero_grads(ParamList& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

/// Overwrites every parameter with zeros.
inline void zero_fill(ParamList params) {
  for (auto& [name, t] : params) {
    for (auto& v : t.mutable_data()) v = 0.0;
  }
}

/// Fully connected layer y = x W + b with W[in, out]; Xavier weights and
/// zero bias at init.
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    return {Tensor::xavier({in, out}, in, out, rng), Tensor::zeros({out}, true)};
  }

  std::size_t in_features() const { return weight.size(0); }
  std::size_t out_features() const { return weight.size(1); }

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }

  void collect(ParamList& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }

  /// Deep copy with independent storage.
  Linear clone() const { return {weight.detach(true), bias.detach(true)}; }
};

/// Two-layer perceptron C -> 4C -> C with GELU.
struct Mlp {
  Linear fc1;
  Linear fc2;

  static constexpr std::size_t kExpansion = 4;

  static Mlp init(std::size_t channels, Rng& rng) {
    auto fc1 = Linear::init(channels, kExpansion * channels, rng);
    auto fc2 = Linear::init(kExpansion * channels, channels, rng);
    return {std::move(fc1), std::move(fc2)};
  }

  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

  void collect(ParamList& out, const std::string& prefix) const {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

/// Residual feed-forward block x + Mlp(x). With zeroed weights it is the
/// identity map.
inline Tensor ffn_block(const Mlp& mlp, const Tensor& x) { return x + mlp(x); }

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  static LayerNormParams init(std::size_t channels) {
    return {Tensor::full({channels}, 1.0, true), Tensor::zeros({channels}, true)};
  }

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, 1e-5); }

  void collect(ParamList& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

}  // namespace stenet
