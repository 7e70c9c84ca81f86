#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "stenet/gradcheck.hpp"
#include "stenet/network.hpp"

// Finite-difference checks of each module at desk size. Every check builds
// a scalar by contracting the module outputs against fixed random weights,
// so all output coordinates contribute.

namespace stenet::checks {

namespace sp = stenet::superpixel;

inline const std::vector<std::string>& module_names() {
  static const std::vector<std::string> names{"superpixel", "sagem", "salrm", "loss", "network"};
  return names;
}

/// Coordinates sampled per parameter tensor in the full-network check.
inline constexpr std::size_t kNetworkCoordsPerParam = 12;


inline double module_threshold(const std::string& module) { return module == "network" ? 1e-3 : 1e-4; }

namespace detail {

inline Tensor leaf(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(std::move(shape), rng, lo, hi, true);
}

inline Tensor probe(Rng& rng, const Shape& shape) { return Tensor::uniform(shape, rng, -1.0, 1.0); }

inline Tensor contract(const Tensor& x, const Tensor& w) { return sum(x * w); }

inline GradCheckReport superpixel_check(Rng& rng, double eps) {
  // 6 x 6 single-pixel cells: both top-k prunings are active.
  const auto geo = sp::GridGeometry::make(6, 6, 1);
  const sp::NeighborhoodSpec spec{};
  const std::size_t C = 3;
  const auto pixels = leaf(rng, {geo.N(), C});
  const auto params = sp::Params::init(C, rng);
  const auto ws = probe(rng, {geo.M(), C}), wp = probe(rng, {geo.N(), C}), wa = probe(rng, {geo.N(), geo.M()});
  ParamList list{{"pixels", pixels}};
  params.collect(list, "sp");
  return gradcheck(
      [&] {
        const auto st = sp::generate(pixels, geo, spec, params, 2);
        return contract(st.S, ws) + contract(st.P, wp) + contract(st.A, wa);
      },
      list, eps);
}

inline GradCheckReport sagem_check(Rng& rng, double eps) {
  const auto geo = sp::GridGeometry::make(4, 4, 2);
  const sp::NeighborhoodSpec spec{};
  const std::size_t C = 3;
  const auto f_rgb = leaf(rng, {geo.N(), C}), f_depth = leaf(rng, {geo.N(), C});
  const auto params = sagem::Params::init(C, rng);
  const auto w = probe(rng, {geo.N(), C});
  ParamList list{{"f_rgb", f_rgb}, {"f_depth", f_depth}};
  params.collect(list, "sagem");
  return gradcheck([&] { return contract(sagem::forward(f_rgb, f_depth, params, geo, spec, 2), w); }, list, eps);
}

inline GradCheckReport salrm_check(Rng& rng, double eps) {
  const auto geo = sp::GridGeometry::make(4, 4, 2);
  const sp::NeighborhoodSpec spec{};
  const std::size_t C = 3;
  const auto f_rgb = leaf(rng, {geo.N(), C}), f_depth = leaf(rng, {geo.N(), C});
  const auto params = salrm::Params::init(C, rng, 4);
  const auto w = probe(rng, {geo.N(), C});
  ParamList list{{"f_rgb", f_rgb}, {"f_depth", f_depth}};
  params.collect(list, "salrm");
  return gradcheck([&] { return contract(salrm::forward(f_rgb, f_depth, params, geo, spec, 2), w); }, list, eps);
}

inline GradCheckReport loss_check(Rng& rng, double eps) {
  const auto logits = leaf(rng, {6, 6}, -3.0, 3.0);
  std::vector<double> g(36);
  for (auto& v : g) v = static_cast<double>(rng.below(2));
  const Tensor gt({6, 6}, g);
  return gradcheck([&] { return loss::hybrid_loss(sigmoid(logits), gt).total; }, {{"logits", logits}}, eps);
}

inline GradCheckReport network_check(Rng& rng, double eps) {
  auto cfg = network::ModelConfig::tiny();
  cfg.seed = rng.next_u64();
  const auto params = network::NetworkParams::init(cfg);
  const std::size_t S = cfg.input_size;
  const Tensor rgb({3, S, S}, uniform_vector(rng, 3 * S * S, 0.0, 1.0));
  const Tensor depth({1, S, S}, uniform_vector(rng, S * S, 0.0, 1.0));
  std::vector<double> g(S * S);
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) g[y * S + x] = (y >= S / 4 && y < 3 * S / 4 && x >= S / 4 && x < 3 * S / 4);
  }
  const Tensor gt({S, S}, g);
  GradCheckOptions opt;
  opt.eps = eps;
  opt.max_coords_per_param = kNetworkCoordsPerParam;
  opt.seed = rng.next_u64();
  return gradcheck(
      [&] { return loss::deep_supervision(network::forward(rgb, depth, params, cfg), gt).grand_total; },
      params.parameters(), opt);
}

}  // namespace detail

/// Runs the named module's check; throws std::invalid_argument for an
/// unknown name.
inline GradCheckReport check_module(const std::string& module, std::uint64_t seed, double eps = 1e-5) {
  Rng rng(seed);
  if (module == "superpixel") return detail::superpixel_check(rng, eps);
  if (module == "sagem") return detail::sagem_check(rng, eps);
  if (module == "salrm") return detail::salrm_check(rng, eps);
  if (module == "loss") return detail::loss_check(rng, eps);
  if (module == "network") return detail::network_check(rng, eps);
  throw std::invalid_argument("unknown module '" + module + "'");
}

}  // namespace stenet::checks
