#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stenet/network.hpp"
#include "stenet/oracle.hpp"

// Seeded randomized comparisons of the production modules against the
// reference implementations in oracle.hpp.

namespace stenet::suites {

namespace o = stenet::oracle;
namespace sp = stenet::superpixel;

// ------------------------------------------------------------ conversions

inline o::Mat to_mat(const Tensor& t) {
  if (t.dim() != 2) throw ShapeError("to_mat: expected a matrix, got " + to_string(t.shape()));
  return o::Mat(t.size(0), t.size(1), t.to_vector());
}

inline o::Dense to_dense(const Linear& l) {
  return {l.in_features(), l.out_features(), l.weight.to_vector(),
          l.bias.defined() ? l.bias.to_vector() : std::vector<double>{}};
}

inline o::SpWeights to_oracle(const sp::Params& p) {
  return {to_dense(p.q_pix), to_dense(p.k_pix), to_dense(p.v_pix),
          to_dense(p.q_sp), to_dense(p.k_sp), to_dense(p.v_sp)};
}

inline o::SagemWeights to_oracle(const sagem::Params& p) {
  o::SagemWeights w;
  w.sp_rgb = to_oracle(p.sp_rgb);
  w.sp_depth = to_oracle(p.sp_depth);
  w.q_rgb = to_dense(p.q_rgb);
  w.k_rgb = to_dense(p.k_rgb);
  w.v_rgb = to_dense(p.v_rgb);
  w.q_depth = to_dense(p.q_depth);
  w.k_depth = to_dense(p.k_depth);
  w.v_depth = to_dense(p.v_depth);
  w.qs_rgb = to_dense(p.qs_rgb);
  w.ks_rgb = to_dense(p.ks_rgb);
  w.qs_depth = to_dense(p.qs_depth);
  w.ks_depth = to_dense(p.ks_depth);
  w.ffn1 = to_dense(p.ffn.fc1);
  w.ffn2 = to_dense(p.ffn.fc2);
  return w;
}

inline o::SalrmWeights to_oracle(const salrm::Params& p) {
  o::SalrmWeights w;
  w.sp_rgb = to_oracle(p.sp_rgb);
  w.sp_depth = to_oracle(p.sp_depth);
  w.q_rgb = to_dense(p.q_rgb);
  w.k_depth = to_dense(p.k_depth);
  w.v_rgb = to_dense(p.v_rgb);
  w.v_depth = to_dense(p.v_depth);
  w.ffn_rgb1 = to_dense(p.ffn_rgb.fc1);
  w.ffn_rgb2 = to_dense(p.ffn_rgb.fc2);
  w.ffn_depth1 = to_dense(p.ffn_depth.fc1);
  w.ffn_depth2 = to_dense(p.ffn_depth.fc2);
  w.k = p.k;
  return w;
}

inline o::NetWeights to_oracle(const network::NetworkParams& p, const network::ModelConfig& cfg) {
  o::NetWeights w;
  w.input_size = cfg.input_size;
  w.radius = cfg.mask_radius;
  w.iters = cfg.iters;
  w.channels = cfg.channels;
  w.cells = cfg.cells;
  for (std::size_t i = 0; i < network::kStages; ++i) {
    for (int stream = 0; stream < 2; ++stream) {
      const auto& e = (stream == 0 ? p.rgb : p.depth)[i];
      auto& ew = (stream == 0 ? w.enc_rgb : w.enc_depth)[i];
      ew.kernel = e.kernel;
      ew.cout = e.weight.size(1);
      ew.cin = e.weight.size(0) / (e.kernel * e.kernel);
      ew.w = e.weight.to_vector();
      ew.b = e.bias.to_vector();
      ew.gamma = e.norm.gamma.to_vector();
      ew.beta = e.norm.beta.to_vector();
    }
    const auto& s = p.stages[i];
    w.sagem[i] = to_oracle(s.sagem);
    w.salrm[i] = to_oracle(s.salrm);
    auto& f = w.fusion[i];
    f.proj = to_dense(s.fusion.proj);
    f.q = to_dense(s.fusion.q);
    f.k = to_dense(s.fusion.k);
    f.v = to_dense(s.fusion.v);
    f.has_cross = s.fusion.cross.has_value();
    if (f.has_cross) f.cross = to_dense(*s.fusion.cross);
    auto& d = w.decoder[i];
    d.dw = s.decoder.dw_weight.to_vector();
    d.dw_bias = s.decoder.dw_bias.to_vector();
    d.gamma = s.decoder.norm.gamma.to_vector();
    d.beta = s.decoder.norm.beta.to_vector();
    d.pw1 = to_dense(s.decoder.pw1);
    d.pw2 = to_dense(s.decoder.pw2);
    d.head_gamma = s.decoder.head_norm.gamma.to_vector();
    d.head_beta = s.decoder.head_norm.beta.to_vector();
    d.head = to_dense(s.decoder.head);
    d.has_in = s.decoder.in_proj.has_value();
    if (d.has_in) d.in_proj = to_dense(*s.decoder.in_proj);
  }
  return w;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor& a, const o::Mat& b) { return max_abs_diff(a.to_vector(), b.v); }

// ------------------------------------------------------------------ suites

struct SuiteResult {
  std::string suite;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest deviation seen
  double tolerance = 0.0;
  std::string first_failure;

  bool passed() const { return failures == 0; }
};

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"mask", "topk", "scatter", "sagem", "salrm", "forward"};
  return names;
}

inline double suite_tolerance(const std::string& suite) {
  if (suite == "mask") return 1e-10;
  if (suite == "topk") return 0.0;
  if (suite == "scatter") return 1e-12;
  if (suite == "sagem" || suite == "salrm") return 1e-9;
  if (suite == "forward") return 1e-8;
  throw std::invalid_argument("unknown oracle suite '" + suite + "'");
}

/// A random grid with at most `max_pixels` pixels.
struct RandomGrid {
  sp::GridGeometry geo;
  sp::NeighborhoodSpec spec;
  std::size_t channels = 0;
  std::size_t iters = 0;
};

inline RandomGrid random_grid(Rng& rng, std::size_t max_pixels = 256) {
  static constexpr std::size_t kCells[] = {1, 2, 4};
  RandomGrid g;
  for (;;) {
    const std::size_t p = kCells[rng.below(3)];
    const std::size_t gh = 1 + rng.below(6), gw = 1 + rng.below(6);
    if (gh * gw * p * p <= max_pixels && gh * gw * p * p >= 2) {
      g.geo = sp::GridGeometry::make(gh * p, gw * p, p);
      break;
    }
  }
  g.spec.radius_cells = 1 + rng.below(3);
  g.channels = 2 + rng.below(5);
  g.iters = 1 + rng.below(2);
  return g;
}

inline Tensor random_features(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal();
  return Tensor({rows, cols}, std::move(v));
}

inline o::SpGrid to_oracle(const sp::GridGeometry& geo, const sp::NeighborhoodSpec& spec) {
  return {geo.feature_h, geo.feature_w, geo.cell, spec.radius_cells, spec.pixel_topk, spec.superpixel_topk};
}

namespace detail {

/// Returns the deviation of one trial; throws std::logic_error on a
/// structural mismatch (index sets, shapes).
inline double mask_trial(Rng& rng) {
  const auto g = random_grid(rng);
  const auto masks = sp::build_masks(g.geo, g.spec);
  const auto window = o::window_membership(g.geo.feature_h, g.geo.feature_w, g.geo.cell, g.spec.radius_cells);
  const auto dense = masks.pixel_candidates.to_dense();
  for (std::size_t i = 0; i < window.size(); ++i) {
    if (window[i] != dense[i]) throw std::logic_error("candidate window differs from pairwise membership");
  }
  const auto pixels = random_features(rng, g.geo.N(), g.channels);
  const auto params = sp::Params::init(g.channels, rng);
  const auto got = sp::generate(pixels, g.geo, g.spec, params, g.iters);
  const auto want = o::superpixel_generate(to_mat(pixels), to_oracle(params), to_oracle(g.geo, g.spec), g.iters);
  return std::max({max_abs_diff(got.A, want.A), max_abs_diff(got.S, want.S), max_abs_diff(got.P, want.P)});
}

inline double topk_trial(Rng& rng) {
  const std::size_t rows = 1 + rng.below(12), cols = 1 + rng.below(24);
  // Few distinct values so ties are common.
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = static_cast<double>(rng.below(5));
  std::vector<std::vector<std::size_t>> cand(rows);
  for (auto& r : cand) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (rng.below(4) != 0) r.push_back(c);
    }
    if (r.empty()) r.push_back(rng.below(cols));
  }
  const int k = 1 + static_cast<int>(rng.below(cols + 2));
  const SparseMask mask(cols, cand);
  const auto got = topk_indices(Tensor({rows, cols}, v), k, mask);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> row(v.begin() + static_cast<long>(r * cols), v.begin() + static_cast<long>((r + 1) * cols));
    const auto want = o::sort_topk(row, cand[r], static_cast<std::size_t>(k));
    const auto have = got.row(r);
    if (!std::equal(have.begin(), have.end(), want.begin(), want.end())) {
      throw std::logic_error("top-k selection differs in row " + std::to_string(r));
    }
  }
  return 0.0;
}

inline double scatter_trial(Rng& rng) {
  const std::size_t n = 1 + rng.below(40), C = 1 + rng.below(6), M = 1 + rng.below(10);
  const std::size_t k = 1 + rng.below(std::min<std::size_t>(n, 9));
  std::vector<std::vector<std::size_t>> idx(M);
  for (auto& r : idx) {
    for (std::size_t j = 0; j < k; ++j) r.push_back(rng.below(n));
  }
  const IndexMatrix im(n, idx);
  const auto src = random_features(rng, n, C);
  const auto gathered = gather_rows(src, im);
  const auto want_g = o::loop_gather(to_mat(src), idx);
  std::vector<double> flat;
  for (const auto& m : want_g) flat.insert(flat.end(), m.v.begin(), m.v.end());
  double dev = max_abs_diff(gathered.to_vector(), flat);

  const auto values = Tensor({M, k, C}, random_features(rng, M * k, C).to_vector());
  std::vector<o::Mat> vals;
  for (std::size_t m = 0; m < M; ++m) {
    vals.emplace_back(k, C, std::vector<double>(values.data().begin() + static_cast<long>(m * k * C),
                                                 values.data().begin() + static_cast<long>((m + 1) * k * C)));
  }
  dev = std::max(dev, max_abs_diff(scatter_mean(n, values, im), o::loop_scatter_mean(n, vals, idx)));
  return dev;
}

inline double sagem_trial(Rng& rng) {
  const auto g = random_grid(rng);
  const auto f_rgb = random_features(rng, g.geo.N(), g.channels);
  const auto f_depth = random_features(rng, g.geo.N(), g.channels);
  const auto params = sagem::Params::init(g.channels, rng);
  const auto maps = sagem::global_maps(f_rgb, f_depth, params, g.geo, g.spec, g.iters);
  const auto out = sagem::forward(f_rgb, f_depth, params, g.geo, g.spec, g.iters);
  const auto want =
      o::sagem_stepwise(to_mat(f_rgb), to_mat(f_depth), to_oracle(params), to_oracle(g.geo, g.spec), g.iters);
  return std::max({max_abs_diff(maps.A_att, want.A_att), max_abs_diff(maps.P_rgb, want.P_rgb),
                   max_abs_diff(maps.P_depth, want.P_depth), max_abs_diff(out, want.output)});
}

inline double salrm_trial(Rng& rng) {
  const auto g = random_grid(rng);
  const std::size_t k = 1 + rng.below(std::min<std::size_t>(9, g.geo.N()));
  const auto f_rgb = random_features(rng, g.geo.N(), g.channels);
  const auto f_depth = random_features(rng, g.geo.N(), g.channels);
  const auto params = salrm::Params::init(g.channels, rng, k);
  const auto got = salrm::refine(f_rgb, f_depth, params, g.geo, g.spec, g.iters);
  const auto want =
      o::salrm_stepwise(to_mat(f_rgb), to_mat(f_depth), to_oracle(params), to_oracle(g.geo, g.spec), g.iters);
  for (std::size_t m = 0; m < want.selected.size(); ++m) {
    const auto have = got.selected.row(m);
    if (!std::equal(have.begin(), have.end(), want.selected[m].begin(), want.selected[m].end())) {
      throw std::logic_error("local selection differs for superpixel " + std::to_string(m));
    }
  }
  return std::max({max_abs_diff(got.s_rd, want.s_rd), max_abs_diff(got.refined_rgb, want.refined_rgb),
                   max_abs_diff(got.refined_depth, want.refined_depth), max_abs_diff(got.output, want.output)});
}

inline double forward_trial(Rng& rng) {
  auto cfg = network::ModelConfig::tiny();
  cfg.seed = rng.next_u64();
  cfg.mask_radius = 1 + rng.below(3);
  cfg.iters = 1 + rng.below(2);
  cfg.cells[0] = rng.below(2) ? 2 : 4;
  cfg.cells[1] = rng.below(2) ? 1 : 2;
  const auto params = network::NetworkParams::init(cfg);
  const std::size_t S = cfg.input_size;
  const auto rgb = Tensor({3, S, S}, uniform_vector(rng, 3 * S * S, 0.0, 1.0));
  const auto depth = Tensor({1, S, S}, uniform_vector(rng, S * S, 0.0, 1.0));
  NoGradGuard no_grad;
  const auto got = network::forward(rgb, depth, params, cfg);
  const auto want = o::straightline_forward(rgb.to_vector(), depth.to_vector(), to_oracle(params, cfg));
  double dev = 0.0;
  for (std::size_t s = 0; s < network::kStages; ++s) dev = std::max(dev, max_abs_diff(got.maps[s].to_vector(), want[s]));
  return dev;
}

}  // namespace detail

/// Runs `trials` instances; trial t draws from Rng(seed) split t times.
inline SuiteResult run_suite(const std::string& suite, std::size_t trials, std::uint64_t seed) {
  SuiteResult r;
  r.suite = suite;
  r.tolerance = suite_tolerance(suite);
  std::function<double(Rng&)> trial;
  if (suite == "mask") trial = detail::mask_trial;
  else if (suite == "topk") trial = detail::topk_trial;
  else if (suite == "scatter") trial = detail::scatter_trial;
  else if (suite == "sagem") trial = detail::sagem_trial;
  else if (suite == "salrm") trial = detail::salrm_trial;
  else trial = detail::forward_trial;

  Rng root(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = root.split();
    ++r.cases;
    std::string failure;
    try {
      const double dev = trial(rng);
      r.worst = std::max(r.worst, dev);
      if (!(dev <= r.tolerance)) failure = "deviation " + std::to_string(dev);
    } catch (const std::logic_error& e) {
      failure = e.what();
    }
    if (!failure.empty()) {
      if (r.failures == 0) r.first_failure = "trial " + std::to_string(t) + ": " + failure;
      ++r.failures;
    }
  }
  return r;
}

}  // namespace stenet::suites
