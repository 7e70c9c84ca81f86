// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

#include "stenet/commands.hpp"
#include "stenet/oracle.hpp"

using namespace stenet;
namespace sp = stenet::superpixel;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ------------------------------------------------------------------ oracle

Verdict oracle_equivalence() {
  Stopwatch clock;
  Verdict v;
  std::ostringstream d;
  for (const auto& name : suites::suite_names()) {
    const std::size_t trials = name == "forward" ? 10 : 50;
    const auto r = suites::run_suite(name, trials, 20240601);
    v.pass = v.pass && r.passed();
    d << name << " " << r.cases << "/" << r.failures << " worst " << fmt("%.1e", r.worst) << " (<= "
      << fmt("%.0e", r.tolerance) << "); ";
  }
  const double t = clock.seconds();
  v.pass = v.pass && t < 60.0;
  d << fmt("%.1f s (< 60)", t);
  v.detail = d.str();
  return v;
}

// --------------------------------------------------------------- gradients

Verdict gradient_suite() {
  Stopwatch clock;
  Verdict v;
  std::ostringstream d;
  for (const auto& module : checks::module_names()) {
    const auto r = checks::check_module(module, 1);
    const double th = checks::module_threshold(module);
    v.pass = v.pass && r.passed(th);
    d << module << " " << fmt("%.1e", r.worst_rel_err) << " (< " << fmt("%.0e", th) << ", " << r.coords << " coords); ";
  }
  const double t = clock.seconds();
  v.pass = v.pass && t < 300.0;
  d << fmt("%.1f s (< 300)", t);
  v.detail = d.str();
  return v;
}

// ----------------------------------------------------------- normalization

double worst_row_sum_error(const Tensor& t) {
  const std::size_t C = t.shape().back(), R = t.numel() / C;
  double worst = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += t[r * C + c];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

Verdict normalization() {
  Rng root(77);
  double row_err = 0.0, att_excess = 0.0, sm_lo = 1.0, sm_hi = 0.0;
  bool finite = true;
  NoGradGuard no_grad;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng = root.split();
    const auto g = suites::random_grid(rng);
    const auto f_rgb = suites::random_features(rng, g.geo.N(), g.channels);
    const auto f_depth = suites::random_features(rng, g.geo.N(), g.channels);

    const auto sp_params = sp::Params::init(g.channels, rng);
    row_err = std::max(row_err, worst_row_sum_error(sp::generate(f_rgb, g.geo, g.spec, sp_params, g.iters).A));

    const auto sagem_params = sagem::Params::init(g.channels, rng);
    const auto maps = sagem::global_maps(f_rgb, f_depth, sagem_params, g.geo, g.spec, g.iters);
    for (const auto* m : {&maps.A_rgb, &maps.A_depth, &maps.P_rgb, &maps.P_depth}) {
      row_err = std::max(row_err, worst_row_sum_error(*m));
    }
    for (std::size_t i = 0; i < maps.A_att.numel(); ++i) {
      att_excess = std::max(att_excess, maps.A_att[i] - std::min(maps.A_rgb[i], maps.A_depth[i]));
    }

    const std::size_t k = 1 + rng.below(std::min<std::size_t>(9, g.geo.N()));
    const auto salrm_params = salrm::Params::init(g.channels, rng, k);
    const auto local = salrm::refine(f_rgb, f_depth, salrm_params, g.geo, g.spec, g.iters);
    row_err = std::max(row_err, worst_row_sum_error(local.f_att));
    finite = finite && local.output.all_finite();

    auto cfg = network::ModelConfig::tiny();
    cfg.seed = rng.next_u64();
    const std::size_t S = cfg.input_size;
    const auto params = network::NetworkParams::init(cfg);
    const auto out = network::forward(Tensor({3, S, S}, uniform_vector(rng, 3 * S * S, 0, 1)),
                                      Tensor({1, S, S}, uniform_vector(rng, S * S, 0, 1)), params, cfg);
    for (const auto& m : out.maps) {
      finite = finite && m.all_finite();
      for (double s : m.data()) {
        sm_lo = std::min(sm_lo, s);
        sm_hi = std::max(sm_hi, s);
      }
    }
  }
  Verdict v;
  v.pass = row_err <= 1e-9 && att_excess <= 0.0 && sm_lo >= 0.0 && sm_hi <= 1.0 && finite;
  v.detail = fmt("100 trials; worst row-sum error %.1e (<= 1e-9); max(A_att - min(A_rgb, A_depth)) = %.1e; "
                 "saliency range [%.4f, %.4f]; all finite: %s",
                 row_err, att_excess, sm_lo, sm_hi, finite ? "yes" : "no");
  return v;
}

// ----------------------------------------------------------------- locality

Verdict locality() {
  Rng root(91);
  std::size_t outside = 0, trials = 0, radius_one_mismatch = 0, radius_one_cases = 0;
  NoGradGuard no_grad;
  for (int trial = 0; trial < 100; ++trial, ++trials) {
    Rng rng = root.split();
    const auto g = suites::random_grid(rng);
    const auto params = sp::Params::init(g.channels, rng);
    const auto a = sp::generate(suites::random_features(rng, g.geo.N(), g.channels), g.geo, g.spec, params, g.iters).A;
    const auto window = oracle::window_membership(g.geo.feature_h, g.geo.feature_w, g.geo.cell, g.spec.radius_cells);
    for (std::size_t i = 0; i < a.numel(); ++i) outside += (a[i] != 0.0 && !window[i]);

    // 3 x 3 baseline: every cell's 8-neighbourhood plus itself, enumerated directly.
    const auto masks = sp::build_masks(g.geo, {1, 9, 0});
    const long gh = static_cast<long>(g.geo.grid_h()), gw = static_cast<long>(g.geo.grid_w());
    for (std::size_t px = 0; px < g.geo.N(); ++px) {
      const long r = static_cast<long>(g.geo.cell_row(px)), c = static_cast<long>(g.geo.cell_col(px));
      std::vector<std::size_t> expect;
      for (long dr = -1; dr <= 1; ++dr) {
        for (long dc = -1; dc <= 1; ++dc) {
          if (r + dr >= 0 && r + dr < gh && c + dc >= 0 && c + dc < gw) {
            expect.push_back(static_cast<std::size_t>((r + dr) * gw + c + dc));
          }
        }
      }
      const auto row = masks.pixel_candidates.row(px);
      ++radius_one_cases;
      radius_one_mismatch += !std::equal(row.begin(), row.end(), expect.begin(), expect.end());
    }
  }
  Verdict v;
  v.pass = outside == 0 && radius_one_mismatch == 0;
  v.detail = fmt("%zu random grids: %zu association entries outside the window; radius 1 vs 3x3 enumeration: "
                 "%zu of %zu pixel candidate sets differ",
                 trials, outside, radius_one_mismatch, radius_one_cases);
  return v;
}

// --------------------------------------------------------------- complexity

Verdict complexity() {
  Verdict v;
  std::ostringstream d;
  bool ratio_ok = true;
  for (std::size_t p : {1u, 2u, 4u, 6u, 8u, 12u, 16u, 24u, 48u, 96u}) {
    const auto geo = sp::GridGeometry::make(96, 96, p);
    const auto f = sagem::flops(geo, 128);
    const double want = static_cast<double>(geo.M()) / static_cast<double>(geo.N());
    ratio_ok = ratio_ok && f.attention_ratio() == want;
  }
  const auto finest = sagem::flops(sp::GridGeometry::make(96, 96, 12), 128);
  d << "SAGEM/dense attention = M/HW exactly for 10 cell sizes at side 96 (p=12: "
    << fmt("%.6f = 64/9216", finest.attention_ratio()) << "); ";

  // Input 384 gives a 96-side first stage, as in the cell-size study.
  const std::vector<std::array<std::size_t, 4>> configs{{4, 4, 4, 4},     {12, 12, 6, 6},   {12, 12, 12, 12},
                                                        {24, 24, 12, 12}, {48, 24, 12, 12}, {48, 48, 24, 12},
                                                        {96, 48, 24, 12}};
  double lo = 1e300, hi = 0.0;
  for (const auto& cells : configs) {
    network::ModelConfig cfg;
    cfg.input_size = 384;
    cfg.channels = {128, 256, 512, 1024};
    cfg.cells = cells;
    const double t = static_cast<double>(network::count_flops(cfg).total());
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  const double spread = (hi - lo) / lo;
  d << fmt("totals over 7 cell configurations span %.1f-%.1f GFLOP, spread %.2f%% (need < 1%%)", lo / 1e9, hi / 1e9,
           100.0 * spread);
  if (spread >= 0.01) {
    d << "; unattainable while the M x HW attention products are counted: at cells (4,4,4,4) stage 1 alone adds "
      << fmt("%.1f", static_cast<double>(network::count_flops([] {
                       network::ModelConfig c;
                       c.input_size = 384;
                       c.channels = {128, 256, 512, 1024};
                       c.cells = {4, 4, 4, 4};
                       return c;
                     }())
                                             .stages[0]
                                             .sagem.attention()) /
                     1e9)
      << " GFLOP of attention";
  }
  v.pass = ratio_ok && spread < 0.01;
  v.detail = d.str();
  return v;
}

// ---------------------------------------------------------------- coherence

Verdict semantic_coherence() {
  Stopwatch clock;
  const std::size_t S = 16, p = 4;
  const auto geo = sp::GridGeometry::make(S, S, p);
  double total = 0.0, worst = 1.0;
  for (int t = 0; t < 20; ++t) {
    Rng rng(1000 + t);
    // Two flat colours split by a random straight edge, plus mild noise.
    const double angle = rng.uniform(0.0, M_PI), offset = rng.uniform(-3.0, 3.0);
    double colour[2][3];
    for (auto& c : colour) {
      for (double& x : c) x = rng.uniform(0.0, 1.0);
    }
    std::vector<int> region(S * S);
    std::vector<double> pixels(3 * S * S);
    for (std::size_t y = 0; y < S; ++y) {
      for (std::size_t x = 0; x < S; ++x) {
        const double u = (x + 0.5 - S / 2.0) * std::cos(angle) + (y + 0.5 - S / 2.0) * std::sin(angle) - offset;
        const int r = u > 0.0;
        region[y * S + x] = r;
        for (int c = 0; c < 3; ++c) pixels[c * S * S + y * S + x] = std::clamp(colour[r][c] + 0.05 * rng.normal(), 0.0, 1.0);
      }
    }
    const Tensor image({3, S, S}, pixels);
    const auto params = sp::Params::init(3, rng);
    std::vector<std::size_t> labels;
    {
      NoGradGuard no_grad;
      labels = sp::argmax_labels(sp::generate(cli::centered_colour_features(image), geo, {}, params, 2));
    }
    // Each superpixel votes for its majority region; agreement is the share
    // of pixels whose superpixel's region matches their own.
    std::vector<std::array<std::size_t, 2>> votes(geo.M(), {0, 0});
    for (std::size_t i = 0; i < S * S; ++i) ++votes[labels[i]][region[i]];
    std::size_t agree = 0;
    for (std::size_t i = 0; i < S * S; ++i) {
      const int majority = votes[labels[i]][1] > votes[labels[i]][0];
      agree += majority == region[i];
    }
    const double score = static_cast<double>(agree) / static_cast<double>(S * S);
    total += score;
    worst = std::min(worst, score);
  }
  const double mean = total / 20.0, secs = clock.seconds();
  Verdict v;
  v.pass = mean >= 0.90 && secs < 30.0;
  v.detail = fmt("20 two-region 16x16 images, p=4, T=2: mean agreement %.2f%% (>= 90%%), worst %.2f%%; %.2f s", 100 * mean,
                 100 * worst, secs);
  return v;
}

// --------------------------------------------------------------------- loss

Verdict loss_closed_forms() {
  const Tensor g({3, 3}, {1, 0, 1, 0, 1, 0, 1, 1, 0});
  const double perfect = loss::hybrid_loss(g, g).total_value();
  const double half = loss::hybrid_loss(Tensor::full({3, 3}, 0.5), Tensor::full({3, 3}, 1.0)).total_value();
  const double want = std::log(2.0) + 0.5;
  Verdict v;
  v.pass = std::abs(perfect) <= 1e-9 && std::abs(half - want) <= 1e-9;
  v.detail = fmt("perfect prediction %.3e; 0.5 vs ones %.12f, ln 2 + 0.5 = %.12f (tolerance 1e-9)", perfect, half, want);
  return v;
}

// ------------------------------------------------------------------ toy fit

Verdict toy_fit() {
  Stopwatch clock;
  auto cfg = network::ModelConfig::tiny();
  const std::size_t S = cfg.input_size;
  auto params = network::NetworkParams::init(cfg);
  std::vector<double> rgb(3 * S * S), depth(S * S), gt(S * S);
  Rng rng(5);
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      const bool in = x >= 8 && x < 22 && y >= 10 && y < 26;
      gt[y * S + x] = in;
      for (int c = 0; c < 3; ++c) {
        const double base = in ? (c == 0 ? 0.8 : 0.3) : (c == 2 ? 0.7 : 0.2);
        rgb[c * S * S + y * S + x] = std::clamp(base + 0.05 * rng.normal(), 0.0, 1.0);
      }
      depth[y * S + x] = in ? 0.9 : 0.2;
    }
  }
  const Tensor r({3, S, S}, rgb), d({1, S, S}, depth), g({S, S}, gt);
  network::Adam opt(params.parameters(), 3e-3);
  double first = 0.0;
  for (int step = 0; step < 200; ++step) {
    opt.zero_grad();
    const auto l = loss::deep_supervision(network::forward(r, d, params, cfg), g).grand_total;
    if (step == 0) first = l.item();
    backward(l);
    opt.step();
  }
  double final_loss;
  {
    NoGradGuard no_grad;
    final_loss = loss::deep_supervision(network::forward(r, d, params, cfg), g).grand_total_value();
  }
  const double secs = clock.seconds();
  Verdict v;
  v.pass = final_loss <= 0.5 * first && secs < 300.0;
  v.detail = fmt("200 Adam steps (lr 3e-3): grand total %.4f -> %.4f, %.1f%% reduction (>= 50%%); %.1f s", first,
                 final_loss, 100.0 * (1.0 - final_loss / first), secs);
  return v;
}

// --------------------------------------------------------------- determinism

Verdict determinism_and_io() {
  const auto dir = fs::temp_directory_path() / "stenet_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::size_t side = 48;
  io::Image8 rgb{side, side, 3, {}}, depth{side, side, 1, {}};
  Rng rng(3);
  for (std::size_t i = 0; i < side * side; ++i) {
    for (int c = 0; c < 3; ++c) rgb.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
    depth.pixels.push_back(static_cast<std::uint8_t>(rng.below(256)));
  }
  io::write_netpbm(dir / "rgb.ppm", rgb);
  io::write_netpbm(dir / "depth.pgm", depth);
  io::write_atomic(dir / "model.cfg", io::serialize_config(network::ModelConfig::tiny()));

  std::ostringstream sink;
  cli::ForwardArgs args{dir / "rgb.ppm", dir / "depth.pgm", dir / "model.cfg", dir / "a.pgm", std::nullopt};
  const int c1 = cli::cmd_forward(args, sink, sink);
  args.out = dir / "b.pgm";
  const int c2 = cli::cmd_forward(args, sink, sink);
  const bool maps_equal = c1 == 0 && c2 == 0 && io::read_bytes(dir / "a.pgm") == io::read_bytes(dir / "b.pgm");

  const auto geo = sp::GridGeometry::make(8, 8, 2);
  const auto params = sp::Params::init(3, rng);
  Tensor a;
  {
    NoGradGuard no_grad;
    a = sp::generate(suites::random_features(rng, geo.N(), 3), geo, {}, params, 2).A;
  }
  const auto dump = io::AssociationDump::from_tensor(a);
  io::write_association(dir / "a.spas", dump);
  const bool assoc_equal = io::read_association(dir / "a.spas") == dump;

  auto cfg = network::ModelConfig::tiny();
  cfg.cells = {4, 2, 2, 1};
  cfg.mask_radius = 3;
  cfg.iters = 1;
  cfg.salrm_k = 5;
  cfg.seed = 0xfeedfacecafebeefull;
  io::write_atomic(dir / "rt.cfg", io::serialize_config(cfg));
  const bool cfg_equal = io::load_config(dir / "rt.cfg") == cfg;
  fs::remove_all(dir);

  Verdict v;
  v.pass = maps_equal && assoc_equal && cfg_equal;
  v.detail = fmt("two forward runs byte-identical: %s; association dump round-trip exact: %s; config round-trip "
                 "exact: %s",
                 maps_equal ? "yes" : "no", assoc_equal ? "yes" : "no", cfg_equal ? "yes" : "no");
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"oracle-equivalence", oracle_equivalence},
      {"gradient-suite", gradient_suite},
      {"normalization", normalization},
      {"locality", locality},
      {"complexity", complexity},
      {"semantic-coherence", semantic_coherence},
      {"loss-closed-forms", loss_closed_forms},
      {"toy-fit", toy_fit},
      {"determinism-io", determinism_and_io},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
