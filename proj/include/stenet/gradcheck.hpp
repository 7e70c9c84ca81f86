#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "stenet/nn.hpp"

namespace stenet {

struct GradCheckReport {
  double worst_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords = 0;   // coordinates compared
  std::size_t skipped = 0;  // perturbation changed a top-k selection

  bool passed(double threshold) const { return coords > 0 && worst_rel_err < threshold; }
};

struct GradCheckOptions {
  double eps = 1e-5;
  /// Denominator floor of the relative error. Central differences of a
  /// function of magnitude ~10 carry ~1e-10 of roundoff, so coordinates
  /// with an exactly-zero gradient need a floor well above that.
  double floor = 1e-5;
  /// 0 checks every coordinate; otherwise each tensor contributes its
  /// largest-gradient coordinate plus seeded random ones up to this many.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace detail {

inline std::vector<std::size_t> coords_to_check(const std::vector<double>& analytic, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> all(analytic.size());
  std::iota(all.begin(), all.end(), 0);
  if (limit == 0 || analytic.size() <= limit) return all;
  std::vector<std::size_t> out{static_cast<std::size_t>(
      std::max_element(analytic.begin(), analytic.end(),
                       [](double a, double b) { return std::abs(a) < std::abs(b); }) -
      analytic.begin())};
  while (out.size() < limit) {
    const auto i = rng.below(analytic.size());
    if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
  }
  return out;
}

}  // namespace detail

/// Compares the tape gradient of a scalar function against central
/// differences for coordinates of every listed leaf. Leaves left without a
/// gradient by backward count as zero gradient. A coordinate whose +-eps
/// evaluations make different top-k selections than the base point straddles
/// a discontinuity and is skipped.
inline GradCheckReport gradcheck(const std::function<Tensor()>& fn, ParamList params,
                                 const GradCheckOptions& opt = {}) {
  zero_grads(params);
  std::uint64_t base_branch = 0;
  {
    SelectionTrace trace;
    const Tensor loss = fn();
    if (loss.requires_grad()) backward(loss);
    base_branch = trace.fingerprint();
  }

  Rng rng(opt.seed);
  GradCheckReport report;
  for (auto& [name, t] : params) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    auto data = t.mutable_data();
    for (const auto i : detail::coords_to_check(analytic, opt.max_coords_per_param, rng)) {
      const double saved = data[i];
      double plus = 0.0, minus = 0.0;
      bool same_branch = true;
      {
        NoGradGuard no_grad;
        for (const double sign : {1.0, -1.0}) {
          SelectionTrace trace;
          data[i] = saved + sign * opt.eps;
          (sign > 0 ? plus : minus) = fn().item();
          same_branch = same_branch && trace.fingerprint() == base_branch;
        }
      }
      data[i] = saved;
      if (!same_branch) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * opt.eps);
      const double err = relative_error(analytic[i], numeric, opt.floor);
      ++report.coords;
      if (err > report.worst_rel_err || report.coords == 1) {
        report.worst_rel_err = err;
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  zero_grads(params);
  return report;
}

inline GradCheckReport gradcheck(const std::function<Tensor()>& fn, ParamList params, double eps) {
  GradCheckOptions opt;
  opt.eps = eps;
  return gradcheck(fn, std::move(params), opt);
}

}  // namespace stenet
