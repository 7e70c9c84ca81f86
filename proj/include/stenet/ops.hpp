#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "stenet/flops.hpp"
#include "stenet/index.hpp"
#include "stenet/tensor.hpp"

// Differentiable kernels. Spatial feature maps are stored channels-last as
// [H*W, C] with the spatial extent passed alongside.

namespace stenet {

struct Extent {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t pixels() const { return h * w; }
  bool operator==(const Extent&) const = default;
};

namespace detail {

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.dim() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

enum class BinOp { Add, Sub, Mul, Div };

inline Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  Shape out_shape;
  if (a.shape() == b.shape() || is_suffix(b.shape(), a.shape())) {
    out_shape = a.shape();
  } else if (is_suffix(a.shape(), b.shape())) {
    out_shape = b.shape();
  } else {
    throw ShapeError("cannot broadcast " + to_string(a.shape()) + " with " + to_string(b.shape()));
  }
  const std::size_t n = numel(out_shape), na = a.numel(), nb = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(n);
  switch (op) {
    case BinOp::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] + bd[i % nb];
      break;
    case BinOp::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] - bd[i % nb];
      break;
    case BinOp::Mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] * bd[i % nb];
      record_flops(n);
      break;
    case BinOp::Div:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i % na] / bd[i % nb];
      break;
  }
  static constexpr std::string_view names[] = {"add", "sub", "mul", "div"};
  return make_result(std::move(out_shape), std::move(out), names[static_cast<int>(op)], {a, b},
                     [op, n, na, nb](Node& self) {
                       const auto& g = self.grad;
                       const auto& av = self.inputs[0]->data;
                       const auto& bv = self.inputs[1]->data;
                       if (wants_grad(self, 0)) {
                         auto& ga = self.inputs[0]->grad;
                         for (std::size_t i = 0; i < n; ++i) {
                           double d = 1.0;
                           if (op == BinOp::Mul) d = bv[i % nb];
                           if (op == BinOp::Div) d = 1.0 / bv[i % nb];
                           ga[i % na] += g[i] * d;
                         }
                       }
                       if (wants_grad(self, 1)) {
                         auto& gb = self.inputs[1]->grad;
                         for (std::size_t i = 0; i < n; ++i) {
                           double d = 1.0;
                           if (op == BinOp::Sub) d = -1.0;
                           if (op == BinOp::Mul) d = av[i % na];
                           if (op == BinOp::Div) d = -av[i % na] / (bv[i % nb] * bv[i % nb]);
                           gb[i % nb] += g[i] * d;
                         }
                       }
                     });
}

// f maps x -> y; df maps (x, y) -> dy/dx.
template <class F, class DF>
Tensor unary(const Tensor& x, std::string_view name, F f, DF df) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  return make_result(x.shape(), std::move(out), name, {x}, [df](Node& self) {
    auto& gx = self.inputs[0]->grad;
    const auto& xv = self.inputs[0]->data;
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * df(xv[i], self.data[i]);
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::Add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::Sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::Mul); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::Div); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

/// scale * x + shift
inline Tensor affine(const Tensor& x, double scale, double shift = 0.0) {
  return detail::unary(
      x, "affine", [=](double v) { return scale * v + shift; },
      [=](double, double) { return scale; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

/// Exact (erf) GELU.
inline Tensor gelu(const Tensor& x) {
  return detail::unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
        return cdf + v * pdf;
      });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

/// max(x, lo); the gradient is zero where the floor is active.
inline Tensor clamp_min(const Tensor& x, double lo) {
  return detail::unary(
      x, "clamp_min", [=](double v) { return std::max(v, lo); },
      [=](double v, double) { return v > lo ? 1.0 : 0.0; });
}

inline Tensor sum(const Tensor& x) {
  auto xd = x.data();
  const double s = std::accumulate(xd.begin(), xd.end(), 0.0);
  return detail::make_result({}, {s}, "sum", {x}, [](detail::Node& self) {
    auto& gx = self.inputs[0]->grad;
    for (auto& v : gx) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return affine(sum(x), 1.0 / static_cast<double>(x.numel())); }

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  return detail::make_result(std::move(shape), x.to_vector(), "reshape", {x},
                             [](detail::Node& self) {
                               auto& gx = self.inputs[0]->grad;
                               for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                             });
}

/// Swaps the last two axes.
inline Tensor transpose_last(const Tensor& x) {
  if (x.dim() < 2) throw ShapeError("transpose_last needs rank >= 2");
  Shape s = x.shape();
  const std::size_t m = s[s.size() - 2], n = s[s.size() - 1];
  const std::size_t batch = x.numel() / (m * n);
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = xd[b * m * n + i * n + j];
    }
  }
  return detail::make_result(std::move(s), std::move(out), "transpose", {x},
                             [batch, m, n](detail::Node& self) {
                               auto& gx = self.inputs[0]->grad;
                               for (std::size_t b = 0; b < batch; ++b) {
                                 for (std::size_t i = 0; i < m; ++i) {
                                   for (std::size_t j = 0; j < n; ++j) {
                                     gx[b * m * n + i * n + j] += self.grad[b * m * n + j * m + i];
                                   }
                                 }
                               }
                             });
}

/// Batched matrix product a[..., m, k] x b[..., k, n]. Leading batch axes
/// must match, or one operand may be a plain matrix shared by every batch.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() < 2 || b.dim() < 2) throw ShapeError("matmul operands need rank >= 2");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const std::size_t m = as[as.size() - 2], k = as.back(), n = bs.back();
  if (bs[bs.size() - 2] != k) {
    throw ShapeError("matmul inner dimensions differ: " + to_string(as) + " x " + to_string(bs));
  }
  const Shape a_batch(as.begin(), as.end() - 2), b_batch(bs.begin(), bs.end() - 2);
  Shape out_batch;
  if (a_batch == b_batch || b_batch.empty()) {
    out_batch = a_batch;
  } else if (a_batch.empty()) {
    out_batch = b_batch;
  } else {
    throw ShapeError("matmul batch dimensions differ: " + to_string(as) + " x " + to_string(bs));
  }
  const std::size_t batch = numel(out_batch);
  const bool a_shared = a_batch.empty() && batch > 1;
  const bool b_shared = b_batch.empty() && batch > 1;
  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t t = 0; t < batch; ++t) {
    const double* ap = ad.data() + (a_shared ? 0 : t * m * k);
    const double* bp = bd.data() + (b_shared ? 0 : t * k * n);
    double* op = out.data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ap[i * k + p];
        const double* brow = bp + p * n;
        double* orow = op + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  detail::record_flops(batch * matmul_flops(m, k, n));
  return detail::make_result(
      std::move(out_shape), std::move(out), "matmul", {a, b},
      [=](detail::Node& self) {
        const auto& g = self.grad;
        const auto& av = self.inputs[0]->data;
        const auto& bv = self.inputs[1]->data;
        const bool ga_on = detail::wants_grad(self, 0), gb_on = detail::wants_grad(self, 1);
        for (std::size_t t = 0; t < batch; ++t) {
          const std::size_t ao = a_shared ? 0 : t * m * k, bo = b_shared ? 0 : t * k * n;
          const double* gp = g.data() + t * m * n;
          if (ga_on) {
            auto& ga = self.inputs[0]->grad;
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t p = 0; p < k; ++p) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += gp[i * n + j] * bv[bo + p * n + j];
                ga[ao + i * k + p] += s;
              }
            }
          }
          if (gb_on) {
            auto& gb = self.inputs[1]->grad;
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t p = 0; p < k; ++p) {
                const double a_ip = av[ao + i * k + p];
                for (std::size_t j = 0; j < n; ++j) gb[bo + p * n + j] += a_ip * gp[i * n + j];
              }
            }
          }
        }
      });
}

/// x W + b for x[N, in], W[in, out], b[out]; b may be undefined.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  auto y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

/// Max-subtracted softmax along one axis.
inline Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = detail::normalize_axis(axis, x.dim());
  const auto& s = x.shape();
  const std::size_t len = s[ax];
  const std::size_t inner = numel(Shape(s.begin() + static_cast<long>(ax) + 1, s.end()));
  const std::size_t outer = x.numel() / std::max<std::size_t>(len * inner, 1);
  auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, xd[base + l * inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        out[base + l * inner] = std::exp(xd[base + l * inner] - mx);
        z += out[base + l * inner];
      }
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= z;
    }
  }
  return detail::make_result(s, std::move(out), "softmax", {x},
                             [=](detail::Node& self) {
                               auto& gx = self.inputs[0]->grad;
                               const auto& y = self.data;
                               const auto& g = self.grad;
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t in = 0; in < inner; ++in) {
                                   const std::size_t base = o * len * inner + in;
                                   double dot = 0.0;
                                   for (std::size_t l = 0; l < len; ++l) {
                                     dot += y[base + l * inner] * g[base + l * inner];
                                   }
                                   for (std::size_t l = 0; l < len; ++l) {
                                     const std::size_t i = base + l * inner;
                                     gx[i] += y[i] * (g[i] - dot);
                                   }
                                 }
                               }
                             });
}

/// Softmax over the candidate set of each line of a matrix; entries outside
/// the mask are exactly zero. axis = 1 normalizes rows (mask rows index
/// columns); axis = 0 normalizes columns (mask rows index rows).
inline Tensor masked_softmax(const Tensor& x, const SparseMask& mask, int axis = 1) {
  detail::require_rank(x, 2, "masked_softmax");
  const std::size_t ax = detail::normalize_axis(axis, 2);
  const std::size_t R = x.size(0), C = x.size(1);
  const std::size_t lines = ax == 1 ? R : C, len = ax == 1 ? C : R;
  if (mask.rows() != lines || mask.domain() != len) {
    throw ShapeError("masked_softmax: mask is " + std::to_string(mask.rows()) + "->" +
                     std::to_string(mask.domain()) + " for input " + to_string(x.shape()));
  }
  auto at = [ax, C](std::size_t line, std::size_t c) { return ax == 1 ? line * C + c : c * C + line; };
  auto xd = x.data();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t l = 0; l < lines; ++l) {
    auto cand = mask.row(l);
    if (cand.empty()) throw std::invalid_argument("masked_softmax: empty candidate row");
    double mx = -std::numeric_limits<double>::infinity();
    for (auto c : cand) mx = std::max(mx, xd[at(l, c)]);
    double z = 0.0;
    for (auto c : cand) {
      const double e = std::exp(xd[at(l, c)] - mx);
      out[at(l, c)] = e;
      z += e;
    }
    for (auto c : cand) out[at(l, c)] /= z;
  }
  return detail::make_result(x.shape(), std::move(out), "masked_softmax", {x},
                             [mask, lines, at](detail::Node& self) {
                               auto& gx = self.inputs[0]->grad;
                               const auto& y = self.data;
                               const auto& g = self.grad;
                               for (std::size_t l = 0; l < lines; ++l) {
                                 double dot = 0.0;
                                 for (auto c : mask.row(l)) dot += y[at(l, c)] * g[at(l, c)];
                                 for (auto c : mask.row(l)) {
                                   const std::size_t i = at(l, c);
                                   gx[i] += y[i] * (g[i] - dot);
                                 }
                               }
                             });
}

/// scale * <q_r, k_s> for every (r, s) in the mask, zero elsewhere.
/// q[R, D], k[S, D] -> [R, S].
inline Tensor masked_scores(const Tensor& q, const Tensor& k, const SparseMask& mask, double scale) {
  detail::require_rank(q, 2, "masked_scores");
  detail::require_rank(k, 2, "masked_scores");
  const std::size_t R = q.size(0), S = k.size(0), D = q.size(1);
  if (k.size(1) != D || mask.rows() != R || mask.domain() != S) {
    throw ShapeError("masked_scores: q " + to_string(q.shape()) + ", k " + to_string(k.shape()));
  }
  auto qd = q.data();
  auto kd = k.data();
  std::vector<double> out(R * S, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    for (auto s : mask.row(r)) {
      double dot = 0.0;
      for (std::size_t d = 0; d < D; ++d) dot += qd[r * D + d] * kd[s * D + d];
      out[r * S + s] = scale * dot;
    }
  }
  detail::record_flops(2 * D * mask.nnz());
  return detail::make_result(
      {R, S}, std::move(out), "masked_scores", {q, k},
      [mask, R, S, D, scale](detail::Node& self) {
        const auto& qv = self.inputs[0]->data;
        const auto& kv = self.inputs[1]->data;
        const bool gq_on = detail::wants_grad(self, 0), gk_on = detail::wants_grad(self, 1);
        for (std::size_t r = 0; r < R; ++r) {
          for (auto s : mask.row(r)) {
            const double g = self.grad[r * S + s] * scale;
            if (g == 0.0) continue;
            if (gq_on) {
              auto& gq = self.inputs[0]->grad;
              for (std::size_t d = 0; d < D; ++d) gq[r * D + d] += g * kv[s * D + d];
            }
            if (gk_on) {
              auto& gk = self.inputs[1]->grad;
              for (std::size_t d = 0; d < D; ++d) gk[s * D + d] += g * qv[r * D + d];
            }
          }
        }
      });
}

/// Sum over masked columns: out[r] = sum_{s in mask(r)} w[r, s] * v[s].
/// w[R, S], v[S, C] -> [R, C]. Unmasked entries of w are never read.
inline Tensor sparse_matmul(const Tensor& w, const SparseMask& mask, const Tensor& v) {
  detail::require_rank(w, 2, "sparse_matmul");
  detail::require_rank(v, 2, "sparse_matmul");
  const std::size_t R = w.size(0), S = w.size(1), C = v.size(1);
  if (v.size(0) != S || mask.rows() != R || mask.domain() != S) {
    throw ShapeError("sparse_matmul: w " + to_string(w.shape()) + ", v " + to_string(v.shape()));
  }
  auto wd = w.data();
  auto vd = v.data();
  std::vector<double> out(R * C, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    for (auto s : mask.row(r)) {
      const double a = wd[r * S + s];
      for (std::size_t c = 0; c < C; ++c) out[r * C + c] += a * vd[s * C + c];
    }
  }
  detail::record_flops(2 * C * mask.nnz());
  return detail::make_result(
      {R, C}, std::move(out), "sparse_matmul", {w, v},
      [mask, R, S, C](detail::Node& self) {
        const auto& wv = self.inputs[0]->data;
        const auto& vv = self.inputs[1]->data;
        const auto& g = self.grad;
        const bool gw_on = detail::wants_grad(self, 0), gv_on = detail::wants_grad(self, 1);
        for (std::size_t r = 0; r < R; ++r) {
          for (auto s : mask.row(r)) {
            if (gw_on) {
              double dot = 0.0;
              for (std::size_t c = 0; c < C; ++c) dot += g[r * C + c] * vv[s * C + c];
              self.inputs[0]->grad[r * S + s] += dot;
            }
            if (gv_on) {
              auto& gv = self.inputs[1]->grad;
              const double a = wv[r * S + s];
              for (std::size_t c = 0; c < C; ++c) gv[s * C + c] += a * g[r * C + c];
            }
          }
        }
      });
}

namespace detail {
inline std::uint64_t*& active_selection_sink() {
  thread_local std::uint64_t* sink = nullptr;
  return sink;
}
}  // namespace detail

/// Hash of every top-k selection made on this thread while alive. Two
/// evaluations with equal fingerprints took the same discrete branches.
class SelectionTrace {
 public:
  SelectionTrace() : prev_(detail::active_selection_sink()) { detail::active_selection_sink() = &hash_; }
  ~SelectionTrace() { detail::active_selection_sink() = prev_; }
  SelectionTrace(const SelectionTrace&) = delete;
  SelectionTrace& operator=(const SelectionTrace&) = delete;

  std::uint64_t fingerprint() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
  std::uint64_t* prev_;
};

/// Per row, the indices of the k largest values among that row's candidates,
/// in descending order; ties go to the smaller index. Rows with fewer than k
/// candidates return all of them.
inline IndexMatrix topk_indices(const Tensor& x, int k, const SparseMask& within) {
  if (k <= 0) throw std::invalid_argument("topk_indices: k must be >= 1");
  detail::require_rank(x, 2, "topk_indices");
  const std::size_t R = x.size(0), C = x.size(1);
  if (within.rows() != R || within.domain() != C) {
    throw ShapeError("topk_indices: mask does not match " + to_string(x.shape()));
  }
  auto xd = x.data();
  std::vector<std::vector<std::size_t>> rows(R);
  for (std::size_t r = 0; r < R; ++r) {
    auto cand = within.row(r);
    if (cand.empty()) throw std::invalid_argument("topk_indices: empty candidate row");
    std::vector<std::size_t> idx(cand.begin(), cand.end());
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(take), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double va = xd[r * C + a], vb = xd[r * C + b];
                        return va > vb || (va == vb && a < b);
                      });
    idx.resize(take);
    if (auto* h = detail::active_selection_sink()) {
      for (auto i : idx) *h = (*h ^ (i + 1)) * 0x100000001b3ull;
      *h = (*h ^ 0xffu) * 0x100000001b3ull;
    }
    rows[r] = std::move(idx);
  }
  return IndexMatrix(C, rows);
}

inline IndexMatrix topk_indices(const Tensor& x, int k) {
  detail::require_rank(x, 2, "topk_indices");
  return topk_indices(x, k, SparseMask::full(x.size(0), x.size(1)));
}

/// out[m, j, :] = src[idx[m, j], :] for src[N, C] and uniform idx[M, k].
inline Tensor gather_rows(const Tensor& src, const IndexMatrix& idx) {
  detail::require_rank(src, 2, "gather_rows");
  const std::size_t N = src.size(0), C = src.size(1), M = idx.rows(), K = idx.width();
  auto sd = src.data();
  std::vector<double> out(M * K * C);
  for (std::size_t m = 0; m < M; ++m) {
    auto row = idx.row(m);
    for (std::size_t j = 0; j < K; ++j) {
      if (row[j] >= N) throw IndexError("gather_rows: index " + std::to_string(row[j]) + " >= " + std::to_string(N));
      std::copy_n(sd.begin() + static_cast<long>(row[j] * C), C, out.begin() + static_cast<long>((m * K + j) * C));
    }
  }
  return detail::make_result({M, K, C}, std::move(out), "gather_rows", {src},
                             [idx, M, K, C](detail::Node& self) {
                               auto& gs = self.inputs[0]->grad;
                               for (std::size_t m = 0; m < M; ++m) {
                                 auto row = idx.row(m);
                                 for (std::size_t j = 0; j < K; ++j) {
                                   for (std::size_t c = 0; c < C; ++c) {
                                     gs[row[j] * C + c] += self.grad[(m * K + j) * C + c];
                                   }
                                 }
                               }
                             });
}

/// Writes values[M, k, C] to rows idx[m, j] of an [N, C] result. Each row
/// receives the mean of its contributions; rows nobody targets stay zero.
inline Tensor scatter_mean(std::size_t rows_out, const Tensor& values, const IndexMatrix& idx) {
  detail::require_rank(values, 3, "scatter_mean");
  const std::size_t M = values.size(0), K = values.size(1), C = values.size(2);
  if (idx.rows() != M || idx.width() != K) {
    throw ShapeError("scatter_mean: index matrix does not match " + to_string(values.shape()));
  }
  std::vector<double> count(rows_out, 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    for (auto r : idx.row(m)) {
      if (r >= rows_out) throw IndexError("scatter_mean: index " + std::to_string(r) + " >= " + std::to_string(rows_out));
      count[r] += 1.0;
    }
  }
  auto vd = values.data();
  std::vector<double> out(rows_out * C, 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    auto row = idx.row(m);
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t c = 0; c < C; ++c) out[row[j] * C + c] += vd[(m * K + j) * C + c];
    }
  }
  for (std::size_t r = 0; r < rows_out; ++r) {
    if (count[r] > 1.0) {
      for (std::size_t c = 0; c < C; ++c) out[r * C + c] /= count[r];
    }
  }
  return detail::make_result({rows_out, C}, std::move(out), "scatter_mean", {values},
                             [idx, count, M, K, C](detail::Node& self) {
                               auto& gv = self.inputs[0]->grad;
                               for (std::size_t m = 0; m < M; ++m) {
                                 auto row = idx.row(m);
                                 for (std::size_t j = 0; j < K; ++j) {
                                   const double inv = 1.0 / count[row[j]];
                                   for (std::size_t c = 0; c < C; ++c) {
                                     gv[(m * K + j) * C + c] += self.grad[row[j] * C + c] * inv;
                                   }
                                 }
                               }
                             });
}

/// Normalizes over the last axis, then applies gamma and beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  if (x.dim() < 1) throw ShapeError("layer_norm needs rank >= 1");
  const std::size_t C = x.shape().back(), rows = x.numel() / C;
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw ShapeError("layer_norm: affine params must be [" + std::to_string(C) + "]");
  }
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * C;
    double mu = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += xr[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(C);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) {
      xhat[r * C + c] = (xr[c] - mu) * inv_std[r];
      out[r * C + c] = gd[c] * xhat[r * C + c] + bd[c];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, C](detail::Node& self) {
        const auto& g = self.grad;
        const auto& gam = self.inputs[1]->data;
        if (detail::wants_grad(self, 0)) {
          auto& gx = self.inputs[0]->grad;
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              const double gh = g[r * C + c] * gam[c];
              m1 += gh;
              m2 += gh * xhat[r * C + c];
            }
            m1 /= static_cast<double>(C);
            m2 /= static_cast<double>(C);
            for (std::size_t c = 0; c < C; ++c) {
              const double gh = g[r * C + c] * gam[c];
              gx[r * C + c] += inv_std[r] * (gh - m1 - xhat[r * C + c] * m2);
            }
          }
        }
        if (detail::wants_grad(self, 1)) {
          auto& gg = self.inputs[1]->grad;
          for (std::size_t i = 0; i < rows * C; ++i) gg[i % C] += g[i] * xhat[i];
        }
        if (detail::wants_grad(self, 2)) {
          auto& gb = self.inputs[2]->grad;
          for (std::size_t i = 0; i < rows * C; ++i) gb[i % C] += g[i];
        }
      });
}

/// 5x5 depthwise convolution with zero padding 2 (spatial size preserved).
/// x[H*W, C], weight[25, C] (tap-major, row of the 5x5 window first), bias[C].
inline Tensor depthwise_conv5x5(const Tensor& x, Extent ext, const Tensor& weight, const Tensor& bias) {
  detail::require_rank(x, 2, "depthwise_conv5x5");
  const std::size_t C = x.size(1), H = ext.h, W = ext.w;
  if (x.size(0) != H * W || weight.shape() != Shape{25, C} || bias.shape() != Shape{C}) {
    throw ShapeError("depthwise_conv5x5: bad shapes for input " + to_string(x.shape()));
  }
  auto xd = x.data();
  auto wd = weight.data();
  auto bd = bias.data();
  std::vector<double> out(H * W * C);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t xx = 0; xx < W; ++xx) {
      double* o = out.data() + (y * W + xx) * C;
      for (std::size_t c = 0; c < C; ++c) o[c] = bd[c];
      for (int dy = -2; dy <= 2; ++dy) {
        const long sy = static_cast<long>(y) + dy;
        if (sy < 0 || sy >= static_cast<long>(H)) continue;
        for (int dx = -2; dx <= 2; ++dx) {
          const long sx = static_cast<long>(xx) + dx;
          if (sx < 0 || sx >= static_cast<long>(W)) continue;
          const double* in = xd.data() + (static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)) * C;
          const double* wt = wd.data() + static_cast<std::size_t>((dy + 2) * 5 + (dx + 2)) * C;
          for (std::size_t c = 0; c < C; ++c) o[c] += wt[c] * in[c];
        }
      }
    }
  }
  detail::record_flops(2 * 25 * H * W * C);
  return detail::make_result(
      x.shape(), std::move(out), "depthwise_conv5x5", {x, weight, bias},
      [H, W, C](detail::Node& self) {
        const auto& g = self.grad;
        const auto& xv = self.inputs[0]->data;
        const auto& wv = self.inputs[1]->data;
        const bool gx_on = detail::wants_grad(self, 0), gw_on = detail::wants_grad(self, 1);
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t xx = 0; xx < W; ++xx) {
            const double* go = g.data() + (y * W + xx) * C;
            if (detail::wants_grad(self, 2)) {
              auto& gb = self.inputs[2]->grad;
              for (std::size_t c = 0; c < C; ++c) gb[c] += go[c];
            }
            for (int dy = -2; dy <= 2; ++dy) {
              const long sy = static_cast<long>(y) + dy;
              if (sy < 0 || sy >= static_cast<long>(H)) continue;
              for (int dx = -2; dx <= 2; ++dx) {
                const long sx = static_cast<long>(xx) + dx;
                if (sx < 0 || sx >= static_cast<long>(W)) continue;
                const std::size_t in = (static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)) * C;
                const std::size_t wt = static_cast<std::size_t>((dy + 2) * 5 + (dx + 2)) * C;
                for (std::size_t c = 0; c < C; ++c) {
                  if (gx_on) self.inputs[0]->grad[in + c] += go[c] * wv[wt + c];
                  if (gw_on) self.inputs[1]->grad[wt + c] += go[c] * xv[in + c];
                }
              }
            }
          }
        }
      });
}

/// Rearranges non-overlapping k x k patches into rows:
/// x[H*W, C] -> [(H/k)*(W/k), k*k*C] with (dy, dx, c) ordering per row.
inline Tensor patchify(const Tensor& x, Extent ext, std::size_t k) {
  detail::require_rank(x, 2, "patchify");
  const std::size_t C = x.size(1), H = ext.h, W = ext.w;
  if (k == 0 || x.size(0) != H * W || H % k != 0 || W % k != 0) {
    throw ShapeError("patchify: kernel " + std::to_string(k) + " does not tile " +
                     std::to_string(H) + "x" + std::to_string(W));
  }
  const std::size_t Ho = H / k, Wo = W / k, row_len = k * k * C;
  // src[dst] mapping, shared by forward and backward.
  std::vector<std::size_t> src(Ho * Wo * row_len);
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      for (std::size_t dy = 0; dy < k; ++dy) {
        for (std::size_t dx = 0; dx < k; ++dx) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t dst = (oy * Wo + ox) * row_len + (dy * k + dx) * C + c;
            src[dst] = ((oy * k + dy) * W + (ox * k + dx)) * C + c;
          }
        }
      }
    }
  }
  auto xd = x.data();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xd[src[i]];
  return detail::make_result({Ho * Wo, row_len}, std::move(out), "patchify", {x},
                             [src = std::move(src)](detail::Node& self) {
                               auto& gx = self.inputs[0]->grad;
                               for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += self.grad[i];
                             });
}

/// Convolution with kernel size equal to its stride (patch embedding).
/// weight[k*k*Cin, Cout] in patchify ordering.
inline Tensor strided_conv(const Tensor& x, Extent ext, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  return linear(patchify(x, ext, stride), weight, bias);
}

inline Tensor pointwise_conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return linear(x, weight, bias);
}

/// Mean over each p x p cell: x[H*W, C] -> [(H/p)*(W/p), C].
inline Tensor avgpool_grid(const Tensor& x, Extent ext, std::size_t p) {
  detail::require_rank(x, 2, "avgpool_grid");
  const std::size_t C = x.size(1), H = ext.h, W = ext.w;
  if (p == 0 || x.size(0) != H * W || H % p != 0 || W % p != 0) {
    throw ShapeError("avgpool_grid: cell " + std::to_string(p) + " does not tile " +
                     std::to_string(H) + "x" + std::to_string(W));
  }
  const std::size_t gw = W / p, M = (H / p) * gw;
  const double inv = 1.0 / static_cast<double>(p * p);
  auto cell_of = [=](std::size_t i) { return (i / W / p) * gw + (i % W) / p; };
  auto xd = x.data();
  std::vector<double> out(M * C, 0.0);
  for (std::size_t i = 0; i < H * W; ++i) {
    const std::size_t m = cell_of(i);
    for (std::size_t c = 0; c < C; ++c) out[m * C + c] += xd[i * C + c] * inv;
  }
  return detail::make_result({M, C}, std::move(out), "avgpool_grid", {x},
                             [=](detail::Node& self) {
                               auto& gx = self.inputs[0]->grad;
                               for (std::size_t i = 0; i < H * W; ++i) {
                                 const std::size_t m = cell_of(i);
                                 for (std::size_t c = 0; c < C; ++c) gx[i * C + c] += self.grad[m * C + c] * inv;
                               }
                             });
}

namespace detail {
struct LerpTap {
  std::size_t i0, i1;
  double w0, w1;
};
// Half-pixel centred source taps for a 2x upsample along one axis.
inline std::vector<LerpTap> upsample_taps(std::size_t n) {
  std::vector<LerpTap> taps(2 * n);
  for (std::size_t o = 0; o < 2 * n; ++o) {
    const double real = std::max(0.0, (static_cast<double>(o) + 0.5) * 0.5 - 0.5);
    const auto i0 = std::min(static_cast<std::size_t>(real), n - 1);
    const std::size_t i1 = i0 + (i0 < n - 1 ? 1 : 0);
    const double l1 = real - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - l1, l1};
  }
  return taps;
}
}  // namespace detail

/// Bilinear 2x upsampling (half-pixel centres, edge clamped).
/// x[H*W, C] -> [(2H)*(2W), C].
inline Tensor upsample_bilinear_x2(const Tensor& x, Extent ext) {
  detail::require_rank(x, 2, "upsample_bilinear_x2");
  const std::size_t C = x.size(1), H = ext.h, W = ext.w;
  if (x.size(0) != H * W || H == 0 || W == 0) throw ShapeError("upsample_bilinear_x2: bad extent");
  auto ty = detail::upsample_taps(H), tx = detail::upsample_taps(W);
  const std::size_t Ho = 2 * H, Wo = 2 * W;
  auto xd = x.data();
  std::vector<double> out(Ho * Wo * C, 0.0);
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      const auto& a = ty[oy];
      const auto& b = tx[ox];
      const std::pair<std::size_t, double> taps[4] = {{a.i0 * W + b.i0, a.w0 * b.w0},
                                                      {a.i0 * W + b.i1, a.w0 * b.w1},
                                                      {a.i1 * W + b.i0, a.w1 * b.w0},
                                                      {a.i1 * W + b.i1, a.w1 * b.w1}};
      double* o = out.data() + (oy * Wo + ox) * C;
      for (const auto& [src, wt] : taps) {
        for (std::size_t c = 0; c < C; ++c) o[c] += wt * xd[src * C + c];
      }
    }
  }
  return detail::make_result(
      {Ho * Wo, C}, std::move(out), "upsample_bilinear_x2", {x},
      [ty = std::move(ty), tx = std::move(tx), Ho, Wo, W, C](detail::Node& self) {
        auto& gx = self.inputs[0]->grad;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const auto& a = ty[oy];
            const auto& b = tx[ox];
            const std::pair<std::size_t, double> taps[4] = {{a.i0 * W + b.i0, a.w0 * b.w0},
                                                            {a.i0 * W + b.i1, a.w0 * b.w1},
                                                            {a.i1 * W + b.i0, a.w1 * b.w0},
                                                            {a.i1 * W + b.i1, a.w1 * b.w1}};
            const double* go = self.grad.data() + (oy * Wo + ox) * C;
            for (const auto& [src, wt] : taps) {
              for (std::size_t c = 0; c < C; ++c) gx[src * C + c] += wt * go[c];
            }
          }
        }
      });
}

/// Concatenates along one axis; all other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const std::size_t ax = detail::normalize_axis(axis, parts[0].dim());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.dim() != out_shape.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t d = 0; d < out_shape.size(); ++d) {
      if (d != ax && p.shape()[d] != parts[0].shape()[d]) {
        throw ShapeError("concat: " + to_string(p.shape()) + " vs " + to_string(parts[0].shape()));
      }
    }
    out_shape[ax] += p.shape()[ax];
  }
  const std::size_t inner = numel(Shape(out_shape.begin() + static_cast<long>(ax) + 1, out_shape.end()));
  const std::size_t outer = numel(Shape(out_shape.begin(), out_shape.begin() + static_cast<long>(ax)));
  const std::size_t out_row = out_shape[ax] * inner;
  std::vector<std::size_t> chunk, offset;
  std::size_t off = 0;
  for (const auto& p : parts) {
    chunk.push_back(p.shape()[ax] * inner);
    offset.push_back(off);
    off += chunk.back();
  }
  std::vector<double> out(numel(out_shape));
  for (std::size_t t = 0; t < parts.size(); ++t) {
    auto pd = parts[t].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.begin() + static_cast<long>(o * chunk[t]), chunk[t],
                  out.begin() + static_cast<long>(o * out_row + offset[t]));
    }
  }
  return detail::make_result(std::move(out_shape), std::move(out), "concat", parts,
                             [chunk, offset, outer, out_row](detail::Node& self) {
                               for (std::size_t t = 0; t < chunk.size(); ++t) {
                                 if (!detail::wants_grad(self, t)) continue;
                                 auto& gp = self.inputs[t]->grad;
                                 for (std::size_t o = 0; o < outer; ++o) {
                                   for (std::size_t i = 0; i < chunk[t]; ++i) {
                                     gp[o * chunk[t] + i] += self.grad[o * out_row + offset[t] + i];
                                   }
                                 }
                               }
                             });
}

/// [C, H, W] -> [H*W, C].
inline Tensor chw_to_hwc(const Tensor& x) {
  detail::require_rank(x, 3, "chw_to_hwc");
  const std::size_t C = x.size(0), HW = x.size(1) * x.size(2);
  auto t = transpose_last(reshape(x, {C, HW}));
  return t;
}

}  // namespace stenet
