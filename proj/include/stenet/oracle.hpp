#pragma once

// Brute-force reference implementations. Everything here is written against
// plain std::vector storage and deliberately shares no code with the tensor
// kernels or model modules: dense -inf masked attention instead of candidate
// lists, full sorts instead of partial selection, pairwise window tests
// instead of window enumeration, and a straight-line network evaluation.
// Sizes are meant to stay small (N <= 256).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

namespace stenet::oracle {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  Mat(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), v(std::move(values)) {}

  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

/// y = x w + b with w stored [in, out].
struct Dense {
  std::size_t in = 0, out = 0;
  std::vector<double> w, b;
};

inline Mat mm(const Mat& a, const Mat& b) {
  Mat o(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols; ++p) s += a(i, p) * b(p, j);
      o(i, j) = s;
    }
  }
  return o;
}

/// a b^T
inline Mat mm_bt(const Mat& a, const Mat& b) {
  Mat o(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.rows; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols; ++p) s += a(i, p) * b(j, p);
      o(i, j) = s;
    }
  }
  return o;
}

inline Mat plus(const Mat& a, const Mat& b) {
  Mat o = a;
  for (std::size_t i = 0; i < o.v.size(); ++i) o.v[i] += b.v[i];
  return o;
}

inline Mat hadamard(const Mat& a, const Mat& b) {
  Mat o = a;
  for (std::size_t i = 0; i < o.v.size(); ++i) o.v[i] *= b.v[i];
  return o;
}

inline Mat scaled(Mat a, double s) {
  for (auto& x : a.v) x *= s;
  return a;
}

inline Mat apply(const Mat& x, const Dense& d) {
  Mat o(x.rows, d.out);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < d.out; ++j) {
      double s = d.b.empty() ? 0.0 : d.b[j];
      for (std::size_t p = 0; p < d.in; ++p) s += x(i, p) * d.w[p * d.out + j];
      o(i, j) = s;
    }
  }
  return o;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Mat gelu(Mat m) {
  for (auto& x : m.v) x = gelu(x);
  return m;
}

/// Softmax of each row with disallowed entries treated as -inf.
inline Mat softmax_rows(const Mat& logits, const std::vector<bool>* allowed = nullptr) {
  const double ninf = -std::numeric_limits<double>::infinity();
  Mat o(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::vector<double> row(logits.cols);
    for (std::size_t j = 0; j < logits.cols; ++j) {
      row[j] = (allowed && !(*allowed)[i * logits.cols + j]) ? ninf : logits(i, j);
    }
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (auto& x : row) {
      x = std::exp(x - mx);
      z += x;
    }
    for (std::size_t j = 0; j < logits.cols; ++j) o(i, j) = row[j] / z;
  }
  return o;
}

inline Mat layer_norm_rows(const Mat& x, const std::vector<double>& gamma, const std::vector<double>& beta,
                           double eps = 1e-5) {
  Mat o(x.rows, x.cols);
  const double n = static_cast<double>(x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mu += x(i, j);
    mu /= n;
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= n;
    for (std::size_t j = 0; j < x.cols; ++j) o(i, j) = gamma[j] * (x(i, j) - mu) / std::sqrt(var + eps) + beta[j];
  }
  return o;
}

// ---------------------------------------------------------------- masks

/// Dense attention with -inf outside `allowed` (rows x keys): returns both
/// the weights and the aggregated values.
struct AttentionResult {
  Mat weights;
  Mat output;
};

inline AttentionResult dense_masked_attention(const Mat& q, const Mat& k, const Mat& v,
                                              const std::vector<bool>& allowed, double scale) {
  AttentionResult r;
  r.weights = softmax_rows(scaled(mm_bt(q, k), scale), &allowed);
  r.output = mm(r.weights, v);
  return r;
}

/// Indices of the k largest entries of `values` among `candidates`, by a
/// full stable sort (ascending index order breaks ties).
inline std::vector<std::size_t> sort_topk(const std::vector<double>& values, std::vector<std::size_t> candidates,
                                          std::size_t k) {
  std::sort(candidates.begin(), candidates.end());
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  if (candidates.size() > k) candidates.resize(k);
  return candidates;
}

/// Pixel-to-superpixel window membership by testing every pair:
/// allowed[i * M + j] iff the Chebyshev cell distance is within radius.
inline std::vector<bool> window_membership(std::size_t h, std::size_t w, std::size_t p, std::size_t radius) {
  const std::size_t gw = w / p, M = (h / p) * gw, N = h * w;
  std::vector<bool> allowed(N * M, false);
  for (std::size_t i = 0; i < N; ++i) {
    const long pr = static_cast<long>((i / w) / p), pc = static_cast<long>((i % w) / p);
    for (std::size_t j = 0; j < M; ++j) {
      const long sr = static_cast<long>(j / gw), sc = static_cast<long>(j % gw);
      allowed[i * M + j] = std::max(std::labs(pr - sr), std::labs(pc - sc)) <= static_cast<long>(radius);
    }
  }
  return allowed;
}

// ---------------------------------------------------------- gather/scatter

inline std::vector<Mat> loop_gather(const Mat& src, const std::vector<std::vector<std::size_t>>& idx) {
  std::vector<Mat> out;
  for (const auto& row : idx) {
    Mat m(row.size(), src.cols);
    for (std::size_t j = 0; j < row.size(); ++j) {
      for (std::size_t c = 0; c < src.cols; ++c) m(j, c) = src(row[j], c);
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// Accumulate every contribution, then divide by the hit count.
inline Mat loop_scatter_mean(std::size_t rows, const std::vector<Mat>& values,
                             const std::vector<std::vector<std::size_t>>& idx) {
  const std::size_t C = values.empty() ? 0 : values[0].cols;
  Mat acc(rows, C);
  std::vector<std::size_t> hits(rows, 0);
  for (std::size_t m = 0; m < idx.size(); ++m) {
    for (std::size_t j = 0; j < idx[m].size(); ++j) {
      ++hits[idx[m][j]];
      for (std::size_t c = 0; c < C; ++c) acc(idx[m][j], c) += values[m](j, c);
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      if (hits[r] > 0) acc(r, c) /= static_cast<double>(hits[r]);
    }
  }
  return acc;
}

// ------------------------------------------------------------ superpixels

struct SpWeights {
  Dense q_pix, k_pix, v_pix, q_sp, k_sp, v_sp;
};

struct SpGrid {
  std::size_t h = 0, w = 0, p = 1, radius = 2, pixel_topk = 9, sp_topk = 0;  // sp_topk 0 -> 9 p^2
};

struct SpResult {
  Mat S, P, A;
};

inline Mat cell_means(const Mat& pixels, const SpGrid& g) {
  const std::size_t gw = g.w / g.p, M = (g.h / g.p) * gw;
  Mat s(M, pixels.cols);
  for (std::size_t cr = 0; cr < g.h / g.p; ++cr) {
    for (std::size_t cc = 0; cc < gw; ++cc) {
      for (std::size_t c = 0; c < pixels.cols; ++c) {
        double acc = 0.0;
        for (std::size_t y = cr * g.p; y < (cr + 1) * g.p; ++y) {
          for (std::size_t x = cc * g.p; x < (cc + 1) * g.p; ++x) acc += pixels(y * g.w + x, c);
        }
        s(cr * gw + cc, c) = acc / static_cast<double>(g.p * g.p);
      }
    }
  }
  return s;
}

/// One refinement step evaluated densely: full N x M and M x N logits,
/// window then top-k masks applied as -inf fills.
inline SpResult superpixel_step(const Mat& S, const Mat& P, const SpWeights& wt, const SpGrid& g) {
  const std::size_t N = P.rows, M = S.rows, C = P.cols;
  const double scale = 1.0 / std::sqrt(static_cast<double>(C));
  const std::size_t sp_topk = g.sp_topk ? g.sp_topk : g.pixel_topk * g.p * g.p;
  const auto window = window_membership(g.h, g.w, g.p, g.radius);

  const Mat a_logits = scaled(mm_bt(apply(P, wt.q_pix), apply(S, wt.k_sp)), scale);
  const Mat b_logits = scaled(mm_bt(apply(S, wt.q_sp), apply(P, wt.k_pix)), scale);

  std::vector<bool> keep_a(N * M, false), keep_b(M * N, false);
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<double> row(a_logits.v.begin() + static_cast<long>(i * M), a_logits.v.begin() + static_cast<long>((i + 1) * M));
    std::vector<std::size_t> cand;
    for (std::size_t j = 0; j < M; ++j) {
      if (window[i * M + j]) cand.push_back(j);
    }
    for (auto j : sort_topk(row, cand, g.pixel_topk)) keep_a[i * M + j] = true;
  }
  for (std::size_t j = 0; j < M; ++j) {
    std::vector<double> row(b_logits.v.begin() + static_cast<long>(j * N), b_logits.v.begin() + static_cast<long>((j + 1) * N));
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < N; ++i) {
      if (window[i * M + j]) cand.push_back(i);
    }
    for (auto i : sort_topk(row, cand, sp_topk)) keep_b[j * N + i] = true;
  }

  SpResult r;
  r.A = softmax_rows(a_logits, &keep_a);
  const Mat b = softmax_rows(b_logits, &keep_b);
  r.P = plus(mm(r.A, apply(S, wt.v_sp)), P);
  r.S = plus(mm(b, apply(P, wt.v_pix)), S);
  return r;
}

inline SpResult superpixel_generate(const Mat& pixels, const SpWeights& wt, const SpGrid& g, std::size_t iters) {
  const std::size_t gw = g.w / g.p, M = (g.h / g.p) * gw;
  SpResult r{cell_means(pixels, g), pixels, Mat(pixels.rows, M)};
  for (std::size_t i = 0; i < pixels.rows; ++i) r.A(i, ((i / g.w) / g.p) * gw + (i % g.w) / g.p) = 1.0;
  for (std::size_t t = 0; t < iters; ++t) r = superpixel_step(r.S, r.P, wt, g);
  return r;
}

// ------------------------------------------------------------------ SAGEM

struct SagemWeights {
  SpWeights sp_rgb, sp_depth;
  Dense q_rgb, k_rgb, v_rgb, q_depth, k_depth, v_depth;
  Dense qs_rgb, ks_rgb, qs_depth, ks_depth;
  Dense ffn1, ffn2;
};

struct SagemResult {
  Mat A_rgb, A_depth, A_att, P_rgb, P_depth, fused, output;
};

inline SagemResult sagem_stepwise(const Mat& f_rgb, const Mat& f_depth, const SagemWeights& wt, const SpGrid& g,
                                  std::size_t iters) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(f_rgb.cols));
  SagemResult r;
  const Mat s_rgb = superpixel_generate(f_rgb, wt.sp_rgb, g, iters).S;
  const Mat s_depth = superpixel_generate(f_depth, wt.sp_depth, g, iters).S;
  // Attention of each superpixel over all pixels.
  r.A_rgb = softmax_rows(scaled(mm_bt(apply(s_rgb, wt.qs_rgb), apply(f_rgb, wt.k_rgb)), scale));
  r.A_depth = softmax_rows(scaled(mm_bt(apply(s_depth, wt.qs_depth), apply(f_depth, wt.k_depth)), scale));
  r.A_att = hadamard(r.A_rgb, r.A_depth);
  // Pixel queries against superpixel keys.
  r.P_rgb = softmax_rows(scaled(mm_bt(apply(f_rgb, wt.q_rgb), apply(s_rgb, wt.ks_rgb)), scale));
  r.P_depth = softmax_rows(scaled(mm_bt(apply(f_depth, wt.q_depth), apply(s_depth, wt.ks_depth)), scale));
  const Mat per_sp_rgb = mm(r.A_att, apply(f_rgb, wt.v_rgb));
  const Mat per_sp_depth = mm(r.A_att, apply(f_depth, wt.v_depth));
  r.fused = plus(mm(r.P_rgb, per_sp_rgb), mm(r.P_depth, per_sp_depth));
  r.output = plus(r.fused, apply(gelu(apply(r.fused, wt.ffn1)), wt.ffn2));
  return r;
}

// ------------------------------------------------------------------ SALRM

struct SalrmWeights {
  SpWeights sp_rgb, sp_depth;
  Dense q_rgb, k_depth, v_rgb, v_depth;
  Dense ffn_rgb1, ffn_rgb2, ffn_depth1, ffn_depth2;
  std::size_t k = 9;
};

struct SalrmResult {
  Mat s_rd;
  std::vector<std::vector<std::size_t>> selected;
  Mat refined_rgb, refined_depth, output;
};

inline SalrmResult salrm_stepwise(const Mat& f_rgb, const Mat& f_depth, const SalrmWeights& wt, const SpGrid& g,
                                  std::size_t iters) {
  const std::size_t N = f_rgb.rows, C = f_rgb.cols;
  const double scale = 1.0 / std::sqrt(static_cast<double>(C));
  SalrmResult r;
  r.s_rd = hadamard(superpixel_generate(f_rgb, wt.sp_rgb, g, iters).A,
                    superpixel_generate(f_depth, wt.sp_depth, g, iters).A);
  const std::size_t M = r.s_rd.cols;
  std::vector<std::size_t> all(N);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<double> col(N);
    for (std::size_t i = 0; i < N; ++i) col[i] = r.s_rd(i, m);
    r.selected.push_back(sort_topk(col, all, wt.k));
  }

  const Mat q = apply(f_rgb, wt.q_rgb), kd = apply(f_depth, wt.k_depth);
  const Mat vr = apply(f_rgb, wt.v_rgb), vd = apply(f_depth, wt.v_depth);
  const auto qg = loop_gather(q, r.selected), kg = loop_gather(kd, r.selected);
  const auto vrg = loop_gather(vr, r.selected), vdg = loop_gather(vd, r.selected);
  std::vector<Mat> out_rgb, out_depth;
  for (std::size_t m = 0; m < M; ++m) {
    const Mat att = softmax_rows(scaled(mm_bt(qg[m], kg[m]), scale));
    out_rgb.push_back(mm(att, vrg[m]));
    out_depth.push_back(mm(att, vdg[m]));
  }
  r.refined_rgb = loop_scatter_mean(N, out_rgb, r.selected);
  r.refined_depth = loop_scatter_mean(N, out_depth, r.selected);
  const Mat xr = plus(r.refined_rgb, f_rgb), xd = plus(r.refined_depth, f_depth);
  r.output = plus(plus(xr, apply(gelu(apply(xr, wt.ffn_rgb1)), wt.ffn_rgb2)),
                  plus(xd, apply(gelu(apply(xd, wt.ffn_depth1)), wt.ffn_depth2)));
  return r;
}

// ---------------------------------------------------------------- network

struct EncoderStageWeights {
  std::size_t kernel = 2, cin = 0, cout = 0;
  std::vector<double> w, b, gamma, beta;  // w[(dy*k+dx)*cin+ci][co]
};

struct FusionWeights {
  Dense proj, q, k, v;
  bool has_cross = false;
  Dense cross;
};

struct DecoderWeights {
  std::vector<double> dw, dw_bias, gamma, beta;  // dw[tap][c]
  Dense pw1, pw2;
  std::vector<double> head_gamma, head_beta;
  Dense head;
  bool has_in = false;
  Dense in_proj;
};

struct NetWeights {
  std::size_t input_size = 0, radius = 2, iters = 2;
  std::array<std::size_t, 4> channels{}, cells{};
  std::array<EncoderStageWeights, 4> enc_rgb, enc_depth;
  std::array<SagemWeights, 4> sagem;
  std::array<SalrmWeights, 4> salrm;
  std::array<FusionWeights, 4> fusion;
  std::array<DecoderWeights, 4> decoder;
};

/// Bilinear 2x upsample of a row-major [h*w, c] map, half-pixel centres.
inline Mat upsample2(const Mat& x, std::size_t h, std::size_t w) {
  Mat o(4 * h * w, x.cols);
  auto src = [](std::size_t out, std::size_t n, std::size_t& lo, std::size_t& hi, double& frac) {
    double s = (static_cast<double>(out) + 0.5) / 2.0 - 0.5;
    if (s < 0.0) s = 0.0;
    lo = static_cast<std::size_t>(std::floor(s));
    if (lo > n - 1) lo = n - 1;
    hi = lo + 1 < n ? lo + 1 : lo;
    frac = s - static_cast<double>(lo);
  };
  for (std::size_t oy = 0; oy < 2 * h; ++oy) {
    std::size_t y0, y1;
    double fy;
    src(oy, h, y0, y1, fy);
    for (std::size_t ox = 0; ox < 2 * w; ++ox) {
      std::size_t x0, x1;
      double fx;
      src(ox, w, x0, x1, fx);
      for (std::size_t c = 0; c < x.cols; ++c) {
        o(oy * 2 * w + ox, c) = (1 - fy) * ((1 - fx) * x(y0 * w + x0, c) + fx * x(y0 * w + x1, c)) +
                                fy * ((1 - fx) * x(y1 * w + x0, c) + fx * x(y1 * w + x1, c));
      }
    }
  }
  return o;
}

/// The whole forward pass written out in one place. rgb is [3][H][W] and
/// depth [1][H][W], both row-major. Returns the four maps, finest first,
/// each input_size^2 values.
inline std::array<std::vector<double>, 4> straightline_forward(const std::vector<double>& rgb,
                                                               const std::vector<double>& depth,
                                                               const NetWeights& nw) {
  const std::size_t S = nw.input_size, HW = S * S;
  // Channels-last inputs; depth copied into three channels.
  Mat x_rgb(HW, 3), x_depth(HW, 3);
  for (std::size_t i = 0; i < HW; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      x_rgb(i, c) = rgb[c * HW + i];
      x_depth(i, c) = depth[i];
    }
  }

  // Encoders: non-overlapping k x k convolutions, each followed by layer norm.
  std::array<Mat, 4> f_rgb, f_depth;
  std::array<std::size_t, 4> side{};
  for (int stream = 0; stream < 2; ++stream) {
    Mat cur = stream == 0 ? x_rgb : x_depth;
    std::size_t s = S;
    for (std::size_t st = 0; st < 4; ++st) {
      const auto& e = stream == 0 ? nw.enc_rgb[st] : nw.enc_depth[st];
      const std::size_t so = s / e.kernel;
      Mat out(so * so, e.cout);
      for (std::size_t oy = 0; oy < so; ++oy) {
        for (std::size_t ox = 0; ox < so; ++ox) {
          for (std::size_t co = 0; co < e.cout; ++co) {
            double acc = e.b[co];
            for (std::size_t dy = 0; dy < e.kernel; ++dy) {
              for (std::size_t dx = 0; dx < e.kernel; ++dx) {
                for (std::size_t ci = 0; ci < e.cin; ++ci) {
                  acc += e.w[((dy * e.kernel + dx) * e.cin + ci) * e.cout + co] *
                         cur((oy * e.kernel + dy) * s + ox * e.kernel + dx, ci);
                }
              }
            }
            out(oy * so + ox, co) = acc;
          }
        }
      }
      cur = layer_norm_rows(out, e.gamma, e.beta);
      s = so;
      side[st] = s;
      (stream == 0 ? f_rgb : f_depth)[st] = cur;
    }
  }

  // Global and local branches per stage.
  std::array<Mat, 4> global, local;
  for (std::size_t st = 0; st < 4; ++st) {
    SpGrid g{side[st], side[st], nw.cells[st], nw.radius, 9, 0};
    global[st] = sagem_stepwise(f_rgb[st], f_depth[st], nw.sagem[st], g, nw.iters).output;
    local[st] = salrm_stepwise(f_rgb[st], f_depth[st], nw.salrm[st], g, nw.iters).output;
  }

  // Fusion, coarsest first.
  std::array<Mat, 4> fused;
  for (std::size_t st = 4; st-- > 0;) {
    const auto& fw = nw.fusion[st];
    const std::size_t N = side[st] * side[st], C = nw.channels[st];
    Mat cat(N, 2 * C);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        cat(i, c) = global[st](i, c);
        cat(i, C + c) = local[st](i, c);
      }
    }
    Mat x = apply(cat, fw.proj);
    if (st < 3) x = plus(x, apply(upsample2(fused[st + 1], side[st + 1], side[st + 1]), fw.cross));
    const Mat att = softmax_rows(scaled(mm_bt(apply(x, fw.q), apply(x, fw.k)), 1.0 / std::sqrt(static_cast<double>(C))));
    fused[st] = plus(x, mm(att, apply(x, fw.v)));
  }

  // Decoder blocks with saliency heads.
  std::array<std::vector<double>, 4> maps;
  Mat prev;
  for (std::size_t st = 4; st-- > 0;) {
    const auto& dw = nw.decoder[st];
    const std::size_t s = side[st], C = nw.channels[st];
    Mat x = fused[st];
    if (st < 3) x = plus(x, apply(prev, dw.in_proj));
    Mat conv(s * s, C);
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t xx = 0; xx < s; ++xx) {
        for (std::size_t c = 0; c < C; ++c) {
          double acc = dw.dw_bias[c];
          for (int ky = 0; ky < 5; ++ky) {
            for (int kx = 0; kx < 5; ++kx) {
              const long sy = static_cast<long>(y) + ky - 2, sx = static_cast<long>(xx) + kx - 2;
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(s) || sx >= static_cast<long>(s)) continue;
              acc += dw.dw[static_cast<std::size_t>(ky * 5 + kx) * C + c] *
                     x(static_cast<std::size_t>(sy) * s + static_cast<std::size_t>(sx), c);
            }
          }
          conv(y * s + xx, c) = acc;
        }
      }
    }
    const Mat h = apply(gelu(apply(layer_norm_rows(conv, dw.gamma, dw.beta), dw.pw1)), dw.pw2);
    const Mat y = upsample2(plus(x, h), s, s);
    Mat logits = apply(layer_norm_rows(y, dw.head_gamma, dw.head_beta), dw.head);
    for (std::size_t cur = 2 * s; cur < S; cur *= 2) logits = upsample2(logits, cur, cur);
    maps[st].resize(S * S);
    for (std::size_t i = 0; i < S * S; ++i) maps[st][i] = 1.0 / (1.0 + std::exp(-logits.v[i]));
    prev = y;
  }
  return maps;
}

// ------------------------------------------------------------------- loss

/// Scalar-loop BCE + IoU with the same log floor as the production loss.
inline std::array<double, 2> hybrid_loss_loop(const std::vector<double>& s, const std::vector<double>& g,
                                              double floor = 1e-7) {
  double bce = 0.0, inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double ls = std::log(std::max(s[i], floor));
    const double lns = std::log(std::max(1.0 - s[i], floor));
    bce -= g[i] * ls + (1.0 - g[i]) * lns;
    inter += s[i] * g[i];
    uni += s[i] + g[i] - s[i] * g[i];
  }
  bce /= static_cast<double>(s.size());
  return {bce, uni == 0.0 ? 0.0 : 1.0 - inter / uni};
}

}  // namespace stenet::oracle
