#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "stenet/gradcheck.hpp"
#include "stenet/ops.hpp"

using namespace stenet;

namespace {

std::vector<std::vector<std::size_t>> nested(const IndexLists& l) { return l.to_nested(); }

Tensor random_hwc(Rng& rng, std::size_t hw, std::size_t c, bool rg = false) {
  return Tensor::uniform({hw, c}, rng, -1, 1, rg);
}

}  // namespace

TEST(IndexLists, RejectsOutOfDomain) {
  EXPECT_THROW(IndexLists(3, {{0, 3}}), IndexError);
  const IndexLists l(4, {{0, 2}, {3}});
  EXPECT_EQ(l.rows(), 2u);
  EXPECT_EQ(l.nnz(), 3u);
  EXPECT_FALSE(l.uniform());
  EXPECT_THROW(l.width(), ShapeError);
  EXPECT_TRUE(l.contains(0, 2));
  EXPECT_FALSE(l.contains(1, 2));
}

TEST(MaskedSoftmax, ZeroOutsideMaskAndRenormalized) {
  const Tensor x({1, 3}, {5, 9, 2});
  const SparseMask mask(3, {{0, 2}});
  const auto y = masked_softmax(x, mask, 1);
  const double e = std::exp(3.0);
  EXPECT_NEAR(y[0], e / (1 + e), 1e-12);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_NEAR(y[2], 1 / (1 + e), 1e-12);
  EXPECT_NEAR(y[0], 0.9526, 1e-4);
  EXPECT_NEAR(y[2], 0.0474, 1e-4);
}

TEST(MaskedSoftmax, ColumnAxis) {
  const Tensor x({3, 2}, {1, 0, 2, 0, 3, 0});
  const SparseMask mask(3, {{0, 1, 2}, {1}});
  const auto y = masked_softmax(x, mask, 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(y[0], std::exp(1.0) / z, 1e-12);
  EXPECT_NEAR(y[4], std::exp(3.0) / z, 1e-12);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[3], 1.0);
  EXPECT_THROW(masked_softmax(x, SparseMask(3, {{0}}), 0), ShapeError);
  EXPECT_THROW(masked_softmax(x, SparseMask(2, {{0}, {}, {1}}), 1), std::invalid_argument);
}

TEST(MaskedScores, EqualsDenseProductOnMask) {
  Rng rng(4);
  const auto q = random_hwc(rng, 5, 3), k = random_hwc(rng, 4, 3);
  const SparseMask mask(4, {{0, 1}, {3}, {0, 1, 2, 3}, {2}, {1, 3}});
  const auto s = masked_scores(q, k, mask, 0.5);
  const auto dense = matmul(q, transpose_last(k));
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(s[r * 4 + c], mask.contains(r, c) ? 0.5 * dense[r * 4 + c] : 0.0, 1e-14);
    }
  }
}

TEST(SparseMatmul, IgnoresUnmaskedWeights) {
  Rng rng(5);
  const auto w = Tensor::uniform({2, 3}, rng, -1, 1), v = random_hwc(rng, 3, 2);
  const SparseMask mask(3, {{0, 2}, {1}});
  const auto y = sparse_matmul(w, mask, v);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_NEAR(y[c], w[0] * v[c] + w[2] * v[4 + c], 1e-14);
    EXPECT_NEAR(y[2 + c], w[4] * v[2 + c], 1e-14);
  }
}

TEST(TopK, ClosedForms) {
  EXPECT_EQ(nested(topk_indices(Tensor({1, 5}, {3, 1, 4, 1, 5}), 2)), (std::vector<std::vector<std::size_t>>{{4, 2}}));
  EXPECT_EQ(nested(topk_indices(Tensor({1, 3}, {7, 7, 7}), 2)), (std::vector<std::vector<std::size_t>>{{0, 1}}));
  EXPECT_THROW(topk_indices(Tensor({1, 3}, {1, 2, 3}), 0), std::invalid_argument);
}

TEST(TopK, ShortRowsReturnAllCandidates) {
  const Tensor x({2, 4}, {1, 9, 3, 4, 8, 7, 6, 5});
  const SparseMask within(4, {{0, 2}, {1, 2, 3}});
  EXPECT_EQ(nested(topk_indices(x, 3, within)), (std::vector<std::vector<std::size_t>>{{2, 0}, {1, 2, 3}}));
}

TEST(TopK, PropertyDescendingAndMaximal) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 1 + rng.below(12);
    const int k = 1 + static_cast<int>(rng.below(C));
    std::vector<double> v(C);
    for (auto& x : v) x = static_cast<double>(rng.below(4));  // many ties
    const auto top = topk_indices(Tensor({1, C}, v), k);
    const auto idx = top.row(0);
    ASSERT_EQ(idx.size(), static_cast<std::size_t>(k));
    for (std::size_t j = 1; j < idx.size(); ++j) {
      EXPECT_TRUE(v[idx[j - 1]] > v[idx[j]] || (v[idx[j - 1]] == v[idx[j]] && idx[j - 1] < idx[j]));
    }
    for (std::size_t c = 0; c < C; ++c) {
      if (std::find(idx.begin(), idx.end(), c) != idx.end()) continue;
      EXPECT_LE(v[c], v[idx.back()]);
      if (v[c] == v[idx.back()]) {
        EXPECT_GT(c, idx.back());
      }
    }
  }
}

TEST(SelectionTrace, DistinguishesSelections) {
  std::uint64_t a, b, c;
  {
    SelectionTrace t;
    topk_indices(Tensor({1, 3}, {1, 2, 3}), 2);
    a = t.fingerprint();
  }
  {
    SelectionTrace t;
    topk_indices(Tensor({1, 3}, {1, 5, 3}), 2);
    b = t.fingerprint();
  }
  {
    SelectionTrace t;
    topk_indices(Tensor({1, 3}, {0, 2, 3}), 2);
    c = t.fingerprint();
  }
  EXPECT_EQ(a, c);
  EXPECT_NE(a, b);
}

TEST(Gather, ClosedForm) {
  const Tensor src({3, 1}, {1, 2, 3});
  const auto g = gather_rows(src, IndexMatrix(3, {{2, 0}}));
  ASSERT_EQ(g.shape(), (Shape{1, 2, 1}));
  EXPECT_EQ(g.to_vector(), (std::vector<double>{3, 1}));
}

TEST(ScatterMean, SingleWriteAndDuplicates) {
  const Tensor single({1, 1, 2}, {4, 6});
  const auto a = scatter_mean(3, single, IndexMatrix(3, {{1}}));
  EXPECT_EQ(a.to_vector(), (std::vector<double>{0, 0, 4, 6, 0, 0}));
  const Tensor dup({2, 2, 1}, {1, 2, 3, 10});
  const auto b = scatter_mean(3, dup, IndexMatrix(3, {{0, 2}, {2, 1}}));
  EXPECT_EQ(b.to_vector(), (std::vector<double>{1, 10, 2.5}));
}

TEST(ScatterMean, InvertsGatherOnPartition) {
  Rng rng(8);
  const auto src = random_hwc(rng, 6, 3);
  const IndexMatrix idx(6, {{4, 0}, {1, 5}, {3, 2}});
  const auto back = scatter_mean(6, gather_rows(src, idx), idx);
  for (std::size_t i = 0; i < src.numel(); ++i) EXPECT_DOUBLE_EQ(back[i], src[i]);
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  Rng rng(9);
  const auto x = Tensor::uniform({5, 8}, rng, -4, 7);
  const auto y = layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}), 0.0);
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 8; ++c) m += y[r * 8 + c];
    m /= 8;
    for (std::size_t c = 0; c < 8; ++c) v += (y[r * 8 + c] - m) * (y[r * 8 + c] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 8, 1.0, 1e-12);
  }
}

TEST(DepthwiseConv, DeltaKernelIsIdentity) {
  Rng rng(10);
  const Extent ext{5, 4};
  const auto x = random_hwc(rng, ext.pixels(), 3);
  std::vector<double> w(25 * 3, 0.0);
  for (std::size_t c = 0; c < 3; ++c) w[12 * 3 + c] = 1.0;
  const auto y = depthwise_conv5x5(x, ext, Tensor({25, 3}, w), Tensor::zeros({3}));
  EXPECT_EQ(y.to_vector(), x.to_vector());
}

TEST(DepthwiseConv, ZeroPaddedBorder) {
  const Extent ext{3, 3};
  const auto x = Tensor::full({9, 1}, 1.0);
  const auto y = depthwise_conv5x5(x, ext, Tensor::full({25, 1}, 1.0), Tensor::zeros({1}));
  EXPECT_EQ(y[0], 9.0);  // corner sees a 3x3 in-bounds patch
  EXPECT_EQ(y[4], 9.0);
  EXPECT_EQ(y[1], 9.0);
}

TEST(Upsample, PreservesConstantAndDoublesSide) {
  const Extent ext{3, 2};
  const auto y = upsample_bilinear_x2(Tensor::full({6, 2}, 0.75), ext);
  ASSERT_EQ(y.shape(), (Shape{24, 2}));
  for (double v : y.data()) EXPECT_NEAR(v, 0.75, 1e-15);
}

TEST(Upsample, HalfPixelInterpolation) {
  const auto y = upsample_bilinear_x2(Tensor({2, 1}, {0, 4}), Extent{1, 2});
  EXPECT_EQ(y.to_vector(), (std::vector<double>{0, 1, 3, 4, 0, 1, 3, 4}));
}

TEST(Patchify, StridedConvMatchesLoop) {
  Rng rng(12);
  const Extent ext{4, 4};
  const std::size_t C = 2, K = 2, O = 3;
  const auto x = random_hwc(rng, 16, C);
  const auto w = Tensor::uniform({K * K * C, O}, rng, -1, 1), b = Tensor::uniform({O}, rng, -1, 1);
  const auto y = strided_conv(x, ext, w, b, K);
  ASSERT_EQ(y.shape(), (Shape{4, O}));
  for (std::size_t oy = 0; oy < 2; ++oy) {
    for (std::size_t ox = 0; ox < 2; ++ox) {
      for (std::size_t o = 0; o < O; ++o) {
        double acc = b[o];
        for (std::size_t dy = 0; dy < K; ++dy)
          for (std::size_t dx = 0; dx < K; ++dx)
            for (std::size_t c = 0; c < C; ++c)
              acc += x[((oy * K + dy) * 4 + ox * K + dx) * C + c] * w[((dy * K + dx) * C + c) * O + o];
        EXPECT_NEAR(y[(oy * 2 + ox) * O + o], acc, 1e-13);
      }
    }
  }
  EXPECT_THROW(patchify(x, Extent{4, 4}, 3), ShapeError);
}

TEST(AvgPool, CellMeans) {
  const Tensor x({16, 1}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  EXPECT_EQ(avgpool_grid(x, Extent{4, 4}, 2).to_vector(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(FlopMeter, CountsKernelWork) {
  Rng rng(13);
  const auto a = Tensor::uniform({3, 4}, rng, -1, 1), b = Tensor::uniform({4, 5}, rng, -1, 1);
  FlopMeter outer;
  {
    FlopMeter inner;
    matmul(a, b);
    EXPECT_EQ(inner.count(), 2u * 3 * 4 * 5);
  }
  EXPECT_EQ(outer.count(), 0u);
}

// ------------------------------------------------ finite-difference checks

namespace {

void expect_gradcheck(const std::function<Tensor()>& fn, ParamList params) {
  const auto r = gradcheck(fn, std::move(params));
  EXPECT_LT(r.worst_rel_err, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
  EXPECT_GT(r.coords, 0u);
}

}  // namespace

TEST(GradCheck, SparseAttentionKernels) {
  Rng rng(31);
  auto q = random_hwc(rng, 5, 3, true), k = random_hwc(rng, 4, 3, true), v = random_hwc(rng, 4, 2, true);
  const SparseMask mask(4, {{0, 1}, {3}, {0, 1, 2, 3}, {2}, {1, 3}});
  const auto w = Tensor::uniform({5, 2}, rng, -1, 1);
  expect_gradcheck(
      [&] {
        const auto s = masked_scores(q, k, mask, 0.7);
        return sum(sparse_matmul(masked_softmax(s, mask, 1), mask, v) * w);
      },
      {{"q", q}, {"k", k}, {"v", v}});
  const SparseMask cols(5, {{0, 2, 4}, {0, 1, 2, 4}, {2, 3}, {1, 2, 4}});
  const auto w2 = Tensor::uniform({5, 4}, rng, -1, 1);
  expect_gradcheck([&] { return sum(masked_softmax(matmul(q, transpose_last(k)), cols, 0) * w2); },
                   {{"q", q}, {"k", k}});
}

TEST(GradCheck, GatherScatter) {
  Rng rng(32);
  auto src = random_hwc(rng, 6, 2, true);
  const IndexMatrix idx(6, {{4, 0, 1}, {1, 5, 4}});
  const auto w = Tensor::uniform({6, 2}, rng, -1, 1);
  expect_gradcheck([&] { return sum(scatter_mean(6, gelu(gather_rows(src, idx)), idx) * w); }, {{"src", src}});
}

TEST(GradCheck, SpatialKernels) {
  Rng rng(33);
  const Extent ext{4, 6};
  auto x = random_hwc(rng, 24, 2, true);
  auto dw = Tensor::uniform({25, 2}, rng, -1, 1, true), db = Tensor::uniform({2}, rng, -1, 1, true);
  const auto w = Tensor::uniform({96, 2}, rng, -1, 1);
  expect_gradcheck([&] { return sum(upsample_bilinear_x2(depthwise_conv5x5(x, ext, dw, db), ext) * w); },
                   {{"x", x}, {"dw", dw}, {"db", db}});
  auto cw = Tensor::uniform({8, 3}, rng, -1, 1, true);
  const auto cb = Tensor::zeros({3});
  const auto w2 = Tensor::uniform({6, 3}, rng, -1, 1), w3 = Tensor::uniform({6, 2}, rng, -1, 1);
  expect_gradcheck(
      [&] { return sum(strided_conv(x, ext, cw, cb, 2) * w2) + sum(avgpool_grid(x, ext, 2) * w3); },
      {{"x", x}, {"cw", cw}});
}
