#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "stenet/gradcheck.hpp"
#include "stenet/ops.hpp"

using namespace stenet;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v, bool rg = false) { return Tensor({r, c}, std::move(v), rg); }

void expect_near_all(std::span<const double> a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<double>(6)));
}

TEST(Tensor, ScalarAndItem) {
  const auto s = Tensor::scalar(2.5);
  EXPECT_EQ(s.dim(), 0u);
  EXPECT_EQ(s.item(), 2.5);
  EXPECT_THROW(Tensor::zeros({2}).item(), ShapeError);
}

TEST(Tensor, AllFiniteFlagsNan) {
  EXPECT_TRUE(Tensor::zeros({3}).all_finite());
  EXPECT_FALSE(Tensor({2}, {1.0, std::nan("")}).all_finite());
  EXPECT_FALSE(log(Tensor({1}, {0.0})).all_finite());
}

TEST(Tensor, MutableDataOnlyOnLeaves) {
  auto a = Tensor::zeros({2}, true);
  EXPECT_NO_THROW(a.mutable_data());
  auto b = a + a;
  EXPECT_THROW(b.mutable_data(), std::logic_error);
}

TEST(Rng, SplitmixReferenceStream) {
  // Published splitmix64 outputs for state 0.
  Rng rng(0);
  EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFull);
  EXPECT_EQ(rng.next_u64(), 0x6E789E6AA1B965F4ull);
  EXPECT_EQ(rng.next_u64(), 0x06C45D188009454Full);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    const double x = c.next_f64();
    ASSERT_GE(x, 0.0);
    ASSERT_LT(x, 1.0);
  }
}

TEST(Rng, XavierBound) {
  Rng rng(3);
  const auto w = Tensor::xavier({10, 20}, 10, 20, rng);
  const double bound = std::sqrt(6.0 / 30.0);
  for (double v : w.data()) EXPECT_LE(std::abs(v), bound);
  EXPECT_TRUE(w.requires_grad());
}

TEST(Matmul, IdentityAndProjector) {
  const auto eye = mat(2, 2, {1, 0, 0, 1});
  const auto m = mat(2, 2, {1, 2, 3, 4});
  expect_near_all(matmul(eye, m).data(), {1, 2, 3, 4}, 0.0);
  expect_near_all(matmul(mat(2, 2, {1, 0, 0, 0}), mat(2, 2, {5, 6, 7, 8})).data(), {5, 6, 0, 0}, 0.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(11);
  const auto a = Tensor::uniform({3, 4}, rng, -1, 1), b = Tensor::uniform({4, 2}, rng, -1, 1);
  std::vector<double> ref(6, 0.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j)
      for (int p = 0; p < 4; ++p) ref[i * 2 + j] += a[i * 4 + p] * b[p * 2 + j];
  expect_near_all(matmul(a, b).data(), ref, 1e-12);
}

TEST(Matmul, BatchedSharesRankTwoOperand) {
  Rng rng(12);
  const auto a = Tensor::uniform({2, 3, 4}, rng, -1, 1), b = Tensor::uniform({4, 5}, rng, -1, 1);
  const auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t p = 0; p < 4; ++p) s += a[n * 12 + i * 4 + p] * b[p * 5 + j];
        EXPECT_NEAR(c[n * 15 + i * 5 + j], s, 1e-12);
      }
    }
  }
  EXPECT_THROW(matmul(Tensor::zeros({3, 4}), Tensor::zeros({3, 4})), ShapeError);
}

TEST(Softmax, ClosedForms) {
  expect_near_all(softmax(Tensor({4}, {1, 1, 1, 1}), 0).data(), {0.25, 0.25, 0.25, 0.25}, 1e-15);
  expect_near_all(softmax(Tensor({2}, {0, std::log(3.0)}), 0).data(), {0.25, 0.75}, 1e-15);
  const auto big = softmax(Tensor({2}, {1000, 1001}), 0);
  EXPECT_TRUE(big.all_finite());
  expect_near_all(big.data(), softmax(Tensor({2}, {0, 1}), 0).to_vector(), 1e-15);
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(5);
  const auto x = Tensor::uniform({4, 6}, rng, -3, 3);
  const auto shifted = affine(x, 1.0, 17.25);
  for (int axis : {0, 1}) expect_near_all(softmax(shifted, axis).data(), softmax(x, axis).to_vector(), 1e-12);
}

TEST(Backward, LinearAndQuadratic) {
  Rng rng(1);
  auto x = Tensor::uniform({3, 2}, rng, -1, 1, true);
  backward(sum(x));
  expect_near_all(x.grad(), std::vector<double>(6, 1.0), 0.0);
  x.zero_grad();
  backward(sum(x * x));
  std::vector<double> twice;
  for (double v : x.data()) twice.push_back(2 * v);
  expect_near_all(x.grad(), twice, 1e-15);
}

TEST(Backward, RejectsNonScalarAndUntracked) {
  auto x = Tensor::zeros({3}, true);
  EXPECT_THROW(backward(x + x), std::exception);
  EXPECT_THROW(backward(sum(Tensor::zeros({3}))), std::exception);
}

TEST(Backward, AccumulatesThroughSharedInputs) {
  auto x = Tensor({1}, {3.0}, true);
  const auto y = x * x + x;  // dy/dx = 2x + 1
  backward(sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(NoGrad, StopsRecording) {
  auto x = Tensor::zeros({2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = x + x;
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tape, TopologicalOrderAndCoverage) {
  Rng rng(9);
  auto a = Tensor::uniform({3, 3}, rng, -1, 1, true);
  auto b = Tensor::uniform({3, 3}, rng, -1, 1, true);
  const auto c = Tensor::uniform({3, 3}, rng, -1, 1);  // constant
  const auto loss = sum(sigmoid(matmul(a, b) + c) * a);
  const auto tape = Tape::record_from(loss);
  std::set<std::uint64_t> done;
  for (const auto& e : tape.entries()) {
    for (auto in : e.input_ids) {
      if (tape.contains(in)) {
        EXPECT_TRUE(done.count(in)) << "input recorded after its consumer";
      }
    }
    done.insert(e.output_id);
  }
  EXPECT_TRUE(tape.contains(a.id()));
  EXPECT_TRUE(tape.contains(b.id()));
  EXPECT_FALSE(tape.contains(c.id()));
  backward(loss);
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
  EXPECT_FALSE(c.has_grad());
}

TEST(Determinism, SameSeedSameOps) {
  auto run = [] {
    Rng rng(77);
    const auto a = Tensor::uniform({4, 5}, rng, -1, 1), b = Tensor::uniform({5, 3}, rng, -1, 1);
    return softmax(gelu(matmul(a, b)), 1).to_vector();
  };
  EXPECT_EQ(run(), run());
}

// ------------------------------------------------ finite-difference checks

namespace {

void expect_gradcheck(const std::function<Tensor()>& fn, ParamList params) {
  const auto r = gradcheck(fn, std::move(params));
  EXPECT_LT(r.worst_rel_err, 1e-4) << r.worst_param << "[" << r.worst_index << "] analytic " << r.worst_analytic
                                   << " numeric " << r.worst_numeric;
  EXPECT_GT(r.coords, 0u);
}

}  // namespace

TEST(GradCheck, ElementwiseAndBroadcast) {
  Rng rng(21);
  auto a = Tensor::uniform({3, 4}, rng, 0.5, 2, true), b = Tensor::uniform({4}, rng, 0.5, 2, true);
  const auto w = Tensor::uniform({3, 4}, rng, -1, 1);
  expect_gradcheck([&] { return sum((add(a, b) * sub(a, b) + div(a, b)) * w); }, {{"a", a}, {"b", b}});
}

TEST(GradCheck, UnaryOps) {
  Rng rng(22);
  auto x = Tensor::uniform({2, 5}, rng, 0.2, 2, true);
  const auto w = Tensor::uniform({2, 5}, rng, -1, 1);
  expect_gradcheck([&] { return sum((sigmoid(x) + gelu(x) + exp(x) + log(x) + affine(x, 2, 1)) * w); }, {{"x", x}});
  expect_gradcheck([&] { return sum(clamp_min(x, 0.9) * w); }, {{"x", x}});
}

TEST(GradCheck, MatmulLinearTranspose) {
  Rng rng(23);
  auto a = Tensor::uniform({2, 3, 4}, rng, -1, 1, true), b = Tensor::uniform({4, 5}, rng, -1, 1, true);
  auto bias = Tensor::uniform({5}, rng, -1, 1, true);
  const auto w = Tensor::uniform({2, 3, 5}, rng, -1, 1);
  expect_gradcheck([&] { return sum(linear(a, b, bias) * w); }, {{"a", a}, {"b", b}, {"bias", bias}});
  auto c = Tensor::uniform({3, 4}, rng, -1, 1, true);
  const auto w2 = Tensor::uniform({2, 3, 3}, rng, -1, 1);
  expect_gradcheck([&] { return sum(matmul(a, transpose_last(c)) * w2); }, {{"a", a}, {"c", c}});
}

TEST(GradCheck, SoftmaxAndReductions) {
  Rng rng(24);
  auto x = Tensor::uniform({3, 4}, rng, -2, 2, true);
  const auto w = Tensor::uniform({3, 4}, rng, -1, 1);
  expect_gradcheck([&] { return sum(softmax(x, 0) * w) + sum(softmax(x, 1) * w) + mean(x * x); }, {{"x", x}});
  expect_gradcheck([&] { return sum(reshape(x, {4, 3}) * reshape(w, {4, 3})); }, {{"x", x}});
}

TEST(GradCheck, LayerNorm) {
  Rng rng(25);
  auto x = Tensor::uniform({4, 6}, rng, -2, 2, true);
  auto g = Tensor::uniform({6}, rng, 0.5, 1.5, true), b = Tensor::uniform({6}, rng, -1, 1, true);
  const auto w = Tensor::uniform({4, 6}, rng, -1, 1);
  expect_gradcheck([&] { return sum(layer_norm(x, g, b) * w); }, {{"x", x}, {"gamma", g}, {"beta", b}});
}

TEST(GradCheck, ConcatAndLayout) {
  Rng rng(26);
  auto a = Tensor::uniform({3, 2}, rng, -1, 1, true), b = Tensor::uniform({3, 4}, rng, -1, 1, true);
  const auto w = Tensor::uniform({3, 6}, rng, -1, 1);
  expect_gradcheck([&] { return sum(concat({a, b}, 1) * w); }, {{"a", a}, {"b", b}});
  auto chw = Tensor::uniform({2, 3, 4}, rng, -1, 1, true);
  const auto w2 = Tensor::uniform({12, 2}, rng, -1, 1);
  expect_gradcheck([&] { return sum(chw_to_hwc(chw) * w2); }, {{"chw", chw}});
}
