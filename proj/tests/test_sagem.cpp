#include <gtest/gtest.h>

#include "stenet/nn.hpp"
#include "stenet/sagem.hpp"

using namespace stenet;
namespace sp = stenet::superpixel;

namespace {

struct Fixture {
  sp::GridGeometry geo;
  Tensor f_rgb, f_depth;
  sagem::Params params;
};

Fixture make(std::size_t side, std::size_t p, std::size_t C, std::uint64_t seed) {
  Rng rng(seed);
  const auto geo = sp::GridGeometry::make(side, side, p);
  auto f_rgb = Tensor::uniform({geo.N(), C}, rng, -1, 1);
  auto f_depth = Tensor::uniform({geo.N(), C}, rng, -1, 1);
  return {geo, f_rgb, f_depth, sagem::Params::init(C, rng)};
}

void expect_row_stochastic(const Tensor& t) {
  const std::size_t R = t.size(0), C = t.size(1);
  for (std::size_t r = 0; r < R; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      ASSERT_GE(t[r * C + c], 0.0);
      s += t[r * C + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

}  // namespace

TEST(Sagem, MapShapesAndNormalization) {
  const auto fx = make(8, 2, 4, 1);
  NoGradGuard no_grad;
  const auto g = sagem::global_maps(fx.f_rgb, fx.f_depth, fx.params, fx.geo, {}, 2);
  const Shape sp_by_pix{fx.geo.M(), fx.geo.N()}, pix_by_sp{fx.geo.N(), fx.geo.M()};
  EXPECT_EQ(g.A_rgb.shape(), sp_by_pix);
  EXPECT_EQ(g.A_att.shape(), sp_by_pix);
  EXPECT_EQ(g.P_depth.shape(), pix_by_sp);
  expect_row_stochastic(g.A_rgb);
  expect_row_stochastic(g.A_depth);
  expect_row_stochastic(g.P_rgb);
  expect_row_stochastic(g.P_depth);
  for (std::size_t i = 0; i < g.A_att.numel(); ++i) EXPECT_DOUBLE_EQ(g.A_att[i], g.A_rgb[i] * g.A_depth[i]);
}

TEST(Sagem, OutputShapePreserved) {
  const auto fx = make(4, 2, 3, 2);
  NoGradGuard no_grad;
  const auto y = sagem::forward(fx.f_rgb, fx.f_depth, fx.params, fx.geo, {}, 2);
  EXPECT_EQ(y.shape(), fx.f_rgb.shape());
  EXPECT_TRUE(y.all_finite());
  EXPECT_THROW(sagem::forward(fx.f_rgb, Tensor::zeros({16, 2}), fx.params, fx.geo, {}, 2), ShapeError);
}

TEST(Sagem, SingleSuperpixelRedistributesOneAggregate) {
  // With M = 1 every pixel receives the same aggregate, so before the FFN
  // all pixel rows are equal.
  auto fx = make(4, 4, 3, 3);
  zero_fill([&] {
    ParamList l;
    fx.params.ffn.collect(l, "ffn");
    return l;
  }());
  NoGradGuard no_grad;
  const auto y = sagem::forward(fx.f_rgb, fx.f_depth, fx.params, fx.geo, {}, 1);
  for (std::size_t i = 1; i < fx.geo.N(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(y[i * 3 + c], y[c], 1e-12);
  }
}

TEST(Sagem, ZeroFfnIsIdentityOnFused) {
  auto fx = make(4, 2, 3, 4);
  ParamList ffn;
  fx.params.ffn.collect(ffn, "ffn");
  zero_fill(ffn);
  NoGradGuard no_grad;
  const auto g = sagem::global_maps(fx.f_rgb, fx.f_depth, fx.params, fx.geo, {}, 2);
  const auto fused = matmul(g.P_rgb, matmul(g.A_att, g.V_rgb)) + matmul(g.P_depth, matmul(g.A_att, g.V_depth));
  EXPECT_EQ(sagem::forward(fx.f_rgb, fx.f_depth, fx.params, fx.geo, {}, 2).to_vector(), fused.to_vector());
}

TEST(SagemFlops, ClosedForms) {
  const auto geo = sp::GridGeometry::make(8, 8, 2);  // M = 16, HW = 64
  const auto f = sagem::flops(geo, 8);
  EXPECT_EQ(f.term("qs_kt_rgb"), 16384u);
  EXPECT_EQ(f.term("qs_kt_rgb") * 4, 65536u);  // same product with HW query tokens
  EXPECT_DOUBLE_EQ(f.attention_ratio(), 0.25);
}

TEST(SagemFlops, AttentionRatioIsTokenFraction) {
  for (std::size_t p : {1u, 2u, 4u, 8u, 12u}) {
    const auto geo = sp::GridGeometry::make(96, 96, p);
    const auto f = sagem::flops(geo, 16);
    EXPECT_DOUBLE_EQ(f.attention_ratio(), static_cast<double>(geo.M()) / static_cast<double>(geo.N()));
  }
  const auto f = sagem::flops(sp::GridGeometry::make(96, 96, 12), 16);
  EXPECT_DOUBLE_EQ(f.attention_ratio(), 64.0 / 9216.0);
}

TEST(SagemFlops, AttentionLinearInTokenCount) {
  const auto a = sagem::flops(sp::GridGeometry::make(16, 16, 4), 8).attention();   // M = 16
  const auto b = sagem::flops(sp::GridGeometry::make(16, 16, 2), 8).attention();   // M = 64
  const auto c = sagem::flops(sp::GridGeometry::make(16, 16, 1), 8).attention();   // M = 256
  EXPECT_EQ(b, 4 * a);
  EXPECT_EQ(c, 16 * a);
}

TEST(SagemFlops, MeterAgreesWithClosedForm) {
  const auto fx = make(8, 2, 4, 5);
  FlopMeter meter;
  {
    NoGradGuard no_grad;
    sagem::forward(fx.f_rgb, fx.f_depth, fx.params, fx.geo, {}, 2);
  }
  EXPECT_EQ(meter.count(), sagem::flops(fx.geo, 4, {}, 2).total());
}
