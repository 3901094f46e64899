#include <gtest/gtest.h>

#include <cmath>

#include "textspot/bezier.hpp"
#include "textspot/rng.hpp"

using namespace textspot;

namespace {

// Independent oracle: expand the cubic into power-basis coefficients and
// evaluate with Horner. Kept free of bernstein_eval internals.
Vec2 cubic_powerbasis(const BezierCurve& c, double t) {
  auto coef = [&](double p0, double p1, double p2, double p3) {
    double a = -p0 + 3 * p1 - 3 * p2 + p3;
    double b = 3 * p0 - 6 * p1 + 3 * p2;
    double d = -3 * p0 + 3 * p1;
    return ((a * t + b) * t + d) * t + p0;
  };
  return {coef(c.ctrl[0].x, c.ctrl[1].x, c.ctrl[2].x, c.ctrl[3].x),
          coef(c.ctrl[0].y, c.ctrl[1].y, c.ctrl[2].y, c.ctrl[3].y)};
}

BezierCurve random_curve(Rng& rng) {
  BezierCurve c;
  for (auto& p : c.ctrl) p = {rng.uniform(), rng.uniform()};
  return c;
}

}  // namespace

TEST(Bernstein, Endpoints) {
  Rng rng(2);
  BezierCurve c = random_curve(rng);
  Vec2 p0 = bernstein_eval(c, 0.0);
  Vec2 p1 = bernstein_eval(c, 1.0);
  EXPECT_DOUBLE_EQ(p0.x, c.ctrl[0].x);
  EXPECT_DOUBLE_EQ(p0.y, c.ctrl[0].y);
  EXPECT_DOUBLE_EQ(p1.x, c.ctrl[3].x);
  EXPECT_DOUBLE_EQ(p1.y, c.ctrl[3].y);
}

TEST(Bernstein, KnownMidpoints) {
  BezierCurve line{{Vec2{0, 0}, Vec2{1.0 / 3, 0}, Vec2{2.0 / 3, 0}, Vec2{1, 0}}};
  Vec2 m = bernstein_eval(line, 0.5);
  EXPECT_NEAR(m.x, 0.5, 1e-15);
  EXPECT_NEAR(m.y, 0.0, 1e-15);

  BezierCurve arch{{Vec2{0, 0}, Vec2{0, 1}, Vec2{1, 1}, Vec2{1, 0}}};
  Vec2 a = bernstein_eval(arch, 0.5);
  EXPECT_NEAR(a.x, 0.5, 1e-15);
  EXPECT_NEAR(a.y, 0.75, 1e-15);
}

TEST(Bernstein, MatchesPowerBasisOracle) {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    BezierCurve c = random_curve(rng);
    double t = rng.uniform();
    Vec2 got = bernstein_eval(c, t);
    Vec2 want = cubic_powerbasis(c, t);
    EXPECT_NEAR(got.x, want.x, 1e-12);
    EXPECT_NEAR(got.y, want.y, 1e-12);
  }
}

TEST(Bernstein, RejectsOutOfRangeT) {
  Rng rng(4);
  BezierCurve c = random_curve(rng);
  EXPECT_THROW(bernstein_eval(c, -0.01), std::invalid_argument);
  EXPECT_THROW(bernstein_eval(c, 1.01), std::invalid_argument);
}

TEST(Bernstein, ConvexHullProperty) {
  // controls inside an axis-aligned box keep samples inside the box
  Rng rng(91);
  for (int trial = 0; trial < 200; ++trial) {
    double x0 = rng.uniform(0, 0.4), x1 = rng.uniform(0.6, 1.0);
    double y0 = rng.uniform(0, 0.4), y1 = rng.uniform(0.6, 1.0);
    BezierCurve c;
    for (auto& p : c.ctrl) p = {rng.uniform(x0, x1), rng.uniform(y0, y1)};
    Vec2 p = bernstein_eval(c, rng.uniform());
    EXPECT_GE(p.x, x0 - 1e-12);
    EXPECT_LE(p.x, x1 + 1e-12);
    EXPECT_GE(p.y, y0 - 1e-12);
    EXPECT_LE(p.y, y1 + 1e-12);
  }
}

TEST(Sampling, TwoPointsAreEndpoints) {
  Rng rng(5);
  BezierCurve c = random_curve(rng);
  Polyline p = sample_uniform(c, 2);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_DOUBLE_EQ(p[0].x, c.ctrl[0].x);
  EXPECT_DOUBLE_EQ(p[1].y, c.ctrl[3].y);
}

TEST(Sampling, StraightLineEquispaced) {
  // collinear equispaced controls -> uniformly spaced samples (default N=25)
  BezierCurve line{{Vec2{0.1, 0.5}, Vec2{0.1 + 0.8 / 3, 0.5}, Vec2{0.1 + 1.6 / 3, 0.5}, Vec2{0.9, 0.5}}};
  Polyline p = sample_uniform(line, 25);
  ASSERT_EQ(p.size(), 25u);
  for (int k = 0; k < 25; ++k) {
    EXPECT_NEAR(p[size_t(k)].x, 0.1 + 0.8 * k / 24.0, 1e-12);
    EXPECT_NEAR(p[size_t(k)].y, 0.5, 1e-12);
  }
}

TEST(Sampling, RejectsTooFewPoints) {
  Rng rng(6);
  BezierCurve c = random_curve(rng);
  EXPECT_THROW(sample_uniform(c, 1), std::invalid_argument);
}

TEST(CenterFromSides, IdempotentAndMidband) {
  Rng rng(7);
  BezierCurve top = random_curve(rng);
  BezierCurve same = center_from_sides(top, top);
  for (int j = 0; j < 4; ++j) {
    EXPECT_DOUBLE_EQ(same.ctrl[size_t(j)].x, top.ctrl[size_t(j)].x);
    EXPECT_DOUBLE_EQ(same.ctrl[size_t(j)].y, top.ctrl[size_t(j)].y);
  }

  BezierCurve t2, b2;
  for (int j = 0; j < 4; ++j) {
    double x = 0.2 + 0.2 * j;
    t2.ctrl[size_t(j)] = {x, 0.0};
    b2.ctrl[size_t(j)] = {x, 1.0};
  }
  BezierCurve mid = center_from_sides(t2, b2);
  for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(mid.ctrl[size_t(j)].y, 0.5);
}

TEST(CenterFromSides, ElementwiseMeanExample) {
  BezierCurve top{{Vec2{0, 0}, Vec2{0.3, 0.1}, Vec2{0.6, 0.1}, Vec2{1, 0}}};
  BezierCurve bot{{Vec2{0, 0.4}, Vec2{0.3, 0.5}, Vec2{0.6, 0.5}, Vec2{1, 0.4}}};
  BezierCurve c = center_from_sides(top, bot);
  Vec2 want[4] = {{0, 0.2}, {0.3, 0.3}, {0.6, 0.3}, {1, 0.2}};
  for (int j = 0; j < 4; ++j) {
    EXPECT_NEAR(c.ctrl[size_t(j)].x, want[j].x, 1e-15);
    EXPECT_NEAR(c.ctrl[size_t(j)].y, want[j].y, 1e-15);
  }
}

TEST(CenterFromSides, CommutesWithSampling) {
  // sampling the averaged curve == averaging the samples (linearity)
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    BezierCurve top = random_curve(rng);
    BezierCurve bot = random_curve(rng);
    Polyline sc = sample_uniform(center_from_sides(top, bot), 25);
    Polyline st = sample_uniform(top, 25);
    Polyline sb = sample_uniform(bot, 25);
    for (int k = 0; k < 25; ++k) {
      EXPECT_NEAR(sc[size_t(k)].x, 0.5 * (st[size_t(k)].x + sb[size_t(k)].x), 1e-12);
      EXPECT_NEAR(sc[size_t(k)].y, 0.5 * (st[size_t(k)].y + sb[size_t(k)].y), 1e-12);
    }
  }
}

TEST(OffsetTransform, ZeroOffsetsIsIdentity) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Vec2 anchor{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    BezierCurve c = apply_offset_transform(anchor, {0, 0, 0, 0, 0, 0, 0, 0});
    for (int j = 0; j < 4; ++j) {
      EXPECT_NEAR(c.ctrl[size_t(j)].x, anchor.x, 1e-9);
      EXPECT_NEAR(c.ctrl[size_t(j)].y, anchor.y, 1e-9);
    }
  }
}

TEST(OffsetTransform, KnownShift) {
  // anchor (0.5,0.5): inv_sigmoid(0.5)=0, so dx0=1 puts bp0.x at sigmoid(1)
  BezierCurve c = apply_offset_transform({0.5, 0.5}, {1, 0, 0, 0, 0, 0, 0, 0});
  EXPECT_NEAR(c.ctrl[0].x, 0.7310585786300049, 1e-12);
  EXPECT_NEAR(c.ctrl[0].y, 0.5, 1e-12);
  EXPECT_NEAR(c.ctrl[1].x, 0.5, 1e-12);
}

TEST(OffsetTransform, OutputInUnitSquareAndBorderAnchorsSafe) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    Vec2 anchor{rng.uniform(), rng.uniform()};
    if (trial == 0) anchor = {0.0, 1.0};  // exact border, clamp must handle
    std::array<double, 8> off;
    for (auto& o : off) o = rng.uniform(-20, 20);
    BezierCurve c = apply_offset_transform(anchor, off);
    for (int j = 0; j < 4; ++j) {
      EXPECT_GT(c.ctrl[size_t(j)].x, 0.0);
      EXPECT_LT(c.ctrl[size_t(j)].x, 1.0);
      EXPECT_GT(c.ctrl[size_t(j)].y, 0.0);
      EXPECT_LT(c.ctrl[size_t(j)].y, 1.0);
    }
  }
}

TEST(OffsetTransform, RoundTripThroughInverseSigmoid) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    Vec2 anchor{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
    std::array<double, 8> off;
    for (auto& o : off) o = rng.uniform(-2, 2);
    BezierCurve c = apply_offset_transform(anchor, off);
    double lx = inv_sigmoid_scalar(anchor.x), ly = inv_sigmoid_scalar(anchor.y);
    for (int j = 0; j < 4; ++j) {
      double rx = inv_sigmoid_scalar(c.ctrl[size_t(j)].x, 1e-12) - lx;
      double ry = inv_sigmoid_scalar(c.ctrl[size_t(j)].y, 1e-12) - ly;
      EXPECT_NEAR(rx, off[size_t(2 * j)], 1e-9);
      EXPECT_NEAR(ry, off[size_t(2 * j + 1)], 1e-9);
    }
  }
}

TEST(OffsetTransform, TensorVariantMatchesScalar) {
  Rng rng(13);
  std::vector<Vec2> anchors = {{0.3, 0.4}, {0.7, 0.2}};
  std::vector<double> off(16);
  for (auto& o : off) o = rng.uniform(-1.5, 1.5);
  Tensor curves = apply_offset_transform_t(Tensor::from({2, 8}, off), anchors);
  for (int p = 0; p < 2; ++p) {
    std::array<double, 8> o8;
    for (int i = 0; i < 8; ++i) o8[size_t(i)] = off[size_t(p * 8 + i)];
    BezierCurve want = apply_offset_transform(anchors[size_t(p)], o8);
    for (int j = 0; j < 4; ++j) {
      EXPECT_NEAR(curves.at((p * 4 + j) * 2 + 0), want.ctrl[size_t(j)].x, 1e-12);
      EXPECT_NEAR(curves.at((p * 4 + j) * 2 + 1), want.ctrl[size_t(j)].y, 1e-12);
    }
  }
}

TEST(BernsteinMatrix, MatchesSampling) {
  Rng rng(14);
  BezierCurve c = random_curve(rng);
  Tensor B = bernstein_matrix(25);
  std::vector<double> ctrl = {c.ctrl[0].x, c.ctrl[0].y, c.ctrl[1].x, c.ctrl[1].y,
                              c.ctrl[2].x, c.ctrl[2].y, c.ctrl[3].x, c.ctrl[3].y};
  Tensor sampled = matmul(B, Tensor::from({4, 2}, ctrl));
  Polyline want = sample_uniform(c, 25);
  for (int k = 0; k < 25; ++k) {
    EXPECT_NEAR(sampled.at(2 * k), want[size_t(k)].x, 1e-14);
    EXPECT_NEAR(sampled.at(2 * k + 1), want[size_t(k)].y, 1e-14);
  }
}

TEST(RebuildPolygon, ZeroOffsetsDegenerate) {
  Polyline center = {{0.1, 0.5}, {0.5, 0.5}, {0.9, 0.5}};
  Polyline zero(3, Vec2{0, 0});
  Polyline poly = rebuild_polygon(center, zero, zero);
  ASSERT_EQ(poly.size(), 6u);
  EXPECT_DOUBLE_EQ(poly[0].x, 0.1);
  EXPECT_DOUBLE_EQ(poly[5].x, 0.1);  // bottom reversed ends at start
  EXPECT_DOUBLE_EQ(poly[2].x, poly[3].x);
}

TEST(RebuildPolygon, AxisAlignedBand) {
  Polyline center;
  for (int k = 0; k < 5; ++k) center.push_back({0.1 + 0.2 * k, 0.5});
  Polyline up(5, Vec2{0, -0.1}), down(5, Vec2{0, 0.1});
  Polyline poly = rebuild_polygon(center, up, down);
  ASSERT_EQ(poly.size(), 10u);
  for (int k = 0; k < 5; ++k) {
    EXPECT_DOUBLE_EQ(poly[size_t(k)].y, 0.4);
    EXPECT_DOUBLE_EQ(poly[size_t(9 - k)].y, 0.6);
    EXPECT_DOUBLE_EQ(poly[size_t(9 - k)].x, poly[size_t(k)].x);
  }
}
