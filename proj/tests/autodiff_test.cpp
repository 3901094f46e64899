#include <gtest/gtest.h>

#include <cmath>

#include "textspot/rng.hpp"
#include "textspot/tensor.hpp"

using namespace textspot;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0,
                     bool requires_grad = false) {
  std::vector<double> d(size_t(numel(shape)));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(d), requires_grad);
}

}  // namespace

TEST(Primitives, SigmoidAnalytic) {
  Tensor x = Tensor::scalar(0.0, true);
  Tensor y = sigmoid(x);
  EXPECT_DOUBLE_EQ(y.item(), 0.5);
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Primitives, MatmulIdentity) {
  Tensor I = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(1);
  Tensor A = random_tensor({3, 4}, rng, -1, 1, true);
  Tensor Y = matmul(I, A);
  for (int i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(Y.at(i), A.at(i));
  sum_all(Y).backward();
  for (int i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(A.grad()[size_t(i)], 1.0);
}

TEST(Primitives, SoftmaxFiniteDifference) {
  Tensor x = Tensor::from({3}, {1, 2, 3});
  // randomly weighted scalar projection so all entries get distinct pull
  Tensor w = Tensor::from({3}, {0.3, -1.1, 0.7});
  auto f = [&](const Tensor& t) { return sum_all(mul(softmax(t), w)); };
  EXPECT_LT(grad_check(f, x, 1e-6), 1e-7);
}

TEST(Primitives, ShapeMismatchNamesOp) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    add(a, b);
    FAIL() << "expected failure";
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(matmul(a, b), std::runtime_error);
}

TEST(Primitives, FiniteDifferenceSweep) {
  Rng rng(42);
  Tensor w = random_tensor({4, 5}, rng);
  Tensor proj = random_tensor({5}, rng, -1.0, 1.0);

  struct Case {
    const char* name;
    std::function<Tensor(const Tensor&)> f;
    Shape shape;
  };
  std::vector<Case> cases;
  cases.push_back({"add", [&](const Tensor& x) { return sum_all(mul(add(x, w), w)); }, {4, 5}});
  cases.push_back({"sub", [&](const Tensor& x) { return sum_all(mul(sub(x, w), w)); }, {4, 5}});
  cases.push_back({"mul", [&](const Tensor& x) { return sum_all(mul(mul(x, w), w)); }, {4, 5}});
  cases.push_back({"add_bias",
                   [&](const Tensor& x) { return sum_all(mul(add(w, x), w)); },
                   {5}});
  cases.push_back({"matmul_lhs",
                   [&](const Tensor& x) { return sum_all(matmul(x, transpose2d(w))); },
                   {3, 5}});
  cases.push_back({"matmul_rhs",
                   [&](const Tensor& x) { return sum_all(matmul(w, x)); },
                   {5, 3}});
  cases.push_back({"matmul_batched",
                   [&](const Tensor& x) {
                     Tensor y = reshape(x, {2, 3, 4});
                     return sum_all(matmul(y, permute(y, {0, 2, 1})));
                   },
                   {24}});
  cases.push_back({"sigmoid", [&](const Tensor& x) { return sum_all(mul(sigmoid(x), w)); }, {4, 5}});
  cases.push_back({"exp", [&](const Tensor& x) { return sum_all(mul(texp(x), w)); }, {4, 5}});
  cases.push_back({"relu", [&](const Tensor& x) { return sum_all(mul(relu(x), w)); }, {4, 5}});
  cases.push_back({"abs", [&](const Tensor& x) { return sum_all(mul(tabs(x), w)); }, {4, 5}});
  cases.push_back({"softmax", [&](const Tensor& x) { return sum_all(mul(softmax(x), w)); }, {4, 5}});
  cases.push_back({"pow2", [&](const Tensor& x) { return sum_all(mul(pow_const(tabs(x), 2.0), w)); }, {4, 5}});
  cases.push_back({"sum_axis0", [&](const Tensor& x) { return sum_all(mul(sum_axis(x, 0), proj)); }, {4, 5}});
  cases.push_back({"mean_axis1",
                   [&](const Tensor& x) { return sum_all(pow_const(mean_axis(x, 1), 2.0)); },
                   {4, 5}});
  cases.push_back({"concat",
                   [&](const Tensor& x) {
                     Tensor a = slice(x, 0, 0, 2);
                     Tensor b = slice(x, 0, 2, 2);
                     return sum_all(mul(concat({b, a}, 0), w));
                   },
                   {4, 5}});
  cases.push_back({"gather",
                   [&](const Tensor& x) { return sum_all(mul(gather_rows(x, {2, 0, 2}), proj)); },
                   {4, 5}});
  cases.push_back({"permute",
                   [&](const Tensor& x) {
                     Tensor y = reshape(x, {2, 2, 5});
                     return sum_all(mul(permute(y, {2, 0, 1}), permute(y, {2, 0, 1})));
                   },
                   {20}});

  for (auto& c : cases) {
    Tensor x = random_tensor(c.shape, rng);
    // keep relu/abs inputs away from their kinks
    for (auto& v : x.mutable_data())
      if (std::fabs(v) < 5e-3) v = 5e-3;
    double err = grad_check(c.f, x, 1e-6);
    EXPECT_LT(err, 1e-6) << "primitive " << c.name;
  }
}

TEST(Primitives, LogFiniteDifference) {
  Rng rng(7);
  Tensor x = random_tensor({3, 3}, rng, 0.2, 2.0);
  Tensor w = random_tensor({3, 3}, rng);
  auto f = [&](const Tensor& t) { return sum_all(mul(tlog(t), w)); };
  EXPECT_LT(grad_check(f, x, 1e-6), 1e-6);
}

TEST(Primitives, LayerNormFiniteDifference) {
  Rng rng(11);
  Tensor x = random_tensor({3, 6}, rng);
  Tensor g = random_tensor({6}, rng, 0.5, 1.5);
  Tensor b = random_tensor({6}, rng, -0.5, 0.5);
  Tensor w = random_tensor({3, 6}, rng);
  auto fx = [&](const Tensor& t) { return sum_all(mul(layer_norm(t, g, b), w)); };
  EXPECT_LT(grad_check(fx, x, 1e-6), 1e-6);
  auto fg = [&](const Tensor& t) { return sum_all(mul(layer_norm(x, t, b), w)); };
  EXPECT_LT(grad_check(fg, g, 1e-6), 1e-6);
  auto fb = [&](const Tensor& t) { return sum_all(mul(layer_norm(x, g, t), w)); };
  EXPECT_LT(grad_check(fb, b, 1e-6), 1e-6);
}

TEST(Primitives, BilinearSampleExactCellCenter) {
  // feature value at a cell center must come back exactly
  Rng rng(3);
  Tensor feat = random_tensor({4, 6, 2}, rng);
  // cell (row 2, col 3): normalized center ((3+0.5)/6, (2+0.5)/4)
  Tensor coords = Tensor::from({1, 2}, {3.5 / 6.0, 2.5 / 4.0});
  Tensor out = bilinear_sample(feat, coords);
  EXPECT_NEAR(out.at(0), feat.at((2 * 6 + 3) * 2 + 0), 1e-12);
  EXPECT_NEAR(out.at(1), feat.at((2 * 6 + 3) * 2 + 1), 1e-12);
}

TEST(Primitives, BilinearSampleFiniteDifference) {
  Rng rng(5);
  Tensor feat = random_tensor({5, 7, 3}, rng);
  Tensor proj = random_tensor({4, 3}, rng);
  // locations away from cell boundaries and borders
  std::vector<double> cs;
  for (int i = 0; i < 4; ++i) {
    cs.push_back(rng.uniform(0.2, 0.8));
    cs.push_back(rng.uniform(0.2, 0.8));
  }
  Tensor coords = Tensor::from({4, 2}, cs);
  auto f_feat = [&](const Tensor& t) { return sum_all(mul(bilinear_sample(t, coords), proj)); };
  EXPECT_LT(grad_check(f_feat, feat, 1e-6), 1e-6);
  auto f_coords = [&](const Tensor& t) { return sum_all(mul(bilinear_sample(feat, t), proj)); };
  EXPECT_LT(grad_check(f_coords, coords, 1e-6), 1e-6);
}

TEST(Primitives, BilinearSampleBorderClampZeroCoordGrad) {
  Rng rng(9);
  Tensor feat = random_tensor({4, 4, 1}, rng);
  Tensor coords = Tensor::from({1, 2}, {-0.2, 0.5}, true);
  Tensor y = sum_all(bilinear_sample(feat, coords));
  y.backward();
  EXPECT_DOUBLE_EQ(coords.grad()[0], 0.0);  // clamped in x
  EXPECT_NE(coords.grad()[1], 0.0);
}

TEST(Primitives, Conv2dFiniteDifference) {
  Rng rng(13);
  Tensor x = random_tensor({6, 8, 2}, rng);
  Tensor w = random_tensor({3, 3, 2, 3}, rng, -0.5, 0.5);
  Tensor b = random_tensor({3}, rng, -0.1, 0.1);
  Tensor proj = random_tensor({3, 4, 3}, rng);
  auto fx = [&](const Tensor& t) { return sum_all(mul(conv2d(t, w, b, 2, 1), proj)); };
  EXPECT_LT(grad_check(fx, x, 1e-6), 1e-6);
  auto fw = [&](const Tensor& t) { return sum_all(mul(conv2d(x, t, b, 2, 1), proj)); };
  EXPECT_LT(grad_check(fw, w, 1e-6), 1e-6);
  auto fb = [&](const Tensor& t) { return sum_all(mul(conv2d(x, w, t, 2, 1), proj)); };
  EXPECT_LT(grad_check(fb, b, 1e-6), 1e-6);
}

TEST(GradCheck, PolynomialExact) {
  Tensor x = Tensor::from({2}, {1, 2});
  auto f = [](const Tensor& t) { return sum_all(mul(t, t)); };
  Tensor xg = Tensor::from({2}, {1, 2}, true);
  Tensor y = f(xg);
  y.backward();
  EXPECT_DOUBLE_EQ(xg.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(xg.grad()[1], 4.0);
  EXPECT_LT(grad_check(f, x, 1e-5), 1e-8);
}

TEST(GradCheck, RejectsBadStep) {
  Tensor x = Tensor::scalar(1.0);
  auto f = [](const Tensor& t) { return sum_all(t); };
  EXPECT_THROW(grad_check(f, x, 1e-2), std::runtime_error);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  // loss = sum(s*s) with s shared vs an unrolled duplicate graph
  Rng rng(23);
  std::vector<double> base(6);
  for (auto& v : base) v = rng.uniform(-1, 1);

  Tensor x1 = Tensor::from({6}, base, true);
  Tensor s1 = sigmoid(x1);
  Tensor loss1 = sum_all(mul(s1, s1));
  loss1.backward();

  Tensor x2 = Tensor::from({6}, base, true);
  Tensor loss2 = sum_all(mul(sigmoid(x2), sigmoid(x2)));
  loss2.backward();

  EXPECT_DOUBLE_EQ(loss1.item(), loss2.item());
  for (int i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(x1.grad()[size_t(i)], x2.grad()[size_t(i)]);
}

TEST(Backward, DeterministicForward) {
  Rng rng(31);
  Tensor a = random_tensor({8, 8}, rng);
  Tensor b = random_tensor({8, 8}, rng);
  auto run = [&]() {
    Tensor y = softmax(matmul(sigmoid(a), b));
    return y.data();
  };
  auto v1 = run();
  auto v2 = run();
  for (size_t i = 0; i < v1.size(); ++i) {
    EXPECT_EQ(v1[i], v2[i]);  // bit-identical
  }
}

TEST(Backward, NoGradThroughDetach) {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tensor d = mul(x, x).detach();
  Tensor loss = sum_all(mul(d, d));
  loss.backward();
  EXPECT_TRUE(x.grad().empty());
}

TEST(Nodes, CreationCounterTracksOps) {
  Tensor a = Tensor::scalar(1.0);
  uint64_t before = Node::created_count().load();
  Tensor b = add_scalar(a, 1.0);
  (void)b;
  uint64_t after = Node::created_count().load();
  EXPECT_EQ(after - before, 1u);
}
