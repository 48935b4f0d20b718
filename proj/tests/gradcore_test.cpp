#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "spuq/gradcore.hpp"
#include "support/gradcheck.hpp"

namespace g = spuq::grad;

namespace {

g::Tensor checkerboard(std::size_t n) {
  g::Tensor t(g::Shape{n, n});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) t[y * n + x] = static_cast<float>((x + y) % 2);
  return t;
}

}  // namespace

TEST(Primitives, ReluClampsNegatives) {
  g::Tape tape;
  auto y = g::relu(tape.constant(g::Tensor::from({-1, 0, 2})));
  EXPECT_EQ(y.value(), g::Tensor::from({0, 0, 2}));
}

TEST(Primitives, SoftmaxOfEqualRowIsUniform) {
  g::Tape tape;
  auto y = g::softmax_rows(tape.constant(g::Tensor(g::Shape{1, 5}, 3.0f)));
  for (float v : y.value().values()) EXPECT_NEAR(v, 0.2f, 1e-7);
}

TEST(Primitives, SoftmaxRowsAreDistributions) {
  g::Rng rng(11);
  g::Tape tape;
  g::Tensor x(g::Shape{50, 9});
  for (float& v : x.values()) v = static_cast<float>(rng.uniform(-20, 20));
  auto y = g::softmax_rows(tape.constant(x));
  for (std::size_t r = 0; r < 50; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 9; ++c) {
      EXPECT_GE(y.value()[r * 9 + c], 0.0f);
      s += y.value()[r * 9 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Primitives, ZeroKernelConvGivesZeros) {
  g::Tape tape;
  g::Tensor x(g::Shape{1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) x[i] = static_cast<float>(i + 1);
  auto y = g::conv2d(tape.constant(x), tape.constant(g::Tensor(g::Shape{1, 1, 3, 3})),
                     tape.constant(g::Tensor(g::Shape{1})));
  for (float v : y.value().values()) EXPECT_EQ(v, 0.0f);
}

TEST(Primitives, ConvIdentityKernelKeepsInput) {
  g::Tape tape;
  g::Tensor x(g::Shape{1, 4, 5});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i);
  g::Tensor k(g::Shape{1, 1, 3, 3});
  k[4] = 1.0f;
  auto y = g::conv2d(tape.constant(x), tape.constant(k), tape.constant(g::Tensor(g::Shape{1})));
  EXPECT_EQ(y.value().values(), x.values());
}

TEST(Primitives, ShapeMismatchNamesOpAndShapes) {
  g::Tape tape;
  auto a = tape.constant(g::Tensor(g::Shape{2, 3}));
  auto b = tape.constant(g::Tensor(g::Shape{4, 3}));
  try {
    g::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const g::ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x3]"), std::string::npos);
  }
  EXPECT_THROW(g::add(a, b), g::ShapeError);
}

TEST(Primitives, NonFiniteOutputIsAnError) {
  g::Tape tape;
  auto a = tape.constant(g::Tensor::from({3e38f, 3e38f}));
  EXPECT_THROW(g::add(a, a), g::NonFiniteError);
}

TEST(Ssim, IdenticalImagesScoreOne) {
  g::Rng rng(5);
  g::Tape tape;
  g::Tensor x(g::Shape{12, 10});
  for (float& v : x.values()) v = static_cast<float>(rng.uniform());
  auto s = g::ssim(tape.constant(x), tape.constant(x), 7, 1e-4, 9e-4);
  EXPECT_NEAR(s.value().item(), 1.0f, 1e-6);
}

TEST(Ssim, InvertedCheckerboardIsNegative) {
  const std::size_t n = 9, win = 7;
  const double c1 = 1e-4, c2 = 9e-4;
  g::Tensor x = checkerboard(n);
  g::Tensor y = x;
  for (float& v : y.values()) v = 1.0f - v;
  // Closed-form window statistics: with m ones among win^2 cells,
  // mu_x = m / N, mu_y = 1 - mu_x, var = mu_x (1 - mu_x), cov = -var.
  double expected = 0.0;
  std::size_t windows = 0;
  for (std::size_t wy = 0; wy + win <= n; ++wy)
    for (std::size_t wx = 0; wx + win <= n; ++wx) {
      const double ones = ((wx + wy) % 2 == 0) ? 24.0 : 25.0;
      const double mx = ones / 49.0, my = 1.0 - mx, var = mx * (1.0 - mx);
      expected += (2 * mx * my + c1) * (-2 * var + c2) / ((mx * mx + my * my + c1) * (2 * var + c2));
      ++windows;
    }
  expected /= static_cast<double>(windows);
  g::Tape tape;
  const double got = g::ssim(tape.constant(x), tape.constant(y), win, c1, c2).value().item();
  EXPECT_LT(got, 0.0);
  EXPECT_NEAR(got, expected, 1e-6);
}

TEST(Ssim, ConstantImagesReduceToLuminanceTerm) {
  const double a = 0.3, b = 0.7, c1 = 1e-4, c2 = 9e-4;
  g::Tape tape;
  auto s = g::ssim(tape.constant(g::Tensor(g::Shape{8, 8}, static_cast<float>(a))),
                   tape.constant(g::Tensor(g::Shape{8, 8}, static_cast<float>(b))), 7, c1, c2);
  const double af = static_cast<float>(a), bf = static_cast<float>(b);
  EXPECT_NEAR(s.value().item(), (2 * af * bf + c1) * c2 / ((af * af + bf * bf + c1) * c2), 1e-6);
}

TEST(Ssim, RejectsBadWindows) {
  g::Tape tape;
  auto x = tape.constant(g::Tensor(g::Shape{8, 8}));
  EXPECT_THROW(g::ssim(x, x, 6, 1e-4, 9e-4), g::ShapeError);
  EXPECT_THROW(g::ssim(x, x, 9, 1e-4, 9e-4), g::ShapeError);
}

TEST(Backward, QuadraticGradient) {
  g::Tape tape;
  auto w = tape.param(g::Tensor::from({1, 2}));
  tape.backward(g::sum(g::mul(w, w)));
  EXPECT_EQ(tape.grad(w), g::Tensor::from({2, 4}));
}

TEST(Backward, SecondCallWithoutResetFails) {
  g::Tape tape;
  auto w = tape.param(g::Tensor::from({1, 2}));
  auto loss = g::sum(w);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), g::BackwardError);
  tape.zero_grad();
  EXPECT_NO_THROW(tape.backward(loss));
}

TEST(Backward, NonScalarLossRejected) {
  g::Tape tape;
  auto w = tape.param(g::Tensor::from({1, 2}));
  EXPECT_THROW(tape.backward(g::relu(w)), g::BackwardError);
}

TEST(Backward, UnusedParameterHasExactlyZeroGradient) {
  g::Tape tape;
  auto w = tape.param(g::Tensor::from({1, 2}));
  auto unused = tape.param(g::Tensor::from({3, 4, 5}));
  tape.backward(g::sum(g::mul(w, w)));
  const g::Tensor gu = tape.grad(unused);
  for (float v : gu.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Backward, EveryPrimitiveMatchesFiniteDifferences) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    for (const auto& gc : spuq::testing::primitive_cases(trial)) {
      const auto report = spuq::testing::check_gradient(gc, trial);
      EXPECT_LT(report.rel_error, 1e-4) << gc.name << " trial " << trial;
    }
  }
}

TEST(GridSample, ZeroFlowIsIdentity) {
  g::Rng rng(3);
  g::Tensor img(g::Shape{6, 7});
  for (float& v : img.values()) v = static_cast<float>(rng.uniform());
  g::Tape tape;
  auto out = g::grid_sample_2d(tape.constant(img), tape.constant(g::Tensor(g::Shape{2, 6, 7})));
  EXPECT_EQ(out.value(), img);
}

TEST(GridSample, UnitShiftOfRampWithBorderClamp) {
  const std::size_t h = 4, w = 6;
  g::Tensor ramp(g::Shape{h, w}), flow(g::Shape{2, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      ramp[y * w + x] = static_cast<float>(x);
      flow[y * w + x] = 1.0f;
    }
  g::Tape tape;
  auto out = g::grid_sample_2d(tape.constant(ramp), tape.constant(flow));
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      EXPECT_FLOAT_EQ(out.value()[y * w + x], static_cast<float>(std::min(x + 1, w - 1)));
}

TEST(Init, DegenerateCustomNormalIsZero) {
  g::InitSpec spec{g::InitMode::custom_normal, 7, 0.0};
  const g::Tensor w = g::init_weights({8, 4, 3, 3}, spec);
  for (float v : w.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Init, UniformModesRespectTheirBounds) {
  const g::Shape shape{16, 8, 3, 3};
  const double fan_in = 8 * 9, fan_out = 16 * 9;
  const auto max_abs = [](const g::Tensor& t) {
    float m = 0;
    for (float v : t.values()) m = std::max(m, std::abs(v));
    return m;
  };
  EXPECT_LE(max_abs(g::init_weights(shape, {g::InitMode::kaiming_uniform, 1})), std::sqrt(6.0 / fan_in));
  EXPECT_LE(max_abs(g::init_weights(shape, {g::InitMode::xavier_uniform, 1})), std::sqrt(6.0 / (fan_in + fan_out)));
  EXPECT_LE(max_abs(g::init_weights(shape, {g::InitMode::base, 1})), 1.0 / std::sqrt(fan_in));
  // The samples actually spread over most of the support.
  EXPECT_GT(max_abs(g::init_weights(shape, {g::InitMode::kaiming_uniform, 1})), 0.9 * std::sqrt(6.0 / fan_in));
}

TEST(Init, SameSpecIsBitwiseReproducible) {
  for (auto mode : {g::InitMode::base, g::InitMode::kaiming_uniform, g::InitMode::xavier_uniform,
                    g::InitMode::custom_normal}) {
    const g::Tensor a = g::init_weights({4, 3, 3, 3}, {mode, 99});
    const g::Tensor b = g::init_weights({4, 3, 3, 3}, {mode, 99});
    EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(float)));
    const g::Tensor c = g::init_weights({4, 3, 3, 3}, {mode, 100});
    EXPECT_NE(a, c);
  }
}

TEST(Sgd, ZeroLearningRateLeavesParameters) {
  g::Tensor p = g::Tensor::from({1, -2});
  g::Sgd opt(0.0, 0.9);
  opt.step({&p}, {g::Tensor::from({5, 5})});
  EXPECT_EQ(p, g::Tensor::from({1, -2}));
}

TEST(Sgd, PlainStep) {
  g::Tensor p = g::Tensor::from({1});
  g::Sgd opt(0.1, 0.0);
  opt.step({&p}, {g::Tensor::from({2})});
  EXPECT_NEAR(p[0], 0.8f, 1e-7);
}

TEST(Sgd, MomentumTwoSteps) {
  g::Tensor p = g::Tensor::from({0});
  g::Sgd opt(0.1, 0.9);
  opt.step({&p}, {g::Tensor::from({1})});
  opt.step({&p}, {g::Tensor::from({1})});
  EXPECT_NEAR(p[0], -0.29f, 1e-6);
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  g::Rng a = g::Rng::stream(42, "purpose", 3), b = g::Rng::stream(42, "purpose", 3);
  g::Rng c = g::Rng::stream(42, "purpose", 4), d = g::Rng::stream(42, "other", 3);
  const auto x = a.next_u64();
  EXPECT_EQ(x, b.next_u64());
  EXPECT_NE(x, c.next_u64());
  EXPECT_NE(x, d.next_u64());
}
