#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ahl/errors.hpp"
#include "ahl/numkernel.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace ahl;
using ahl::testing::random_tensor;

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_EQ(Tensor({2, 3, 4}).size(), 24u);
}

TEST(Tensor, RequireFiniteRejectsNan) {
  Tensor t({3});
  t[1] = std::nan("");
  EXPECT_THROW(require_finite(t, "probe"), NumericalError);
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor({3, 6, 7}, rng);
  Tensor w({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  const Tensor y = conv2d(x, w, Tensor({3}), 1, 0);
  EXPECT_TRUE(bitwise_equal(x, y));
}

TEST(Conv2d, OnesKernelOnConstantImageGivesNineC) {
  const double c = 0.37;
  const Tensor x = Tensor::filled({1, 6, 6}, c);
  const Tensor y = conv2d(x, Tensor::filled({1, 1, 3, 3}, 1.0), Tensor({1}), 1, 1);
  for (std::size_t r = 1; r < 5; ++r)
    for (std::size_t col = 1; col < 5; ++col) EXPECT_NEAR(y.at(0, r, col), 9 * c, 1e-15);
  EXPECT_NEAR(y.at(0, 0, 0), 4 * c, 1e-15);
}

TEST(Conv2d, MatchesDirectLoop) {
  Rng rng(2);
  const Tensor x = random_tensor({2, 7, 7}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
  const Tensor y = conv2d(x, w, b, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{3, 4, 4}));
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        double s = b[o];
        for (std::size_t i = 0; i < 2; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int ir = static_cast<int>(2 * r) + ky - 1, ic = static_cast<int>(2 * c) + kx - 1;
              if (ir < 0 || ic < 0 || ir >= 7 || ic >= 7) continue;
              s += w[((o * 2 + i) * 3 + ky) * 3 + kx] * x.at(i, ir, ic);
            }
        EXPECT_NEAR(y.at(o, r, c), s, 1e-13);
      }
}

TEST(Conv2d, BatchOfTwoGradientsMatchFiniteDifferences) {
  // Two 3x5x5 inputs through the same 4x3x3x3 weights.
  Rng rng(3);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
  const Tensor x0 = random_tensor({3, 5, 5}, rng), x1 = random_tensor({3, 5, 5}, rng);
  const Tensor r0 = random_tensor({4, 5, 5}, rng), r1 = random_tensor({4, 5, 5}, rng);
  const auto loss = [&](const Tensor& wp, const Tensor& bp) {
    return ahl::testing::dot(conv2d(x0, wp, bp, 1, 1), r0) + ahl::testing::dot(conv2d(x1, wp, bp, 1, 1), r1);
  };
  auto g0 = conv2d_backward(x0, w, r0, 1, 1);
  const auto g1 = conv2d_backward(x1, w, r1, 1, 1);
  g0.weights += g1.weights;
  g0.bias += g1.bias;
  EXPECT_LE(ahl::testing::fd_error([&](const Tensor& p) { return loss(p, b); }, w, g0.weights), 1e-5);
  EXPECT_LE(ahl::testing::fd_error([&](const Tensor& p) { return loss(w, p); }, b, g0.bias), 1e-5);
  EXPECT_LE(ahl::testing::fd_error([&](const Tensor& p) { return ahl::testing::dot(conv2d(p, w, b, 1, 1), r0); },
                                   x0, g0.input),
            1e-5);
}

TEST(Conv2d, RejectsBadGeometry) {
  EXPECT_THROW(conv2d(Tensor({1, 6, 6}), Tensor({1, 1, 3, 3}), Tensor({1}), 2, 0), ConfigError);
  EXPECT_THROW(conv2d(Tensor({2, 6, 6}), Tensor({1, 1, 3, 3}), Tensor({1}), 1, 1), DimensionError);
  EXPECT_THROW(conv2d(Tensor({1, 6, 6}), Tensor({1, 1, 3, 3}), Tensor({2}), 1, 1), DimensionError);
}

TEST(Linear, IdentityAndZeroInput) {
  Rng rng(4);
  const Tensor x = random_tensor({5}, rng);
  Tensor eye({5, 5});
  for (std::size_t i = 0; i < 5; ++i) eye.at(i, i) = 1.0;
  EXPECT_TRUE(bitwise_equal(linear(x, eye, Tensor({5})), x));

  const Tensor w = random_tensor({3, 5}, rng), b = random_tensor({3}, rng);
  EXPECT_TRUE(bitwise_equal(linear(Tensor({5}), w, b), b));
}

TEST(Linear, GradientOn32By64MatchesFiniteDifferences) {
  Rng rng(5);
  const Tensor x = random_tensor({64}, rng), w = random_tensor({32, 64}, rng), b = random_tensor({32}, rng);
  const Tensor r = random_tensor({32}, rng);
  const auto g = linear_backward(x, w, r);
  using ahl::testing::dot;
  using ahl::testing::fd_error;
  EXPECT_LE(fd_error([&](const Tensor& p) { return dot(linear(p, w, b), r); }, x, g.input), 1e-5);
  EXPECT_LE(fd_error([&](const Tensor& p) { return dot(linear(x, p, b), r); }, w, g.weights), 1e-5);
  EXPECT_LE(fd_error([&](const Tensor& p) { return dot(linear(x, w, p), r); }, b, g.bias), 1e-5);
}

TEST(Linear, ShapeMismatch) {
  EXPECT_THROW(linear(Tensor({4}), Tensor({3, 5}), Tensor({3})), DimensionError);
}

TEST(Relu, AllNegativeGivesZerosAndZeroGradient) {
  const Tensor x = Tensor::filled({2, 3, 3}, -0.5);
  const Tensor y = relu(x);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  const Tensor g = relu_backward(y, Tensor::filled(y.shape(), 1.0));
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Pool, ConstantImageHalves) {
  const auto p = pool_max2(Tensor::filled({2, 6, 8}, 1.5));
  EXPECT_EQ(p.output.shape(), (Shape{2, 3, 4}));
  for (double v : p.output.values()) EXPECT_EQ(v, 1.5);
}

TEST(Pool, TieRoutesGradientToFirstInScanOrder) {
  const auto p = pool_max2(Tensor::filled({1, 2, 2}, 3.0));
  const Tensor g = pool_max2_backward({1, 2, 2}, p.argmax, Tensor::filled({1, 1, 1}, 1.0));
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[1] + g[2] + g[3], 0.0);
}

TEST(Pool, OddExtentIsDimensionError) { EXPECT_THROW(pool_max2(Tensor({1, 5, 4})), DimensionError); }

TEST(Pool, UpsampleThenPoolRoundTrips) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({2, 8, 8}, rng, 0.0, 1.0);
    EXPECT_TRUE(bitwise_equal(pool_max2(upsample_nearest2(x)).output, x));
  }
}

TEST(Upsample, BruteForceNearestNeighbour) {
  Rng rng(7);
  const Tensor x = random_tensor({2, 3, 4}, rng);
  const Tensor y = upsample_nearest2(x);
  ASSERT_EQ(y.shape(), (Shape{2, 6, 8}));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(y.at(c, r, k), x.at(c, r / 2, k / 2));
}

TEST(Softmax, SymmetricLogits) {
  const Tensor p = softmax(Tensor({3}));
  for (double v : p.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftedLnTwo) {
  for (double x : {-40.0, 0.0, 3.5, 700.0}) {
    const Tensor p = softmax(Tensor({3}, {x, x + std::log(2.0), x}));
    EXPECT_NEAR(p[0], 0.25, 1e-12);
    EXPECT_NEAR(p[1], 0.5, 1e-12);
    EXPECT_NEAR(p[2], 0.25, 1e-12);
  }
}

TEST(Softmax, JacobianOfRandomThreeVector) {
  Rng rng(8);
  const Tensor z = random_tensor({3}, rng, -2.0, 2.0);
  const Tensor p = softmax(z);
  // Full Jacobian, one row per output, through backward with unit upstream.
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor e({3});
    e[i] = 1.0;
    const Tensor row = softmax_backward(p, e);
    const Tensor fd = finite_diff_grad([&](const Tensor& q) { return softmax(q)[i]; }, z, 1e-6);
    EXPECT_LE(max_relative_error(row, fd, ahl::testing::kFdFloor), 1e-6);
  }
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = random_tensor({1 + rng() % 20}, rng, -30.0, 30.0);
    const Tensor p = softmax(z);
    EXPECT_NEAR(std::accumulate(p.values().begin(), p.values().end(), 0.0), 1.0, 1e-12);
    Tensor shifted = z;
    const double c = std::uniform_real_distribution<double>(-100.0, 100.0)(rng);
    for (double& v : shifted.values()) v += c;
    const Tensor q = softmax(shifted);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GT(p[i], 0.0);
      EXPECT_NEAR(p[i], q[i], 1e-12);
    }
  }
}

TEST(Mse, EqualInputsGiveZero) {
  Rng rng(10);
  const Tensor a = random_tensor({3, 4, 4}, rng);
  for (double v : mse_per_channel(a, a)) EXPECT_EQ(v, 0.0);
}

TEST(Mse, ConstantOffsetOnOneChannel) {
  Rng rng(11);
  const Tensor a = random_tensor({3, 4, 5}, rng);
  Tensor b = a;
  for (std::size_t k = 0; k < 20; ++k) b[20 + k] -= 0.75;
  const auto per = mse_per_channel(a, b);
  EXPECT_EQ(per[0], 0.0);
  EXPECT_NEAR(per[1], 0.5625, 1e-14);
  EXPECT_EQ(per[2], 0.0);
}

TEST(Mse, RandomTwoByFourByFourMatchesDoubleLoop) {
  Rng rng(12);
  const Tensor a = random_tensor({2, 4, 4}, rng), b = random_tensor({2, 4, 4}, rng);
  const auto per = mse_per_channel(a, b);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t k = 0; k < 4; ++k) {
        const double d = a.at(c, r, k) - b.at(c, r, k);
        s += d * d;
      }
    EXPECT_NEAR(per[c], s / 16.0, 1e-15);
  }
}

TEST(Mse, ShapeMismatch) { EXPECT_THROW(mse_per_channel(Tensor({2, 4, 4}), Tensor({2, 4, 3})), DimensionError); }

TEST(Adam, ZeroGradientLeavesParamsAndAdvancesStep) {
  Rng rng(13);
  Tensor p = random_tensor({7}, rng);
  const Tensor before = p;
  auto state = AdamState::for_shape(p.shape());
  // Non-zero steps first so the moments are non-trivial.
  adam_step(p, random_tensor({7}, rng), state, 1e-2);
  const Tensor mid = p;
  for (int t = 0; t < 5; ++t) adam_step(p, Tensor({7}), state, 1e-2);
  EXPECT_TRUE(bitwise_equal(p, mid));
  EXPECT_EQ(state.t, 6u);
  EXPECT_FALSE(bitwise_equal(before, mid));
}

TEST(Adam, FirstStepFromZero) {
  Tensor p({1});
  auto state = AdamState::for_shape({1});
  adam_step(p, Tensor::filled({1}, 1.0), state, 1e-3);
  EXPECT_NEAR(p[0], -1e-3, 1e-9);
  EXPECT_EQ(state.t, 1u);
}

TEST(Adam, TwoStepsMatchScalarRecurrence) {
  // Hand evaluation: both bias-corrected steps have m_hat = v_hat = 1, so the
  // parameter moves by lr / (1 + 1e-8) twice.
  Tensor p({1});
  auto state = AdamState::for_shape({1});
  adam_step(p, Tensor::filled({1}, 1.0), state, 1e-3);
  adam_step(p, Tensor::filled({1}, 1.0), state, 1e-3);
  EXPECT_NEAR(p[0], -1.99999998e-3, 1e-15);

  // Independent recurrence with a varying gradient.
  const double grads[] = {0.5, -2.0, 1.25};
  double m = 0, v = 0, x = 0.3;
  Tensor q = Tensor::filled({1}, 0.3);
  auto s = AdamState::for_shape({1});
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    adam_step(q, Tensor::filled({1}, g), s, 0.01);
    EXPECT_NEAR(q[0], x, 1e-15);
  }
}

TEST(Adam, ShapeMismatch) {
  Tensor p({3});
  auto state = AdamState::for_shape({4});
  EXPECT_THROW(adam_step(p, Tensor({3}), state, 1e-3), DimensionError);
  EXPECT_THROW(adam_step(p, Tensor({2}), state, 1e-3), DimensionError);
}

TEST(FiniteDiff, SumOfSquares) {
  const Tensor g = finite_diff_grad(
      [](const Tensor& x) { return x[0] * x[0] + x[1] * x[1]; }, Tensor({2}, {1.0, 2.0}), 1e-6);
  EXPECT_NEAR(g[0], 2.0, 1e-6);
  EXPECT_NEAR(g[1], 4.0, 1e-6);
}

TEST(FiniteDiff, ConstantFunction) {
  const Tensor g = finite_diff_grad([](const Tensor&) { return 4.2; }, Tensor::filled({5}, 1.0), 1e-6);
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDiff, OneLayerNetMseMatchesReverseMode) {
  Rng rng(14);
  const Tensor x = random_tensor({6}, rng), w = random_tensor({4, 6}, rng), b = random_tensor({4}, rng);
  const Tensor target = random_tensor({1, 1, 4}, rng);
  const auto loss = [&](const Tensor& wp) {
    Tensor y = relu(linear(x, wp, b));
    return mse_per_channel(Tensor({1, 1, 4}, y.storage()), target)[0];
  };
  const Tensor y = relu(linear(x, w, b));
  const Tensor gy = mse_mean_backward(Tensor({1, 1, 4}, y.storage()), target);
  const Tensor gz = relu_backward(y, Tensor({4}, gy.storage()));
  const auto g = linear_backward(x, w, gz);
  EXPECT_LE(max_relative_error(g.weights, finite_diff_grad(loss, w, 1e-6), ahl::testing::kFdFloor), 1e-5);
}

// Twenty random instances of every differentiable operation.
TEST(GradientProperty, EveryOperationPassesFiniteDifferences) {
  for (const auto& check : ahl::testing::all_grad_checks()) {
    Rng rng(derive_seed(2024, check.op));
    for (int instance = 0; instance < 20; ++instance) {
      EXPECT_LE(check.run(rng), ahl::testing::kFdTolerance) << check.op << " instance " << instance;
    }
  }
}

TEST(Determinism, RepeatedCallsAreBitwiseIdentical) {
  Rng rng(15);
  const Tensor x = random_tensor({3, 8, 8}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
  const Tensor r = random_tensor({4, 8, 8}, rng);
  EXPECT_TRUE(bitwise_equal(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1)));
  const auto g1 = conv2d_backward(x, w, r, 1, 1), g2 = conv2d_backward(x, w, r, 1, 1);
  EXPECT_TRUE(bitwise_equal(g1.input, g2.input));
  EXPECT_TRUE(bitwise_equal(g1.weights, g2.weights));
  EXPECT_TRUE(bitwise_equal(softmax(x), softmax(x)));
}
