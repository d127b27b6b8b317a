#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gasca/optim.hpp"
#include "oracles.hpp"

using namespace gasca;

TEST(Nesterov, ZeroMomentumIsPlainSgd) {
  std::mt19937_64 rng(1);
  ad::Parameter p("w", oracle::random_tensor({5}, rng));
  const Tensor start = p.value;
  NesterovState opt({&p}, 0.1, 0.0);
  Tensor expected = start;
  for (int s = 0; s < 4; ++s) {
    p.grad = oracle::random_tensor({5}, rng);
    for (std::size_t i = 0; i < 5; ++i) expected[i] -= 0.1 * p.grad[i];
    opt.step();
  }
  EXPECT_LE(oracle::max_abs_diff(p.value, expected), 1e-15);
}

TEST(Nesterov, VelocityConvergesUnderConstantGradient) {
  ad::Parameter p("w", Tensor({3}, 0.0));
  const double lr = 0.05, mu = 0.9;
  NesterovState opt({&p}, lr, mu);
  p.grad = Tensor({3}, {1.0, -2.0, 0.5});
  for (int s = 0; s < 400; ++s) opt.step();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(opt.velocities()[0][i], lr * p.grad[i] / (1.0 - mu), 1e-12);
}

TEST(Nesterov, MatchesHandRolledUpdate) {
  std::mt19937_64 rng(2);
  ad::Parameter p("w", oracle::random_tensor({4}, rng));
  Tensor theta = p.value, v({4});
  NesterovState opt({&p}, 0.03, 0.9);
  for (int s = 0; s < 10; ++s) {
    p.grad = oracle::random_tensor({4}, rng);
    for (std::size_t i = 0; i < 4; ++i) {
      v[i] = 0.9 * v[i] + 0.03 * p.grad[i];
      theta[i] -= 0.9 * v[i] + 0.03 * p.grad[i];
    }
    opt.step();
  }
  EXPECT_LE(oracle::max_abs_diff(p.value, theta), 1e-14);
}

TEST(Adam, MatchesHandRolledUpdate) {
  std::mt19937_64 rng(3);
  ad::Parameter p("w", oracle::random_tensor({6}, rng));
  Tensor theta = p.value, m({6}), v({6});
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  AdamState opt({&p}, lr);
  for (int t = 1; t <= 25; ++t) {
    p.grad = oracle::random_tensor({6}, rng);
    for (std::size_t i = 0; i < 6; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * p.grad[i];
      v[i] = b2 * v[i] + (1 - b2) * p.grad[i] * p.grad[i];
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      theta[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    opt.step();
  }
  EXPECT_EQ(opt.steps(), 25u);
  EXPECT_LE(oracle::max_rel_err(p.value, theta, 1e-9), 1e-12);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ad::Parameter p("w", Tensor({2}, {1.0, -1.0}));
  p.grad = Tensor({2}, {3.0, -0.2});
  AdamState opt({&p}, 0.5);
  opt.step();
  EXPECT_NEAR(p.value[0], 0.5, 1e-7);
  EXPECT_NEAR(p.value[1], -0.5, 1e-7);
}

TEST(Adam, ZeroLearningRateLeavesParameters) {
  ad::Parameter p("w", Tensor({2}, {1.0, 2.0}));
  p.grad = Tensor({2}, {1.0, 1.0});
  AdamState opt({&p}, 0.0);
  opt.step();
  EXPECT_EQ(p.value, Tensor({2}, {1.0, 2.0}));
}

TEST(Losses, MaeAndCrossEntropy) {
  EXPECT_DOUBLE_EQ(mae_loss(Tensor({4}, {0, 1, 2, 3}), Tensor({4}, {1, 1, 0, 3})), 0.75);
  EXPECT_THROW(mae_loss(Tensor({2}), Tensor({3})), DimensionError);
  EXPECT_NEAR(cross_entropy(Tensor({3}, {0.2, 0.5, 0.3}), 1), -std::log(0.5), 1e-15);
  EXPECT_NEAR(cross_entropy(Tensor({2}, {1.0, 0.0}), 1), -std::log(1e-12), 1e-9);
}
