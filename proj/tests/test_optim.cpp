#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sfmk/optim.hpp"
#include "sfmk/random.hpp"
#include "sfmk/tensor.hpp"

namespace {

using sfmk::Adam;
using sfmk::OptimConfig;
using sfmk::real;
using sfmk::Rng;
using sfmk::Tensor;

// Plain-array mirror of the update equations, kept independent of the tape.
struct OracleAdam {
  std::vector<real> m, v;
  OptimConfig cfg;
  int64_t t = 0;

  explicit OracleAdam(size_t n, OptimConfig c) : m(n, 0), v(n, 0), cfg(c) {}

  void step(std::vector<real>& x, std::vector<real> g) {
    ++t;
    for (size_t i = 0; i < x.size(); ++i) {
      if (cfg.decoupled)
        x[i] *= 1 - cfg.lr * cfg.weight_decay;
      else
        g[i] += cfg.weight_decay * x[i];
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      const real mh = m[i] / (1 - std::pow(cfg.beta1, real(t)));
      const real vh = v[i] / (1 - std::pow(cfg.beta2, real(t)));
      x[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
};

// Quadratic objective sum_i (a_i x_i^2 + b_i x_i) whose gradient 2 a x + b
// is known in closed form for the oracle side.
void run_against_oracle(OptimConfig cfg) {
  Rng rng(902);
  const int64_t n = 10;
  Tensor x = Tensor::uniform({n}, rng, -2, 2, /*requires_grad=*/true);
  Tensor a = Tensor::uniform({n}, rng, real(0.2), real(1.5));
  Tensor b = Tensor::uniform({n}, rng, -1, 1);
  std::vector<real> xo = x.data();
  OracleAdam oracle(n, cfg);
  Adam opt({x}, cfg);
  for (int step = 0; step < 100; ++step) {
    opt.zero_grad();
    Tensor loss = sfmk::reduce_sum(
        sfmk::add(sfmk::mul(a, sfmk::mul(x, x)), sfmk::mul(b, x)));
    loss.backward();
    opt.step();
    std::vector<real> g(n);
    for (int64_t i = 0; i < n; ++i)
      g[i] = 2 * a.data()[i] * xo[i] + b.data()[i];
    oracle.step(xo, g);
    for (int64_t i = 0; i < n; ++i)
      ASSERT_NEAR(x.data()[i], xo[i], 1e-12)
          << "step " << step << " element " << i;
  }
}

TEST(Adam, MatchesOracleNoDecay) {
  OptimConfig cfg;
  cfg.lr = real(1e-3);
  run_against_oracle(cfg);
}

TEST(Adam, MatchesOracleCoupledDecay) {
  OptimConfig cfg;
  cfg.lr = real(1e-3);
  cfg.weight_decay = real(0.004);
  run_against_oracle(cfg);
}

TEST(Adam, MatchesOracleDecoupledDecay) {
  OptimConfig cfg;
  cfg.lr = real(1e-3);
  cfg.weight_decay = real(0.01);
  cfg.decoupled = true;
  run_against_oracle(cfg);
}

TEST(Adam, FirstStepMovesByLrTimesSign) {
  // After one step the bias-corrected moments cancel: the update is
  // lr * g / (|g| + eps).
  Tensor x = Tensor::scalar(2, /*requires_grad=*/true);
  OptimConfig cfg;
  cfg.lr = real(0.05);
  Adam opt({x}, cfg);
  Tensor loss = sfmk::mul(sfmk::mul(x, x), real(0.5));
  loss.backward();
  const real g = x.grad()[0];
  opt.step();
  EXPECT_NEAR(x.data()[0], 2 - cfg.lr * g / (std::abs(g) + cfg.eps), 1e-15);
}

TEST(AdamW, MissingGradShrinksWeights) {
  // A parameter that never enters a graph sees only the decoupled decay:
  // x <- x * (1 - lr * wd).
  Tensor x = Tensor::full({3}, 4, /*requires_grad=*/true);
  Adam opt = sfmk::make_adamw({x}, real(1e-4), real(0.01));
  opt.step();
  for (real v : x.data()) EXPECT_NEAR(v, 4 * (1 - 1e-6), 1e-12);
}

TEST(Adam, ConvergesOnQuadratic) {
  Tensor x = Tensor::scalar(-4, /*requires_grad=*/true);
  OptimConfig cfg;
  cfg.lr = real(0.1);
  Adam opt({x}, cfg);
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    Tensor d = sfmk::sub(x, sfmk::Tensor::scalar(3));
    sfmk::mul(d, d).backward();
    opt.step();
  }
  EXPECT_LT(std::abs(x.data()[0] - 3), 1e-2);
}

TEST(LrSchedule, DropsAtThreeQuarters) {
  const real lr0 = real(1e-4);
  EXPECT_DOUBLE_EQ(sfmk::lr_schedule(lr0, 0, 20), lr0);
  EXPECT_DOUBLE_EQ(sfmk::lr_schedule(lr0, 14, 20), lr0);
  EXPECT_DOUBLE_EQ(sfmk::lr_schedule(lr0, 15, 20), lr0 / 10);
  EXPECT_DOUBLE_EQ(sfmk::lr_schedule(lr0, 19, 20), lr0 / 10);
  EXPECT_DOUBLE_EQ(sfmk::lr_schedule(real(1e-5), 19, 20), real(1e-6));
}

TEST(Adam, StepCountAndLrMutable) {
  Tensor x = Tensor::scalar(1, /*requires_grad=*/true);
  OptimConfig cfg;
  cfg.lr = real(0.01);
  Adam opt({x}, cfg);
  EXPECT_EQ(opt.steps(), 0);
  sfmk::mul(x, x).backward();
  opt.step();
  EXPECT_EQ(opt.steps(), 1);
  opt.lr() = real(0.001);
  EXPECT_DOUBLE_EQ(opt.lr(), 0.001);
}

}  // namespace
