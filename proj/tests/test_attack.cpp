#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "sfmk/attack.hpp"
#include "sfmk/scene.hpp"
#include "test_support.hpp"

namespace {

using sfmk::Arch;
using sfmk::AttackConfig;
using sfmk::FlipDirection;
using sfmk::ImageTriplet;
using sfmk::LossConfig;
using sfmk::ModelBundle;
using sfmk::real;
using sfmk::Rng;
using sfmk::Tensor;

TEST(PgdSchedule, MatchesClosedFormForAllPaperEpsilons) {
  const real eps[8] = {0.25, 0.5, 1, 2, 4, 8, 16, 32};
  const int expect[8] = {1, 1, 2, 3, 5, 10, 20, 36};
  for (int i = 0; i < 8; ++i)
    EXPECT_EQ(sfmk::pgd_iterations(eps[i]), expect[i]) << "eps " << eps[i];
  EXPECT_EQ(sfmk::pgd_iterations(0), 1);
  EXPECT_GE(sfmk::pgd_iterations(real(0.01)), 1);
}

// On a linear objective one projected step is exactly the fast gradient
// sign method: x0 + min(step, eps)/255 * sign(w).
TEST(Pgd, SingleStepEqualsFgsmOnLinearLoss) {
  Tensor w = Tensor::from_data({5}, {2, -3, 0, 0.5, -0.1});
  sfmk::TripletLossFn fn = [&](const std::vector<Tensor>& f) {
    return sfmk::reduce_sum(sfmk::mul(f[0], w));
  };
  Tensor x0 = Tensor::full({5}, real(0.5));
  AttackConfig cfg;
  cfg.epsilon = real(0.25);  // 1 iteration, radius below the step size
  std::vector<Tensor> adv = sfmk::pgd_attack(fn, {x0}, cfg);
  const real r = real(0.25) / 255;
  const real expect[5] = {r, -r, 0, r, -r};
  for (int i = 0; i < 5; ++i)
    ASSERT_NEAR(adv[0][i] - x0[i], expect[i], 1e-15) << "element " << i;
}

TEST(Pgd, ExplicitIterationCountOverridesSchedule) {
  Tensor w = Tensor::full({3}, 1);
  sfmk::TripletLossFn fn = [&](const std::vector<Tensor>& f) {
    return sfmk::reduce_sum(sfmk::mul(f[0], w));
  };
  Tensor x0 = Tensor::full({3}, real(0.5));
  AttackConfig cfg;
  cfg.epsilon = 8;
  cfg.iterations = 5;  // derived schedule would be 10
  std::vector<Tensor> adv = sfmk::pgd_attack(fn, {x0}, cfg);
  for (int i = 0; i < 3; ++i)
    ASSERT_NEAR(adv[0][i] - x0[i], real(5) / 255, 1e-15);
}

TEST(Pgd, EpsilonZeroReturnsInputUnchanged) {
  Tensor w = Tensor::from_data({4}, {1, -2, 3, -4});
  sfmk::TripletLossFn fn = [&](const std::vector<Tensor>& f) {
    return sfmk::reduce_sum(sfmk::mul(f[0], w));
  };
  Tensor x0 = Tensor::from_data({4}, {0.1, 0.4, 0.6, 0.9});
  AttackConfig cfg;
  cfg.epsilon = 0;
  std::vector<Tensor> adv = sfmk::pgd_attack(fn, {x0}, cfg);
  for (int i = 0; i < 4; ++i) ASSERT_EQ(adv[0][i], x0[i]);
}

TEST(Pgd, DescentWithZeroInitialLossStaysAtStart) {
  // Target equals the start point: loss is already 0, the sign gradient
  // vanishes, and the best iterate is the input itself.
  Tensor x0 = Tensor::from_data({6}, {0.2, 0.3, 0.4, 0.5, 0.6, 0.7});
  Tensor target = Tensor::from_data({6}, x0.data());
  sfmk::TripletLossFn fn = [&](const std::vector<Tensor>& f) {
    Tensor diff = sfmk::sub(f[0], target);
    return sfmk::sqrt(sfmk::add(sfmk::reduce_mean(sfmk::mul(diff, diff)),
                                Tensor::scalar(real(1e-24))));
  };
  AttackConfig cfg;
  cfg.epsilon = 4;
  std::vector<Tensor> adv = sfmk::detail::pgd_core(fn, {x0}, cfg, false);
  for (int i = 0; i < 6; ++i) ASSERT_EQ(adv[0][i], x0[i]);
}

TEST(FlipLast2, HorizontalAndVerticalOrientation) {
  Tensor t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor h = sfmk::detail::flip_last2(t, true);
  Tensor v = sfmk::detail::flip_last2(t, false);
  EXPECT_DOUBLE_EQ(h[0], 2);
  EXPECT_DOUBLE_EQ(h[1], 1);
  EXPECT_DOUBLE_EQ(h[2], 4);
  EXPECT_DOUBLE_EQ(h[3], 3);
  EXPECT_DOUBLE_EQ(v[0], 3);
  EXPECT_DOUBLE_EQ(v[1], 4);
  EXPECT_DOUBLE_EQ(v[2], 1);
  EXPECT_DOUBLE_EQ(v[3], 2);
}

struct DeskAttackFixture : ::testing::Test {
  sfmk::SceneConfig sc;
  ImageTriplet item;
  ModelBundle model;
  LossConfig lcfg;

  DeskAttackFixture()
      : item(sfmk::synth_scene(sc)),
        model(sfmk::make_model(sfmk::NetConfig::desk(), Arch::kTransformer,
                               Arch::kTransformer, false, 11)) {}
};

using PgdTriplet = DeskAttackFixture;

TEST_F(PgdTriplet, PerturbationBoundedAndInRange) {
  AttackConfig cfg;
  cfg.epsilon = 2;  // 3 iterations
  ImageTriplet adv = sfmk::pgd_attack_triplet(model, item, lcfg, cfg);
  const real bound = real(2) / 255 + 1e-9;
  const Tensor* clean[3] = {&item.prev, &item.target, &item.next};
  const Tensor* dirty[3] = {&adv.prev, &adv.target, &adv.next};
  real max_delta = 0;
  for (int f = 0; f < 3; ++f)
    for (int64_t i = 0; i < clean[f]->size(); ++i) {
      const real d = std::abs((*dirty[f])[i] - (*clean[f])[i]);
      max_delta = std::max(max_delta, d);
      ASSERT_LE(d, bound);
      ASSERT_GE((*dirty[f])[i], 0);
      ASSERT_LE((*dirty[f])[i], 1);
    }
  EXPECT_GT(max_delta, 0) << "attack did not move any pixel";
}

TEST_F(PgdTriplet, FlipAttackLossNeverIncreases) {
  AttackConfig cfg;
  cfg.epsilon = 2;
  for (FlipDirection dir :
       {FlipDirection::kHorizontal, FlipDirection::kVertical}) {
    Tensor clean_disp = model.disparities(item.target, false)[0];
    Tensor target = sfmk::detail::flip_last2(
        clean_disp, dir == FlipDirection::kHorizontal);
    auto rmse_to_target = [&](const Tensor& image) {
      Tensor disp = model.disparities(image, false)[0];
      real s = 0;
      for (int64_t i = 0; i < disp.size(); ++i)
        s += (disp[i] - target[i]) * (disp[i] - target[i]);
      return std::sqrt(s / static_cast<real>(disp.size()));
    };
    Tensor adv = sfmk::flip_attack(model, item.target, dir, cfg);
    EXPECT_LE(rmse_to_target(adv), rmse_to_target(item.target) + 1e-12);
    const real bound = real(2) / 255 + 1e-9;
    for (int64_t i = 0; i < adv.size(); ++i)
      ASSERT_LE(std::abs(adv[i] - item.target[i]), bound);
  }
}

TEST(Sweep, CleanRowBitIdenticalAndNoiseDegradesOverfitModel) {
  sfmk::SceneConfig sc;
  sfmk::Dataset ds = sfmk::make_synth_dataset(sc, 1);
  ModelBundle model = sfmk::make_model(
      sfmk::NetConfig::desk(), Arch::kTransformer, Arch::kTransformer,
      false, 5);
  LossConfig lcfg;
  sfmk::Adam opt = sfmk::make_adamw(model.trainable(), real(1e-4),
                                    real(1e-2));
  sfmk::train_steps(model, ds.items[0], opt, lcfg, 120);

  sfmk::SweepSuite suite;
  suite.corruptions = {"gaussian_noise"};
  suite.pgd_epsilons = {1};
  suite.flip_h_epsilons = {1};
  suite.seed = 9;
  std::vector<sfmk::SweepRow> rows =
      sfmk::robustness_sweep(model, ds, suite, lcfg);
  ASSERT_EQ(rows.size(), 4u);  // clean + corruption + pgd + flip_h

  const real clean_again =
      sfmk::evaluate(model, ds, {}, lcfg.depth_range).rmse;
  EXPECT_EQ(rows[0].condition, "clean");
  EXPECT_EQ(rows[0].mean_rmse, clean_again) << "clean row must share the "
                                               "evaluate() code path";
  EXPECT_EQ(rows[1].name, "gaussian_noise");
  EXPECT_GE(rows[1].mean_rmse, rows[0].mean_rmse);
  for (const auto& r : rows) {
    EXPECT_EQ(r.n_images, 1);
    EXPECT_TRUE(std::isfinite(r.mean_rmse));
    EXPECT_GE(r.mean_rmse, 0);
  }

  const std::string csv = sfmk::sweep_csv(rows);
  std::istringstream is(csv);
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 5) << line;
    ++lines;
  }
  EXPECT_EQ(lines, 5);  // header + four rows
}

}  // namespace
