#include "sfmk/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "sfmk/depth_range.hpp"
#include "test_support.hpp"

using namespace sfmk;

namespace {

using sfmk_test::render_plane;

// Fronto-parallel plane at constant depth seen from two laterally displaced
// cameras; the chosen shift fx*tx/D lands on integers so warps are exact.
struct MicroScene {
  Tensor target, source, k, pose, true_disp;
  real depth = 5.0;
  int64_t h = 16, w = 32;

  MicroScene() {
    const real fx = 20.0, tx = 0.5;  // shift = 20*0.5/5 = 2 px
    const real shift = fx * tx / depth;
    target = render_plane(h, w, 0);
    source = render_plane(h, w, shift);
    k = Tensor::from_data({4}, {fx, fx, (w - 1) / real(2), (h - 1) / real(2)});
    pose = Tensor::from_data({6}, {0, 0, 0, tx, 0, 0});
    DepthRange range;
    const real d = (1 / depth - range.b()) / range.a();
    true_disp = Tensor::full({h, w}, d);
  }
};

}  // namespace

TEST(Ssim, SelfSimilarityIsOne) {
  Rng rng(41);
  Tensor x = Tensor::uniform({3, 6, 6}, rng, 0.0, 1.0);
  Tensor s = ssim(x, x);
  for (real v : s.data()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Ssim, ConstantImagesClosedForm) {
  Tensor x = Tensor::full({1, 5, 5}, 0.2);
  Tensor y = Tensor::full({1, 5, 5}, 0.8);
  const real c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const real expect =
      (2 * 0.2 * 0.8 + c1) * c2 / ((0.2 * 0.2 + 0.8 * 0.8 + c1) * c2);
  Tensor s = ssim(x, y);
  for (real v : s.data()) EXPECT_NEAR(v, expect, 1e-6);
  EXPECT_NEAR(expect, 0.4707, 5e-5);
}

TEST(Ssim, RangeBound) {
  Rng rng(43);
  Tensor x = Tensor::uniform({3, 8, 8}, rng, 0.0, 1.0);
  Tensor y = Tensor::uniform({3, 8, 8}, rng, 0.0, 1.0);
  Tensor s = ssim(x, y);
  for (real v : s.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Photometric, IdenticalImagesZero) {
  Rng rng(44);
  Tensor x = Tensor::uniform({3, 6, 7}, rng, 0.0, 1.0);
  Tensor pe = photometric_error(x, x);
  for (real v : pe.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Photometric, AlphaZeroIsChannelMeanL1) {
  Rng rng(45);
  Tensor x = Tensor::uniform({3, 5, 5}, rng, 0.0, 1.0);
  Tensor y = Tensor::uniform({3, 5, 5}, rng, 0.0, 1.0);
  Tensor pe = photometric_error(x, y, 0.0);
  Tensor l1 = reduce_mean(abs(sub(x, y)), 0);
  for (size_t i = 0; i < pe.data().size(); ++i)
    EXPECT_NEAR(pe.data()[i], l1.data()[i], 1e-12);
}

TEST(Photometric, ConstantImagesClosedForm) {
  Tensor x = Tensor::full({3, 5, 5}, 0.2);
  Tensor y = Tensor::full({3, 5, 5}, 0.8);
  const real c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const real s =
      (2 * 0.2 * 0.8 + c1) * c2 / ((0.2 * 0.2 + 0.8 * 0.8 + c1) * c2);
  const real expect = 0.85 / 2 * (1 - s) + 0.15 * 0.6;
  Tensor pe = photometric_error(x, y, 0.85);
  for (real v : pe.data()) EXPECT_NEAR(v, expect, 1e-9);
  EXPECT_NEAR(expect, 0.3150, 5e-5);
}

TEST(Automask, StaticSceneExactZero) {
  Rng rng(46);
  Tensor target = Tensor::uniform({3, 4, 6}, rng, 0.0, 1.0);
  Tensor synth = add(target, Tensor::full(target.shape(), 0.1));
  std::vector<uint8_t> valid(4 * 6, 1);
  auto r = min_reprojection_with_automask(target, {synth}, {valid}, {target});
  EXPECT_EQ(r.loss.item(), 0.0);
  for (uint8_t m : r.mask) EXPECT_EQ(m, 0);
}

TEST(Automask, PerfectSynthesisZero) {
  Rng rng(47);
  Tensor target = Tensor::uniform({3, 4, 6}, rng, 0.1, 0.9);
  Tensor source = sub(Tensor::full(target.shape(), 1.0), target);
  std::vector<uint8_t> valid(4 * 6, 1);
  auto r = min_reprojection_with_automask(target, {target}, {valid}, {source});
  EXPECT_EQ(r.loss.item(), 0.0);
  for (uint8_t m : r.mask) EXPECT_EQ(m, 1);
}

TEST(Automask, DisjointWinnersMatchBruteForceMin) {
  Rng rng(48);
  const int64_t h = 4, w = 6;
  Tensor target = Tensor::uniform({3, h, w}, rng, 0.2, 0.8);
  // Source 1 wins on the left half, source 2 on the right.
  Tensor s1 = Tensor(target), s2 = Tensor(target);
  Tensor n1 = Tensor::uniform({3, h, w}, rng, 0.05, 0.10);
  Tensor n2 = Tensor::uniform({3, h, w}, rng, 0.05, 0.10);
  s1 = add(target, n1);
  s2 = add(target, n2);
  auto& v1 = s1.data();
  auto& v2 = s2.data();
  for (int64_t ch = 0; ch < 3; ++ch)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const size_t idx = ch * h * w + i * w + j;
        if (j < w / 2)
          v1[idx] = target.data()[idx] + 0.01;
        else
          v2[idx] = target.data()[idx] + 0.01;
      }
  Tensor far = Tensor::full(target.shape(), 0.99);
  std::vector<uint8_t> valid(h * w, 1);
  auto r = min_reprojection_with_automask(target, {s1, s2}, {valid, valid},
                                          {far, far});
  Tensor pe1 = photometric_error(target, s1);
  Tensor pe2 = photometric_error(target, s2);
  real oracle = 0;
  for (int64_t i = 0; i < h * w; ++i)
    oracle += std::min(pe1.data()[i], pe2.data()[i]);
  oracle /= static_cast<real>(h * w);
  EXPECT_NEAR(r.loss.item(), oracle, 1e-12);
}

TEST(Automask, InvalidPixelsExcludedFromMin) {
  Rng rng(49);
  const int64_t h = 2, w = 3;
  Tensor target = Tensor::uniform({3, h, w}, rng, 0.2, 0.8);
  Tensor good = add(target, Tensor::full(target.shape(), 0.02));
  Tensor zero = Tensor::zeros(target.shape());  // error huge but "valid"
  std::vector<uint8_t> all(h * w, 1), none(h * w, 0);
  Tensor far = Tensor::full(target.shape(), 0.99);
  // The perfect-looking all-zero synth is fully invalid, so the good one
  // must win every pixel.
  auto r = min_reprojection_with_automask(target, {zero, good}, {none, all},
                                          {far, far});
  Tensor pe = photometric_error(target, good);
  real oracle = 0;
  for (real v : pe.data()) oracle += v;
  oracle /= static_cast<real>(h * w);
  EXPECT_NEAR(r.loss.item(), oracle, 1e-12);
}

TEST(Smoothness, ConstantDisparityZero) {
  Tensor disp = Tensor::full({4, 5}, 0.37);
  Rng rng(50);
  Tensor img = Tensor::uniform({3, 4, 5}, rng, 0.0, 1.0);
  EXPECT_NEAR(smoothness(disp, img).item(), 0.0, 1e-12);
}

TEST(Smoothness, RampSlopeOnConstantImage) {
  Tensor disp = Tensor::from_data({1, 4}, {0.1, 0.2, 0.3, 0.4});
  Tensor img = Tensor::full({3, 1, 4}, 0.5);
  // Mean-normalized ramp has slope 0.1/0.25 = 0.4.
  EXPECT_NEAR(smoothness(disp, img).item(), 0.4, 1e-6);
}

TEST(Smoothness, EdgeAwareDiscount) {
  Tensor disp = Tensor::from_data({1, 4}, {0.2, 0.2, 0.8, 0.8});
  Tensor flat = Tensor::full({3, 1, 4}, 0.5);
  Tensor edged = Tensor::zeros({3, 1, 4});
  auto& ev = edged.data();
  for (int ch = 0; ch < 3; ++ch) {
    ev[ch * 4 + 0] = 0.1;
    ev[ch * 4 + 1] = 0.1;
    ev[ch * 4 + 2] = 0.9;
    ev[ch * 4 + 3] = 0.9;
  }
  EXPECT_LT(smoothness(disp, edged).item(), smoothness(disp, flat).item());
}

TEST(DepthRangeMap, Endpoints) {
  DepthRange range;
  Tensor one = Tensor::from_data({1}, {1.0});
  Tensor zero = Tensor::from_data({1}, {0.0});
  Tensor half = Tensor::from_data({1}, {0.5});
  EXPECT_NEAR(disp_to_depth(one, range).item(), 0.1, 1e-12);
  EXPECT_NEAR(disp_to_depth(zero, range).item(), 100.0, 1e-9);
  EXPECT_NEAR(disp_to_depth(half, range).item(), 1.0 / (0.5 * 9.99 + 0.01),
              1e-12);
  EXPECT_NEAR(disp_to_depth(half, range).item(), 0.1998, 2e-4);
}

TEST(DepthRangeMap, Monotone) {
  DepthRange range;
  real prev = 1e18;
  for (int i = 0; i < 100; ++i) {
    Tensor d = Tensor::from_data({1}, {i / 99.0});
    const real depth = disp_to_depth(d, range).item();
    EXPECT_LT(depth, prev);
    prev = depth;
  }
}

TEST(TotalLoss, TruthIsNearZeroOnMicroScene) {
  MicroScene sc;
  std::vector<Tensor> disps;
  for (int s = 0; s < 4; ++s)
    disps.push_back(Tensor::full({sc.h >> s, sc.w >> s},
                                 sc.true_disp.data()[0]));
  auto r = total_loss(disps, sc.target, {sc.source}, sc.k, {sc.pose});
  // Integer-pixel shift makes warping exact; constant disparity has zero
  // smoothness; only mask bookkeeping noise remains.
  EXPECT_LT(r.total.item(), 5e-3);
}

TEST(TotalLoss, ZeroLambdaPerfectSynthesisZero) {
  MicroScene sc;
  LossConfig cfg;
  cfg.smoothness_lambda = 0;
  std::vector<Tensor> disps;
  for (int s = 0; s < 4; ++s)
    disps.push_back(Tensor::full({sc.h >> s, sc.w >> s},
                                 sc.true_disp.data()[0]));
  auto r = total_loss(disps, sc.target, {sc.source}, sc.k, {sc.pose}, cfg);
  EXPECT_LT(r.total.item(), 5e-3);
}

TEST(TotalLoss, PyramidShapeValidation) {
  MicroScene sc;
  std::vector<Tensor> bad{Tensor::full({sc.h, sc.w}, 0.5),
                          Tensor::full({sc.h, sc.w}, 0.5)};
  EXPECT_THROW(total_loss(bad, sc.target, {sc.source}, sc.k, {sc.pose}),
               ShapeError);
}

TEST(TotalLoss, GradientDescentDecreases) {
  MicroScene sc;
  // Start away from the truth and take 50 plain gradient steps on the
  // disparity pyramid and pose.
  std::vector<Tensor> disps;
  for (int s = 0; s < 4; ++s) {
    Tensor d = Tensor::full({sc.h >> s, sc.w >> s},
                            sc.true_disp.data()[0] * real(1.6));
    d.set_requires_grad(true);
    disps.push_back(d);
  }
  Tensor pose = Tensor::from_data({6}, {0, 0, 0, 0.3, 0.05, 0}, true);
  const real lr = 1e-4;
  real prev = 1e18;
  int non_monotone = 0;
  for (int step = 0; step < 50; ++step) {
    for (auto& d : disps) d.zero_grad();
    pose.zero_grad();
    auto r = total_loss(disps, sc.target, {sc.source}, sc.k, {pose});
    const real cur = r.total.item();
    if (cur >= prev) ++non_monotone;
    prev = cur;
    r.total.backward();
    for (auto& d : disps)
      for (size_t i = 0; i < d.data().size(); ++i)
        d.data()[i] -= lr * d.grad()[i];
    for (size_t i = 0; i < 6; ++i) pose.data()[i] -= lr * pose.grad()[i];
  }
  EXPECT_LE(non_monotone, 5);
}

TEST(TotalLossGradients, EndToEndFiniteDifferences) {
  for (const auto& f : sfmk_test::total_loss_gradient_battery())
    ADD_FAILURE() << f;
}
