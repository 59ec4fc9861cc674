// Acceptance gate for the full pipeline. Each criterion prints exactly one
// PASS/FAIL line; the process exits nonzero when any of them fail. Run from
// the build tree: ./tests/acceptance
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sfmk/cli.hpp"
#include "test_support.hpp"

namespace {

using sfmk::Arch;
using sfmk::real;
using sfmk::Rng;
using sfmk::Tensor;
using Clock = std::chrono::steady_clock;
using Outcome = std::pair<bool, std::string>;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream ss;
  ss << std::setprecision(prec) << std::fixed << v;
  return ss.str();
}

bool has_shape(const Tensor& t, std::vector<int64_t> want) {
  if (t.rank() != static_cast<int64_t>(want.size())) return false;
  for (size_t i = 0; i < want.size(); ++i)
    if (t.dim(i) != want[i]) return false;
  return true;
}

// 1: paper-scale token geometry and the five reassembly stage shapes.
Outcome c1_shape_trace() {
  const auto t0 = Clock::now();
  sfmk::NetConfig c = sfmk::NetConfig::paper();
  if (c.tokens() != 480)
    return {false, "token count " + std::to_string(c.tokens()) + " != 480"};
  sfmk::ParamStore ps;
  Rng rng(1);
  using R = sfmk::Reassemble::Resample;
  sfmk::Reassemble s0(ps, "s0", c.dim, c.reassemble_ch[0], R::kQuad, rng);
  sfmk::Reassemble s1(ps, "s1", c.dim, c.reassemble_ch[1], R::kDouble, rng);
  sfmk::Reassemble s2(ps, "s2", c.dim, c.reassemble_ch[2], R::kNone, rng);
  sfmk::Reassemble s3(ps, "s3", c.dim, c.reassemble_ch[3], R::kHalf, rng);
  sfmk::Reassemble se(ps, "se", c.dim, c.ego_ch, R::kNone, rng);
  Tensor tokens = Tensor::uniform({c.tokens() + 1, c.dim}, rng, -1, 1);
  const int64_t gh = c.grid_h(), gw = c.grid_w();
  struct Want {
    const sfmk::Reassemble* stage;
    std::vector<int64_t> shape;
    const char* label;
  };
  const Want wants[5] = {
      {&s0, {96, 48, 160}, "stage3"},   {&s1, {768, 24, 80}, "stage6"},
      {&s2, {1536, 12, 40}, "stage9"},  {&s3, {3072, 6, 20}, "stage12"},
      {&se, {2048, 12, 40}, "ego"},
  };
  for (const Want& w : wants) {
    Tensor out = w.stage->forward(tokens, gh, gw);
    if (!has_shape(out, w.shape))
      return {false, std::string(w.label) + " produced " +
                         sfmk::shape_str(out.shape())};
  }
  const double dt = seconds_since(t0);
  if (dt >= 10.0) return {false, "trace took " + fmt(dt, 2) + " s >= 10 s"};
  return {true, "480 tokens, five stage shapes exact, " + fmt(dt, 2) + " s"};
}

// 2: the attack iteration schedule at the eight canonical strengths.
Outcome c2_schedule() {
  const real eps[8] = {0.25, 0.5, 1, 2, 4, 8, 16, 32};
  const int want[8] = {1, 1, 2, 3, 5, 10, 20, 36};
  for (int i = 0; i < 8; ++i) {
    const int got = sfmk::pgd_iterations(eps[i]);
    if (got != want[i])
      return {false, "eps " + fmt(eps[i], 2) + " gave " +
                         std::to_string(got) + " != " +
                         std::to_string(want[i])};
  }
  return {true, "all 8 epsilon/iteration pairs exact"};
}

// 3: finite-difference agreement for every primitive, the geometry and loss
// layers, and the end-to-end objective.
Outcome c3_gradients() {
  const auto t0 = Clock::now();
  std::vector<std::string> fails = sfmk_test::primitive_gradient_battery();
  for (const std::string& f : sfmk_test::geometry_loss_gradient_battery())
    fails.push_back(f);
  for (const std::string& f : sfmk_test::total_loss_gradient_battery())
    fails.push_back(f);
  const double dt = seconds_since(t0);
  if (!fails.empty())
    return {false, std::to_string(fails.size()) + " checks off, first: " +
                       fails.front()};
  if (dt >= 300.0)
    return {false, "suite took " + fmt(dt, 1) + " s >= 300 s"};
  return {true, "rtol 1e-3 atol 1e-6 everywhere, " + fmt(dt, 1) + " s"};
}

// 4: projective geometry identities.
Outcome c4_geometry() {
  Rng rng(7);
  // identity transform leaves every pixel in place
  {
    Tensor depth = Tensor::uniform({24, 32}, rng, 1, 10);
    Tensor k = Tensor::from_data({4}, {30, 28, 15.5, 11.5});
    sfmk::FlowField f =
        sfmk::warp_coordinates(depth, k, sfmk::pose_to_transform(
                                            Tensor::zeros({6})));
    real worst = 0;
    for (int64_t v = 0; v < 24; ++v)
      for (int64_t u = 0; u < 32; ++u) {
        if (!f.valid[v * 32 + u]) return {false, "identity warp invalidated a pixel"};
        const int64_t i = (v * 32 + u) * 2;
        worst = std::max(worst, std::abs(f.coords[i] - u));
        worst = std::max(worst, std::abs(f.coords[i + 1] - v));
      }
    if (worst >= 1e-6)
      return {false, "identity warp moved a pixel by " + fmt(worst, 9)};
  }
  // project(backproject(depth)) returns the pixel grid
  {
    Tensor depth = Tensor::uniform({13, 17}, rng, real(0.5), 20);
    Tensor k = Tensor::from_data({4}, {33.1, 41.7, 8.2, 6.1});
    auto [uv, valid] = sfmk::project(sfmk::backproject(depth, k), k);
    Tensor grid = sfmk::pixel_grid(13, 17);
    real worst = 0;
    for (int64_t i = 0; i < 13 * 17; ++i) {
      if (!valid[i]) return {false, "round trip invalidated a pixel"};
      worst = std::max(worst, std::abs(uv[i] - grid[i]));
      worst = std::max(worst, std::abs(uv[13 * 17 + i] - grid[13 * 17 + i]));
    }
    if (worst >= 1e-9)
      return {false, "round trip error " + fmt(worst, 12)};
  }
  // lateral translation shifts exactly fx*tx/depth pixels
  real worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const real fx = rng.uniform(10, 50), fy = rng.uniform(10, 50);
    const real tx = rng.uniform(real(-0.2), real(0.2));
    const real d = rng.uniform(2, 10);
    Tensor k = Tensor::from_data(
        {4}, {fx, fy, rng.uniform(6, 10), rng.uniform(5, 8)});
    Tensor pose = Tensor::from_data({6}, {0, 0, 0, tx, 0, 0});
    sfmk::FlowField f = sfmk::warp_coordinates(
        Tensor::full({16, 20}, d), k, sfmk::pose_to_transform(pose));
    const real shift = fx * tx / d;
    for (int64_t v = 0; v < 16; ++v)
      for (int64_t u = 0; u < 20; ++u) {
        const int64_t i = (v * 20 + u) * 2;
        worst = std::max(worst, std::abs(f.coords[i] - u - shift));
        worst = std::max(worst, std::abs(f.coords[i + 1] - v));
      }
  }
  if (worst >= 1e-6)
    return {false, "translation shift off by " + fmt(worst, 9)};
  return {true, "identity < 1e-6, round trip < 1e-9, fx*tx/d < 1e-6"};
}

struct OracleReport {
  real abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  real delta1 = 0, delta2 = 0, delta3 = 0, silog = 0, sq_err_rel = 0;
  int64_t n = 0;
};

// Straight-line reference written against the metric definitions, kept
// independent of the library implementation.
OracleReport oracle_metrics(std::vector<real> gt, std::vector<real> pred,
                            bool scaled, real cap, real floor_v) {
  if (scaled) {
    std::vector<real> gv, pv;
    for (size_t i = 0; i < gt.size(); ++i)
      if (gt[i] > 0) {
        gv.push_back(gt[i]);
        pv.push_back(pred[i]);
      }
    auto median = [](std::vector<real> v) {
      std::sort(v.begin(), v.end());
      const size_t m = v.size() / 2;
      return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2;
    };
    const real ratio = median(gv) / median(pv);
    for (real& p : pred) p *= ratio;
  }
  OracleReport r;
  real se = 0, sle = 0, e = 0, e2 = 0;
  for (size_t i = 0; i < gt.size(); ++i) {
    const real g = gt[i];
    if (!(g > 0 && g <= cap)) continue;
    const real p = std::clamp(pred[i], floor_v, cap);
    const real d = p - g, le = std::log(p) - std::log(g);
    const real ratio = std::max(p / g, g / p);
    r.abs_rel += std::abs(d) / g;
    r.sq_rel += d * d / g;
    se += d * d;
    sle += le * le;
    e += le;
    e2 += le * le;
    r.sq_err_rel += d * d / (g * g);
    r.delta1 += ratio < real(1.25);
    r.delta2 += ratio < real(1.25) * real(1.25);
    r.delta3 += ratio < real(1.25) * real(1.25) * real(1.25);
    ++r.n;
  }
  const real rn = static_cast<real>(r.n);
  r.abs_rel /= rn;
  r.sq_rel /= rn;
  r.rmse = std::sqrt(se / rn);
  r.rmse_log = std::sqrt(sle / rn);
  r.delta1 /= rn;
  r.delta2 /= rn;
  r.delta3 /= rn;
  r.silog = std::sqrt(std::max(real(0), e2 / rn - (e / rn) * (e / rn))) * 100;
  r.sq_err_rel = 100 * r.sq_err_rel / rn;
  return r;
}

// 5: appearance-loss closed forms and the metric oracle.
Outcome c5_losses_and_metrics() {
  // constant images: variances vanish, the map collapses to a scalar
  {
    Tensor x = Tensor::full({3, 8, 8}, real(0.2));
    Tensor y = Tensor::full({3, 8, 8}, real(0.8));
    const real want = (real(0.32) + real(1e-4)) / (real(0.68) + real(1e-4));
    Tensor s = sfmk::ssim(x, y);
    for (int64_t i = 0; i < s.size(); ++i)
      if (std::abs(s[i] - want) >= 1e-6)
        return {false, "ssim map entry " + fmt(s[i], 8) + " != " +
                           fmt(want, 8)};
  }
  // static scene: the auto-mask removes every pixel, the loss is exactly 0
  {
    Rng rng(11);
    Tensor img = Tensor::uniform({3, 10, 12}, rng, 0, 1);
    std::vector<std::vector<uint8_t>> valids(
        2, std::vector<uint8_t>(10 * 12, 1));
    sfmk::ReprojectionLoss rl = sfmk::min_reprojection_with_automask(
        img, {img, img}, valids, {img, img});
    if (rl.loss[0] != 0) return {false, "static-scene loss not exactly 0"};
    for (uint8_t m : rl.mask)
      if (m) return {false, "static-scene auto-mask kept a pixel"};
  }
  // metrics against the straight-line oracle on random 10-pixel instances
  Rng rng(19);
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<real> gt(10), pred(10);
    for (int i = 0; i < 10; ++i) {
      gt[i] = rng.uniform(0, 1) < real(0.2) ? 0 : rng.uniform(real(0.5), 90);
      pred[i] = rng.uniform(real(0.1), 100);
    }
    if (std::none_of(gt.begin(), gt.end(),
                     [](real g) { return g > 0 && g <= 80; }))
      gt[0] = 42;
    const bool scaled = trial % 2 == 0;
    Tensor gt_t = Tensor::from_data({2, 5}, gt);
    Tensor pr_t = Tensor::from_data({2, 5}, pred);
    sfmk::EvalConfig ecfg;
    ecfg.scaled = scaled;
    Tensor fitted = scaled ? sfmk::median_scale(pr_t, gt_t) : pr_t;
    sfmk::MetricsReport got = sfmk::depth_metrics(fitted, gt_t, ecfg);
    OracleReport want =
        oracle_metrics(gt, pred, scaled, ecfg.cap, ecfg.floor);
    const real diffs[9] = {
        std::abs(got.abs_rel - want.abs_rel),
        std::abs(got.sq_rel - want.sq_rel),
        std::abs(got.rmse - want.rmse),
        std::abs(got.rmse_log - want.rmse_log),
        std::abs(got.delta1 - want.delta1),
        std::abs(got.delta2 - want.delta2),
        std::abs(got.delta3 - want.delta3),
        std::abs(got.silog - want.silog),
        std::abs(got.sq_err_rel - want.sq_err_rel)};
    for (real d : diffs)
      if (d >= 1e-10)
        return {false, "metric off oracle by " + fmt(d, 14) + " on trial " +
                           std::to_string(trial)};
    if (got.n_pixels != want.n)
      return {false, "valid-pixel counts differ"};
  }
  return {true, "ssim closed form 1e-6, static mask exact, oracle 1e-10"};
}

struct ComboRun {
  std::string label;
  int steps = 0;
  real loss = 0, abs_rel = 0;
  bool converged = false;
};

ComboRun train_until(Arch depth, Arch ego, int cap_steps) {
  ComboRun run;
  run.label.push_back(depth == Arch::kTransformer ? 't' : 'c');
  run.label.push_back(ego == Arch::kTransformer ? 't' : 'c');
  sfmk::SceneConfig sc;
  sfmk::Dataset ds = sfmk::make_synth_dataset(sc, 1);
  sfmk::ModelBundle model =
      sfmk::make_model(sfmk::NetConfig::desk(), depth, ego, false, 33);
  sfmk::LossConfig lcfg;
  sfmk::Adam opt = sfmk::make_adamw(model.trainable(), real(1e-4),
                                    real(1e-2));
  while (run.steps < cap_steps) {
    std::vector<real> chunk =
        sfmk::train_steps(model, ds.items[0], opt, lcfg, 50);
    run.steps += 50;
    run.loss = chunk.back();
    run.abs_rel = sfmk::evaluate(model, ds, {}, lcfg.depth_range).abs_rel;
    if (run.loss < real(0.02) && run.abs_rel < real(0.15)) {
      run.converged = true;
      break;
    }
  }
  return run;
}

// 6: every architecture combination overfits the synthetic scene.
Outcome c6_overfit_all_combos() {
  const auto t0 = Clock::now();
  const std::pair<Arch, Arch> combos[4] = {
      {Arch::kConv, Arch::kConv},
      {Arch::kConv, Arch::kTransformer},
      {Arch::kTransformer, Arch::kConv},
      {Arch::kTransformer, Arch::kTransformer}};
  std::string detail;
  for (const auto& [d, e] : combos) {
    ComboRun run = train_until(d, e, 2000);
    if (!run.converged)
      return {false, run.label + " stuck at loss " + fmt(run.loss) +
                         " abs_rel " + fmt(run.abs_rel) + " after " +
                         std::to_string(run.steps) + " steps"};
    detail += run.label + ":" + std::to_string(run.steps) + " ";
  }
  const double dt = seconds_since(t0);
  if (dt >= 900.0)
    return {false, "took " + fmt(dt, 0) + " s >= 900 s"};
  return {true, "steps to loss<0.02 & abs_rel<0.15: " + detail + fmt(dt, 0) +
                    " s"};
}

// 7: self-supervised intrinsics land near the true focal length without
// hurting depth.
Outcome c7_learned_intrinsics() {
  sfmk::SceneConfig sc;
  sfmk::Dataset ds = sfmk::make_synth_dataset(sc, 1);
  sfmk::LossConfig lcfg;
  auto run800 = [&](bool learn_k) {
    sfmk::ModelBundle model =
        sfmk::make_model(sfmk::NetConfig::desk(), Arch::kTransformer,
                         Arch::kTransformer, learn_k, 33);
    sfmk::Adam opt = sfmk::make_adamw(model.trainable(), real(1e-4),
                                      real(1e-2));
    sfmk::train_steps(model, ds.items[0], opt, lcfg, 800);
    const real abs_rel =
        sfmk::evaluate(model, ds, {}, lcfg.depth_range).abs_rel;
    const Tensor k =
        sfmk::triplet_forward(model, ds.items[0], lcfg, false).k_used;
    return std::make_pair(abs_rel, k[0]);
  };
  auto [rel_learned, fx] = run800(true);
  auto [rel_given, fx_given] = run800(false);
  (void)fx_given;
  const real lo = real(0.8) * sc.fx, hi = real(1.2) * sc.fx;
  if (!(fx >= lo && fx <= hi))
    return {false, "fx " + fmt(fx, 2) + " outside [" + fmt(lo, 1) + ", " +
                       fmt(hi, 1) + "]"};
  const real delta = std::abs(rel_learned - rel_given);
  if (delta >= real(0.05))
    return {false, "abs_rel degraded by " + fmt(delta) + " >= 0.05"};
  return {true, "fx " + fmt(fx, 2) + " vs true " + fmt(sc.fx, 1) +
                    ", abs_rel delta " + fmt(delta)};
}

// 8: optimizer trajectories against a straight-line reference and the
// learning-rate schedule.
Outcome c8_optimizers() {
  for (const bool decoupled : {false, true}) {
    Rng rng(decoupled ? 101 : 100);
    std::vector<real> w(10), b(10), x(10);
    for (int i = 0; i < 10; ++i) {
      w[i] = rng.uniform(real(0.5), 2);
      b[i] = rng.uniform(-1, 1);
      x[i] = rng.uniform(-2, 2);
    }
    sfmk::OptimConfig cfg;
    cfg.lr = real(1e-2);
    cfg.weight_decay = decoupled ? real(0.01) : real(0);
    cfg.decoupled = decoupled;
    Tensor xt = Tensor::from_data({10}, x, true);
    Tensor wt = Tensor::from_data({10}, w);
    Tensor bt = Tensor::from_data({10}, b);
    sfmk::Adam opt({xt}, cfg);
    std::vector<real> ox = x, m(10, 0), v(10, 0);
    for (int step = 1; step <= 100; ++step) {
      opt.zero_grad();
      Tensor loss = sfmk::reduce_sum(
          sfmk::add(sfmk::mul(sfmk::mul(xt, xt), wt), sfmk::mul(xt, bt)));
      loss.backward();
      opt.step();
      const real bc1 = 1 - std::pow(cfg.beta1, real(step));
      const real bc2 = 1 - std::pow(cfg.beta2, real(step));
      for (int i = 0; i < 10; ++i) {
        const real g = 2 * w[i] * ox[i] + b[i];
        if (decoupled) ox[i] *= 1 - cfg.lr * cfg.weight_decay;
        m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
        ox[i] -= cfg.lr * (m[i] / bc1) /
                 (std::sqrt(v[i] / bc2) + cfg.eps);
      }
    }
    for (int i = 0; i < 10; ++i)
      if (std::abs(xt[i] - ox[i]) >= 1e-12)
        return {false, std::string(decoupled ? "adamw" : "adam") +
                           " drifted " + fmt(std::abs(xt[i] - ox[i]), 15) +
                           " from the reference"};
  }
  const real lr0 = real(3e-4);
  const int epochs[4] = {0, 14, 15, 19};
  const real want[4] = {lr0, lr0, lr0 / 10, lr0 / 10};
  for (int i = 0; i < 4; ++i)
    if (sfmk::lr_schedule(lr0, epochs[i], 20) != want[i])
      return {false, "lr at epoch " + std::to_string(epochs[i]) + " wrong"};
  return {true, "adam & adamw within 1e-12 over 100 steps, schedule exact"};
}

// 9: corruption hygiene, attack bounds, and sweep/eval agreement.
Outcome c9_robustness() {
  Rng rng(5);
  Tensor probe = Tensor::uniform({3, 24, 32}, rng, 0, 1);
  probe.data()[0] = 0;
  probe.data()[probe.size() - 1] = 1;
  for (const std::string& name : sfmk::corruption_names())
    for (int sev = 1; sev <= 5; ++sev) {
      Tensor a = sfmk::corrupt(probe, {name, sev}, 77);
      Tensor b = sfmk::corrupt(probe, {name, sev}, 77);
      if (!has_shape(a, {3, 24, 32}))
        return {false, name + " changed the shape"};
      for (int64_t i = 0; i < a.size(); ++i) {
        if (a[i] < 0 || a[i] > 1)
          return {false, name + " left [0,1] at severity " +
                             std::to_string(sev)};
        if (a[i] != b[i])
          return {false, name + " not deterministic per seed"};
      }
    }
  sfmk::SceneConfig sc;
  sfmk::Dataset ds = sfmk::make_synth_dataset(sc, 1);
  sfmk::LossConfig lcfg;
  sfmk::ModelBundle model =
      sfmk::make_model(sfmk::NetConfig::desk(), Arch::kTransformer,
                       Arch::kTransformer, false, 2);
  {
    sfmk::AttackConfig acfg;
    acfg.epsilon = 4;
    sfmk::ImageTriplet adv =
        sfmk::pgd_attack_triplet(model, ds.items[0], lcfg, acfg);
    const real bound = real(4) / 255 + 1e-9;
    const Tensor* clean[3] = {&ds.items[0].prev, &ds.items[0].target,
                              &ds.items[0].next};
    const Tensor* dirty[3] = {&adv.prev, &adv.target, &adv.next};
    for (int f = 0; f < 3; ++f)
      for (int64_t i = 0; i < clean[f]->size(); ++i) {
        if (std::abs((*dirty[f])[i] - (*clean[f])[i]) > bound)
          return {false, "pgd exceeded the epsilon ball"};
        if ((*dirty[f])[i] < 0 || (*dirty[f])[i] > 1)
          return {false, "pgd left [0,1]"};
      }
  }
  for (sfmk::FlipDirection dir :
       {sfmk::FlipDirection::kHorizontal, sfmk::FlipDirection::kVertical}) {
    const Tensor& img = ds.items[0].target;
    Tensor target = sfmk::detail::flip_last2(
        model.disparities(img, false)[0],
        dir == sfmk::FlipDirection::kHorizontal);
    auto dist = [&](const Tensor& image) {
      Tensor disp = model.disparities(image, false)[0];
      real s = 0;
      for (int64_t i = 0; i < disp.size(); ++i)
        s += (disp[i] - target[i]) * (disp[i] - target[i]);
      return std::sqrt(s / static_cast<real>(disp.size()));
    };
    sfmk::AttackConfig acfg;
    acfg.epsilon = 2;
    Tensor adv = sfmk::flip_attack(model, img, dir, acfg);
    if (dist(adv) > dist(img) + 1e-12)
      return {false, "flip attack increased its own objective"};
  }
  sfmk::SweepSuite suite;
  suite.corruptions = {"gaussian_noise"};
  suite.pgd_epsilons = {1};
  suite.flip_h_epsilons = {1};
  suite.seed = 3;
  std::vector<sfmk::SweepRow> rows =
      sfmk::robustness_sweep(model, ds, suite, lcfg);
  const real clean = sfmk::evaluate(model, ds, {}, lcfg.depth_range).rmse;
  if (rows.empty() || rows[0].condition != "clean")
    return {false, "sweep did not emit the clean row first"};
  if (rows[0].mean_rmse != clean)
    return {false, "clean sweep row differs from evaluate() bit-for-bit"};
  return {true,
          "15 corruptions clean, pgd ball + flip descent hold, sweep "
          "matches eval"};
}

// 10: the forward pass benchmarks at a positive frame rate.
Outcome c10_bench() {
  sfmk::SceneConfig sc;
  sfmk::ImageTriplet item = sfmk::synth_scene(sc);
  sfmk::ModelBundle model =
      sfmk::make_model(sfmk::NetConfig::desk(), Arch::kTransformer,
                       Arch::kTransformer, false, 4);
  model.disparities(item.target, false);
  const auto t0 = Clock::now();
  const int iters = 5;
  for (int i = 0; i < iters; ++i) model.disparities(item.target, false);
  const double fps = iters / seconds_since(t0);
  if (!(fps > 0)) return {false, "fps " + fmt(fps, 3)};
  return {true, fmt(fps, 1) + " fps on the desk preset"};
}

}  // namespace

int main() {
  struct Entry {
    int n;
    Outcome (*fn)();
  };
  const Entry entries[] = {
      {1, c1_shape_trace}, {2, c2_schedule},  {3, c3_gradients},
      {4, c4_geometry},    {5, c5_losses_and_metrics},
      {6, c6_overfit_all_combos}, {7, c7_learned_intrinsics},
      {8, c8_optimizers},  {9, c9_robustness}, {10, c10_bench},
  };
  int failed = 0;
  for (const Entry& e : entries) {
    Outcome out{false, "unknown"};
    try {
      out = e.fn();
    } catch (const std::exception& ex) {
      out = {false, std::string("exception: ") + ex.what()};
    }
    std::cout << "criterion " << e.n << ": "
              << (out.first ? "PASS" : "FAIL");
    if (!out.second.empty()) std::cout << " (" << out.second << ")";
    std::cout << std::endl;
    if (!out.first) ++failed;
  }
  if (failed) {
    std::cout << failed << " criteria failed" << std::endl;
    return 1;
  }
  std::cout << "all criteria passed" << std::endl;
  return 0;
}
