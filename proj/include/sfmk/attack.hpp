#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "sfmk/corrupt.hpp"
#include "sfmk/eval.hpp"
#include "sfmk/train.hpp"

namespace sfmk {

// Iteration schedule min(eps + 4, ceil(1.25 eps)), at least one step.
inline int pgd_iterations(real epsilon) {
  if (epsilon <= 0) return 1;
  const real n = std::min(epsilon + 4, std::ceil(real(1.25) * epsilon));
  return std::max(1, static_cast<int>(std::floor(n + real(1e-9))));
}

// epsilon and step_size are in 1/255 pixel units (8-bit convention).
struct AttackConfig {
  real epsilon = 1;
  real step_size = 1;
  int iterations = 0;  // 0 derives the schedule from epsilon
};

enum class FlipDirection { kHorizontal, kVertical };

using TripletLossFn = std::function<Tensor(const std::vector<Tensor>&)>;

namespace detail {

// Plain data flip of the last two axes' horizontal or vertical direction;
// accepts (H,W) or (C,H,W). No gradient flows through (used for targets).
inline Tensor flip_last2(const Tensor& t, bool horizontal) {
  require(t.rank() == 2 || t.rank() == 3, "flip_last2: rank must be 2 or 3");
  const int64_t c = t.rank() == 3 ? t.dim(0) : 1;
  const int64_t h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
  std::vector<real> out(t.data().size());
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t v = 0; v < h; ++v)
      for (int64_t u = 0; u < w; ++u) {
        const int64_t sv = horizontal ? v : h - 1 - v;
        const int64_t su = horizontal ? w - 1 - u : u;
        out[(ch * h + v) * w + u] = t.data()[(ch * h + sv) * w + su];
      }
  return Tensor::from_data(t.shape(), std::move(out));
}

// Sign-gradient iterations inside the epsilon box around the originals and
// the [0,1] pixel box. Ascent returns the last iterate (classic attack);
// descent returns the best iterate seen so the attack loss never ends
// above its starting value.
inline std::vector<Tensor> pgd_core(const TripletLossFn& loss_fn,
                                    const std::vector<Tensor>& frames,
                                    const AttackConfig& cfg, bool ascend) {
  const real radius = cfg.epsilon / 255;
  const real step = cfg.step_size / 255;
  const int iters =
      cfg.iterations > 0 ? cfg.iterations : pgd_iterations(cfg.epsilon);
  std::vector<std::vector<real>> x;
  for (const Tensor& f : frames) x.push_back(f.data());
  std::vector<std::vector<real>> best = x;
  real best_loss = std::numeric_limits<real>::infinity();

  auto make_leaves = [&] {
    std::vector<Tensor> leaves;
    for (size_t i = 0; i < frames.size(); ++i)
      leaves.push_back(Tensor::from_data(frames[i].shape(), x[i], true));
    return leaves;
  };

  for (int it = 0; it < iters; ++it) {
    std::vector<Tensor> leaves = make_leaves();
    Tensor loss = loss_fn(leaves);
    require(loss.size() == 1, "pgd: loss must be scalar");
    if (!ascend && loss[0] < best_loss) {
      best_loss = loss[0];
      best = x;
    }
    loss.backward();
    for (size_t i = 0; i < frames.size(); ++i) {
      const auto& g = leaves[i].grad();
      const auto& x0 = frames[i].data();
      for (size_t j = 0; j < x[i].size(); ++j) {
        const real s = static_cast<real>((g[j] > 0) - (g[j] < 0));
        real v = x[i][j] + (ascend ? step : -step) * s;
        v = std::clamp(v, x0[j] - radius, x0[j] + radius);
        x[i][j] = std::clamp(v, real(0), real(1));
      }
    }
  }
  if (!ascend) {
    Tensor final_loss = loss_fn(make_leaves());
    if (final_loss[0] < best_loss) best = x;
    x = best;
  }
  std::vector<Tensor> out;
  for (size_t i = 0; i < frames.size(); ++i)
    out.push_back(Tensor::from_data(frames[i].shape(), std::move(x[i])));
  return out;
}

}  // namespace detail

// Maximizes loss_fn over perturbations of `frames` within the epsilon box.
inline std::vector<Tensor> pgd_attack(const TripletLossFn& loss_fn,
                                      const std::vector<Tensor>& frames,
                                      const AttackConfig& cfg) {
  return detail::pgd_core(loss_fn, frames, cfg, true);
}

// Attacks the self-supervision objective end to end: all three frames are
// perturbed and gradients flow through both networks. Networks run in
// evaluation mode so the attack leaves the model untouched.
inline ImageTriplet pgd_attack_triplet(ModelBundle& model,
                                       const ImageTriplet& item,
                                       const LossConfig& lcfg,
                                       const AttackConfig& cfg) {
  TripletLossFn fn = [&](const std::vector<Tensor>& f) {
    ImageTriplet t = item;
    t.prev = f[0];
    t.target = f[1];
    t.next = f[2];
    return triplet_forward(model, t, lcfg, false).loss.total;
  };
  std::vector<Tensor> adv =
      pgd_attack(fn, {item.prev, item.target, item.next}, cfg);
  ImageTriplet out = item;
  out.prev = adv[0];
  out.target = adv[1];
  out.next = adv[2];
  return out;
}

// Pushes the prediction toward a flipped copy of the clean prediction:
// target = flip(model(x0)), loss = RMSE(model(x), target), sign-gradient
// descent under the same schedule.
inline Tensor flip_attack(ModelBundle& model, const Tensor& image,
                          FlipDirection dir, const AttackConfig& cfg) {
  Tensor clean = model.disparities(image, false)[0];
  Tensor target =
      detail::flip_last2(clean, dir == FlipDirection::kHorizontal);
  TripletLossFn fn = [&](const std::vector<Tensor>& f) {
    Tensor disp = model.disparities(f[0], false)[0];
    Tensor diff = sub(disp, target);
    // The tiny floor keeps the square root differentiable at exact zero.
    return sqrt(add(reduce_mean(mul(diff, diff)),
                    Tensor::scalar(real(1e-24))));
  };
  return detail::pgd_core(fn, {image}, cfg, false)[0];
}

// One robustness table row: which condition, its knobs, and the score.
struct SweepRow {
  std::string condition;  // clean | corruption | pgd | flip_h | flip_v
  std::string name;       // corruption or attack kind
  real epsilon = 0;
  int severity = 0;
  real mean_rmse = 0;
  int64_t n_images = 0;
};

struct SweepSuite {
  std::vector<std::string> corruptions;  // evaluated at `severity`
  int severity = 5;
  std::vector<real> pgd_epsilons;
  std::vector<real> flip_h_epsilons;
  std::vector<real> flip_v_epsilons;
  uint64_t seed = 0;
};

// Mean median-scaled RMSE per condition. The clean row shares the exact
// evaluate() code path, corruption rows perturb the evaluated frame, and
// attack rows re-run the model on adversarial inputs.
inline std::vector<SweepRow> robustness_sweep(ModelBundle& model,
                                              const Dataset& ds,
                                              const SweepSuite& suite,
                                              const LossConfig& lcfg = {},
                                              const EvalConfig& ecfg = {},
                                              std::ostream* log = nullptr) {
  std::vector<SweepRow> rows;
  auto eval_with = [&](const std::function<Tensor(const ImageTriplet&,
                                                  int64_t)>& make_target) {
    Dataset mod = ds;
    for (size_t i = 0; i < mod.items.size(); ++i)
      mod.items[i].target =
          make_target(ds.items[i], static_cast<int64_t>(i));
    return evaluate(model, mod, ecfg, lcfg.depth_range).rmse;
  };

  SweepRow clean;
  clean.condition = "clean";
  clean.name = "clean";
  clean.mean_rmse = evaluate(model, ds, ecfg, lcfg.depth_range).rmse;
  clean.n_images = static_cast<int64_t>(ds.items.size());
  rows.push_back(clean);
  if (log) *log << "clean rmse " << clean.mean_rmse << "\n";

  for (const std::string& name : suite.corruptions) {
    SweepRow r;
    r.condition = "corruption";
    r.name = name;
    r.severity = suite.severity;
    r.mean_rmse = eval_with([&](const ImageTriplet& item, int64_t i) {
      return corrupt(item.target, {name, suite.severity},
                     suite.seed + static_cast<uint64_t>(i));
    });
    r.n_images = static_cast<int64_t>(ds.items.size());
    rows.push_back(r);
    if (log) *log << name << " rmse " << r.mean_rmse << "\n";
  }

  for (real eps : suite.pgd_epsilons) {
    SweepRow r;
    r.condition = "pgd";
    r.name = "pgd";
    r.epsilon = eps;
    AttackConfig acfg;
    acfg.epsilon = eps;
    r.mean_rmse = eval_with([&](const ImageTriplet& item, int64_t) {
      return pgd_attack_triplet(model, item, lcfg, acfg).target;
    });
    r.n_images = static_cast<int64_t>(ds.items.size());
    rows.push_back(r);
    if (log) *log << "pgd eps " << eps << " rmse " << r.mean_rmse << "\n";
  }

  for (FlipDirection dir :
       {FlipDirection::kHorizontal, FlipDirection::kVertical})
    for (real eps : dir == FlipDirection::kHorizontal
                        ? suite.flip_h_epsilons
                        : suite.flip_v_epsilons) {
      SweepRow r;
      r.condition = dir == FlipDirection::kHorizontal ? "flip_h" : "flip_v";
      r.name = r.condition;
      r.epsilon = eps;
      AttackConfig acfg;
      acfg.epsilon = eps;
      r.mean_rmse = eval_with([&](const ImageTriplet& item, int64_t) {
        return flip_attack(model, item.target, dir, acfg);
      });
      r.n_images = static_cast<int64_t>(ds.items.size());
      rows.push_back(r);
      if (log)
        *log << r.condition << " eps " << eps << " rmse " << r.mean_rmse
             << "\n";
    }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "condition,name,epsilon,severity,mean_rmse,n_images\n";
  for (const SweepRow& r : rows)
    os << r.condition << ',' << r.name << ',' << r.epsilon << ','
       << r.severity << ',' << std::setprecision(17) << r.mean_rmse << ','
       << r.n_images << "\n";
  return os.str();
}

}  // namespace sfmk
