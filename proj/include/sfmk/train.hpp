#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sfmk/config.hpp"
#include "sfmk/dataset.hpp"
#include "sfmk/losses.hpp"
#include "sfmk/nets.hpp"
#include "sfmk/optim.hpp"

namespace sfmk {

struct TrainConfig {
  LossConfig loss;
  real lr = real(1e-4);
  real weight_decay = real(1e-2);
  int epochs = 20;
  uint64_t seed = 42;
};

// Forward pass over one triplet. The ego net sees chronologically ordered
// pairs: (I-1, I0) with its output read as the transform target->prev, and
// (I0, I1) read as target->next. With learned intrinsics the two pairwise
// predictions are averaged into the one K the warp uses.
struct StepOutcome {
  TotalLoss loss;
  Tensor k_used;
  Tensor pose_to_prev, pose_to_next;
};

inline StepOutcome triplet_forward(ModelBundle& model,
                                   const ImageTriplet& item,
                                   const LossConfig& lcfg,
                                   bool training = true) {
  std::vector<Tensor> disps = model.disparities(item.target, training);
  PoseResult back = model.pose_between(item.prev, item.target, training);
  PoseResult fwd = model.pose_between(item.target, item.next, training);
  Tensor k;
  if (model.learn_intrinsics) {
    require(back.intrinsics && fwd.intrinsics,
            "triplet_forward: model did not predict intrinsics");
    k = mul(add(*back.intrinsics, *fwd.intrinsics), real(0.5));
  } else {
    k = item.intrinsics;
  }
  StepOutcome out;
  out.loss = total_loss(disps, item.target, {item.prev, item.next}, k,
                        {back.pose, fwd.pose}, lcfg);
  out.k_used = k;
  out.pose_to_prev = back.pose;
  out.pose_to_next = fwd.pose;
  return out;
}

// One optimization step on one triplet; returns the scalar loss. A
// non-finite loss aborts (the optimizer state would be poisoned past it).
inline real train_step(ModelBundle& model, const ImageTriplet& item,
                       Adam& opt, const LossConfig& lcfg) {
  StepOutcome out = triplet_forward(model, item, lcfg, true);
  const real value = out.loss.total[0];
  if (!std::isfinite(value))
    throw NumericError("training loss is not finite at step " +
                       std::to_string(opt.steps()));
  opt.zero_grad();
  out.loss.total.backward();
  opt.step();
  return value;
}

// Repeated steps on a frozen single triplet; the basic overfit probe.
inline std::vector<real> train_steps(ModelBundle& model,
                                     const ImageTriplet& item, Adam& opt,
                                     const LossConfig& lcfg, int n) {
  std::vector<real> losses;
  losses.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    losses.push_back(train_step(model, item, opt, lcfg));
  return losses;
}

// One pass over the dataset in a seeded shuffle order; returns mean loss.
inline real train_epoch(ModelBundle& model, const Dataset& ds, Adam& opt,
                        const LossConfig& lcfg, Rng& rng) {
  require(!ds.items.empty(), "train_epoch: empty dataset");
  std::vector<size_t> order(ds.items.size());
  std::iota(order.begin(), order.end(), size_t(0));
  for (size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i],
              order[static_cast<size_t>(rng.index(static_cast<int64_t>(i) + 1))]);
  real sum = 0;
  for (size_t idx : order) sum += train_step(model, ds.items[idx], opt, lcfg);
  return sum / static_cast<real>(ds.items.size());
}

struct TrainResult {
  std::vector<real> epoch_losses;
  std::vector<real> epoch_lrs;
};

inline Config training_snapshot(const ModelBundle& model,
                                const TrainConfig& cfg) {
  Config c;
  c.set("depth_arch", arch_name(model.depth_arch));
  c.set("ego_arch", arch_name(model.ego_arch));
  c.set("learn_intrinsics", model.learn_intrinsics ? "true" : "false");
  c.set("height", std::to_string(model.cfg.height));
  c.set("width", std::to_string(model.cfg.width));
  std::ostringstream lr;
  lr << std::setprecision(17) << cfg.lr;
  c.set("lr", lr.str());
  std::ostringstream wd;
  wd << std::setprecision(17) << cfg.weight_decay;
  c.set("weight_decay", wd.str());
  c.set("epochs", std::to_string(cfg.epochs));
  c.set("seed", std::to_string(cfg.seed));
  std::ostringstream alpha, lambda, dmin, dmax;
  alpha << std::setprecision(17) << cfg.loss.alpha;
  lambda << std::setprecision(17) << cfg.loss.smoothness_lambda;
  dmin << std::setprecision(17) << cfg.loss.depth_range.d_min;
  dmax << std::setprecision(17) << cfg.loss.depth_range.d_max;
  c.set("loss_alpha", alpha.str());
  c.set("smoothness_lambda", lambda.str());
  c.set("depth_min", dmin.str());
  c.set("depth_max", dmax.str());
  return c;
}

// Full run: AdamW, the 3/4-point learning-rate drop, seeded shuffling.
// When out_dir is set, writes a config snapshot, a per-epoch CSV
// (epoch, mean_loss, lr), and a checkpoint per epoch plus final.
inline TrainResult run_training(ModelBundle& model, const Dataset& ds,
                                const TrainConfig& cfg,
                                const std::string& out_dir = "",
                                std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  Adam opt = make_adamw(model.trainable(), cfg.lr, cfg.weight_decay);
  Rng rng(cfg.seed);
  if (!out_dir.empty()) {
    fs::create_directories(fs::path(out_dir) / "checkpoints");
    training_snapshot(model, cfg).save(
        (fs::path(out_dir) / "config.txt").string());
  }
  TrainResult res;
  std::ostringstream csv;
  csv << "epoch,mean_loss,lr\n";
  for (int e = 0; e < cfg.epochs; ++e) {
    opt.lr() = lr_schedule(cfg.lr, e, cfg.epochs);
    const real mean = train_epoch(model, ds, opt, cfg.loss, rng);
    res.epoch_losses.push_back(mean);
    res.epoch_lrs.push_back(opt.lr());
    csv << e << ',' << std::setprecision(17) << mean << ','
        << std::setprecision(17) << opt.lr() << "\n";
    if (log)
      *log << "epoch " << e << " mean_loss " << mean << " lr " << opt.lr()
           << "\n";
    if (!out_dir.empty()) {
      std::ostringstream name;
      name << "epoch_" << std::setfill('0') << std::setw(3) << e << ".sfmk";
      save_checkpoint(model,
                      (fs::path(out_dir) / "checkpoints" / name.str())
                          .string());
      std::ofstream mcsv(fs::path(out_dir) / "metrics.csv");
      mcsv << csv.str();
    }
  }
  if (!out_dir.empty())
    save_checkpoint(model,
                    (fs::path(out_dir) / "checkpoints" / "final.sfmk")
                        .string());
  return res;
}

}  // namespace sfmk
