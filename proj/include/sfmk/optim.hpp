#pragma once

#include <cmath>
#include <vector>

#include "sfmk/tensor.hpp"

namespace sfmk {

struct OptimConfig {
  real lr = real(1e-4);
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real eps = real(1e-8);
  real weight_decay = real(0);
  bool decoupled = false;  // true = AdamW-style decay applied to the weights
};

// Adam with bias correction; decoupled mode multiplies parameters by
// (1 - lr*wd) before the moment update (AdamW), coupled mode adds wd*theta
// to the gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, OptimConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].data().size(), real(0));
      v_[i].assign(params_[i].data().size(), real(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const real bc1 = 1 - std::pow(cfg_.beta1, static_cast<real>(t_));
    const real bc2 = 1 - std::pow(cfg_.beta2, static_cast<real>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& x = params_[i].data();
      const real* g = params_[i].has_grad() ? params_[i].grad().data()
                                            : nullptr;
      for (size_t j = 0; j < x.size(); ++j) {
        real gj = g ? g[j] : real(0);
        if (cfg_.weight_decay != real(0)) {
          if (cfg_.decoupled)
            x[j] *= 1 - cfg_.lr * cfg_.weight_decay;
          else
            gj += cfg_.weight_decay * x[j];
        }
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1 - cfg_.beta1) * gj;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1 - cfg_.beta2) * gj * gj;
        const real mhat = m_[i][j] / bc1;
        const real vhat = v_[i][j] / bc2;
        x[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  real& lr() { return cfg_.lr; }
  int64_t steps() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  OptimConfig cfg_;
  std::vector<std::vector<real>> m_, v_;
  int64_t t_ = 0;
};

inline Adam make_adamw(std::vector<Tensor> params, real lr,
                       real weight_decay = real(0.01)) {
  OptimConfig cfg;
  cfg.lr = lr;
  cfg.weight_decay = weight_decay;
  cfg.decoupled = true;
  return Adam(std::move(params), cfg);
}

// Step schedule: the base rate for the first three quarters of training, then
// a tenth of it (epoch 15 of 20 starts the low-rate plateau).
inline real lr_schedule(real lr0, int64_t epoch, int64_t total_epochs) {
  require(total_epochs > 0, "lr_schedule: total_epochs must be positive");
  const int64_t drop = (3 * total_epochs) / 4;
  return epoch >= drop ? lr0 / 10 : lr0;
}

}  // namespace sfmk
