// Mini-batch SGD with momentum, coupled weight decay, and the annealed
// learning-rate schedule lr0 · (1 + 10p)^-0.75 over training progress p.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dine/autodiff.hpp"

namespace dine {

struct SgdConfig {
  double lr_trunk = 1e-3;
  double lr_new = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-3;
};

/// Annealed rate at training progress p in [0, 1].
inline double scheduled_lr(double lr0, double progress) {
  return lr0 * std::pow(1.0 + 10.0 * progress, -0.75);
}

class Sgd {
 public:
  explicit Sgd(SgdConfig cfg = {}) : cfg_(cfg) {}

  const SgdConfig& config() const { return cfg_; }

  double lr(ParamGroup group, double progress) const {
    return scheduled_lr(group == ParamGroup::kTrunk ? cfg_.lr_trunk : cfg_.lr_new, progress);
  }

  /// v ← μ·v + g + wd·θ ; θ ← θ − lr(p)·v, using each parameter's stored grad.
  /// The parameter list must be the same, in the same order, on every call.
  void step(std::span<Parameter* const> params, double progress) {
    if (velocity_.empty()) {
      for (Parameter* p : params) velocity_.emplace_back(p->value.shape());
    }
    if (velocity_.size() != params.size()) throw ContractError("sgd: parameter list changed between steps");
    progress = std::clamp(progress, 0.0, 1.0);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      Tensor& v = velocity_[k];
      p.grad.require_same_shape(p.value, "sgd_step");
      v.require_same_shape(p.value, "sgd_step");
      const double rate = lr(p.group, progress);
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = cfg_.momentum * v[i] + p.grad[i] + cfg_.weight_decay * p.value[i];
        p.value[i] -= rate * v[i];
      }
    }
  }

  const std::vector<Tensor>& velocity() const { return velocity_; }

 private:
  SgdConfig cfg_;
  std::vector<Tensor> velocity_;
};

}  // namespace dine
