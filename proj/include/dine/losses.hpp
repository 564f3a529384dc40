// Tape-level probability losses. Every log goes through log_clamped, so the
// values match dine::entropy / dine::kl_div evaluated on the same inputs.
#pragma once

#include "dine/autodiff.hpp"

namespace dine::ad {

/// Mean over rows of -sum_k target_k log probs_k. `target` is treated as constant.
inline Var soft_cross_entropy(const Tensor& target, Var probs) {
  target.require_same_shape(probs.value(), "soft_cross_entropy");
  Tape& t = *probs.tape;
  const double n = static_cast<double>(probs.value().rows());
  return scale(sum(mul(t.constant(target), log_clamped(probs))), -1.0 / n);
}

/// Mean over rows of KL(target_row || probs_row). Gradient reaches `probs` only.
inline Var kl_divergence(const Tensor& target, Var probs) {
  target.require_same_shape(probs.value(), "kl_divergence");
  double self_term = 0.0;  // sum target log target, constant w.r.t. probs
  for (double v : target.values())
    if (v > 0.0) self_term += v * clamped_log(v);
  const double n = static_cast<double>(probs.value().rows());
  Var ce = soft_cross_entropy(target, probs);
  Tape& t = *probs.tape;
  return add(ce, t.constant(Tensor({1}, self_term / n)));
}

/// Mean per-row entropy of a batch of probability rows.
inline Var mean_entropy(Var probs) {
  const double n = static_cast<double>(probs.value().rows());
  return scale(sum(mul(probs, log_clamped(probs))), -1.0 / n);
}

/// Entropy of the batch-mean prediction.
inline Var marginal_entropy(Var probs) {
  Var m = mean_rows(probs);
  return scale(sum(mul(m, log_clamped(m))), -1.0);
}

/// Mutual information between inputs and predicted labels over a batch:
/// marginal entropy minus mean conditional entropy.
inline Var mutual_information(Var probs) { return sub(marginal_entropy(probs), mean_entropy(probs)); }

/// Label-smoothed cross-entropy on logits: targets (1-alpha)·onehot + alpha/K.
inline Var label_smoothed_cross_entropy(Var logits, std::span<const std::size_t> labels, double alpha) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "label_smoothed_cross_entropy");
  const std::size_t n = lv.shape()[0], k = lv.shape()[1];
  if (labels.size() != n) throw DimensionError("label count does not match batch size");
  Tensor target({n, k}, alpha / static_cast<double>(k));
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) throw ContractError("label out of range");
    target(i, labels[i]) += 1.0 - alpha;
  }
  return soft_cross_entropy(target, softmax(logits));
}

}  // namespace dine::ad
