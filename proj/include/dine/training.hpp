// Pieces shared by the training loops: mini-batch schedules, per-epoch
// metrics, and full-set eval-mode prediction.
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dine/nn.hpp"

namespace dine {

/// Shuffled mini-batches covering 0..n-1. A trailing batch smaller than two
/// samples is dropped (batch statistics and mixup need a pair).
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                           std::mt19937_64& rng) {
  if (batch_size == 0) throw ContractError("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

inline std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
  const std::size_t full = n / batch_size;
  return full + (n % batch_size >= 2 ? 1 : 0);
}

/// Epoch-mean loss terms of one training phase.
struct EpochMetrics {
  std::string phase;  // "distill" or "finetune"
  std::size_t epoch = 0;
  double loss_total = 0.0;
  double loss_kd = 0.0;
  double loss_mix = 0.0;
  double loss_mi = 0.0;       // the mutual information value (maximized)
  double mean_entropy = 0.0;  // mean per-sample prediction entropy over the epoch's batches
};

using EpochCallback = std::function<void(const EpochMetrics&, const TargetNet&)>;

/// Eval-mode class probabilities for every row, in row order.
inline Tensor predict_all(const TargetNet& net, const Tensor& features, std::size_t chunk = 256) {
  const std::size_t n = features.rows(), k = net.num_classes();
  Tensor out({n, k});
  std::vector<std::size_t> ids;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    ids.resize(end - start);
    std::iota(ids.begin(), ids.end(), start);
    const Tensor p = net.predict_proba(gather_rows(features, ids));
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(start * k));
  }
  return out;
}

}  // namespace dine
