// Second phase: maximize batch mutual information alone on the distilled net.
#pragma once

#include <cstdint>
#include <random>

#include "dine/losses.hpp"
#include "dine/optim.hpp"
#include "dine/training.hpp"

namespace dine {

struct FinetuneConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  std::uint64_t seed = 2020;
  /// Keep folding batch statistics into the running statistics while fine-tuning.
  bool update_bn_stats = true;
};

struct FinetuneResult {
  std::vector<EpochMetrics> epochs;
};

/// Descends -MI per batch; the learning-rate schedule restarts at progress 0.
inline FinetuneResult run_finetune(const FinetuneConfig& cfg, const SgdConfig& sgd, TargetNet& net,
                                   const Tensor& target_features, const EpochCallback& on_epoch = {}) {
  if (cfg.batch_size < 2) throw ContractError("batch size must be at least 2");
  std::mt19937_64 rng(cfg.seed);
  Sgd opt(sgd);
  auto params = net.parameters();
  const std::size_t n = target_features.rows();
  const double total_steps = static_cast<double>(cfg.epochs * batches_per_epoch(n, cfg.batch_size));
  const StatsUpdate update = cfg.update_bn_stats ? StatsUpdate::kUpdate : StatsUpdate::kFrozen;
  std::size_t step = 0;
  FinetuneResult result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochMetrics m{"finetune", epoch};
    const auto batches = epoch_batches(n, cfg.batch_size, rng);
    for (const auto& ids : batches) {
      for (Parameter* p : params) p->zero_grad();
      Tape tape;
      Var probs = ad::softmax(net.forward(tape, gather_rows(target_features, ids), Mode::kTrain, update));
      Var mi = ad::mutual_information(probs);
      Var loss = ad::scale(mi, -1.0);
      tape.backward(loss);
      opt.step(params, static_cast<double>(step) / total_steps);
      net.after_update();
      ++step;
      m.loss_total += loss.scalar();
      m.loss_mi += mi.scalar();
      for (std::size_t i = 0; i < probs.value().rows(); ++i)
        m.mean_entropy += entropy(probs.value().row(i)) / static_cast<double>(ids.size());
    }
    const double nb = static_cast<double>(batches.size());
    m.loss_total /= nb;
    m.loss_mi /= nb;
    m.mean_entropy /= nb;
    result.epochs.push_back(m);
    if (on_epoch) on_epoch(m, net);
  }
  return result;
}

}  // namespace dine
