// Source model generation: a SourceNet trained with label-smoothed
// cross-entropy on one labeled source domain.
#pragma once

#include <cstdint>
#include <random>

#include "dine/losses.hpp"
#include "dine/optim.hpp"
#include "dine/scenarios.hpp"

namespace dine {

struct SourceTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double label_smoothing = 0.1;
  std::uint64_t seed = 2020;
  // A source net starts from random weights, so it trains at ten times the
  // target's rates.
  SgdConfig sgd{1e-2, 1e-1, 0.9, 1e-3};
};

/// Trains a fresh SourceNet on `data`. Deterministic for a fixed seed.
inline SourceNet train_source(const SourceTrainConfig& cfg, const ArchDescriptor& arch, const DomainData& data) {
  SourceNet net(arch, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x5eed5eedULL);
  Sgd opt(cfg.sgd);
  auto params = net.parameters();
  const std::size_t n = data.features.rows();
  const double total_steps = static_cast<double>(cfg.epochs * batches_per_epoch(n, cfg.batch_size));
  std::size_t step = 0;
  std::vector<std::size_t> labels;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& ids : epoch_batches(n, cfg.batch_size, rng)) {
      labels.clear();
      for (std::size_t i : ids) labels.push_back(data.labels[i]);
      for (Parameter* p : params) p->zero_grad();
      Tape tape;
      Var loss = ad::label_smoothed_cross_entropy(net.forward(tape, gather_rows(data.features, ids)), labels,
                                                  cfg.label_smoothing);
      tape.backward(loss);
      opt.step(params, static_cast<double>(step++) / total_steps);
    }
  }
  return net;
}

/// Percent accuracy of a source net on labeled data.
inline double source_accuracy(const SourceNet& net, const DomainData& data) {
  return accuracy_from_probs(net.predict_proba(data.features), data.labels).overall;
}

}  // namespace dine
