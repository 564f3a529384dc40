// Adaptive self-distillation with structural regularization.
//
// Per mini-batch the student minimizes
//     KL(teacher || student) + beta · L_mix - L_mi
// where the teacher is the memory bank row of each sample, L_mix is the
// interpolation-consistency cross-entropy between the student at a mixed
// input and the mix of its own (stop-gradient) predictions, and L_mi is the
// batch mutual information. After every epoch the bank moves towards the
// student's eval-mode predictions by an exponential moving average.
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "dine/losses.hpp"
#include "dine/memory_bank.hpp"
#include "dine/optim.hpp"
#include "dine/training.hpp"

namespace dine {

struct AdaptConfig {
  double beta = 1.0;          // mixup loss weight
  double gamma = 0.6;         // EMA momentum of the memory bank
  double mixup_alpha = 0.3;   // Beta(alpha, alpha) for the mixing coefficient
  std::size_t r = 1;          // AdaLS truncation used to build the teacher
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  std::uint64_t seed = 2020;
  bool drop_mi = false;
  bool drop_mix = false;

  void validate(std::size_t num_classes) const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ContractError("gamma must lie in [0, 1]");
    if (!(beta >= 0.0)) throw ContractError("beta must be nonnegative");
    if (!(mixup_alpha > 0.0)) throw ContractError("mixup_alpha must be positive");
    if (r < 1 || r > num_classes) throw ContractError("r must lie in [1, K]");
    if (batch_size < 2) throw ContractError("batch size must be at least 2");
  }
};

// ---------------------------------------------------------------------------
// Loss terms

/// Mean KL(bank_row || student_row) over the batch; gradient reaches the student only.
inline Var distill_loss(const Tensor& bank_rows, Var student_probs) {
  return ad::kl_divergence(bank_rows, student_probs);
}

/// Mutual information of a batch of predictions (to be maximized).
inline Var mi_loss(Var student_probs) { return ad::mutual_information(student_probs); }

/// One draw of the mixup coefficient and the partner permutation.
struct MixupDraw {
  double lambda = 1.0;
  std::vector<std::size_t> partner;
};

inline double sample_beta(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  const double a = g(rng), b = g(rng);
  return a + b > 0.0 ? a / (a + b) : 0.5;
}

/// lambda ~ Beta(alpha, alpha), one per batch; partner is a uniform
/// permutation of the batch (fixed points allowed).
inline MixupDraw draw_mixup(std::size_t n, double alpha, std::mt19937_64& rng) {
  MixupDraw d;
  d.lambda = sample_beta(alpha, rng);
  d.partner.resize(n);
  std::iota(d.partner.begin(), d.partner.end(), std::size_t{0});
  std::shuffle(d.partner.begin(), d.partner.end(), rng);
  return d;
}

/// lambda · a + (1 - lambda) · a[partner]
inline Tensor mix_rows(const Tensor& a, const MixupDraw& d) {
  if (d.partner.size() != a.rows()) throw DimensionError("mixup partner count does not match batch");
  Tensor out = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      out(i, j) = d.lambda * a(i, j) + (1.0 - d.lambda) * a(d.partner[i], j);
  return out;
}

/// Interpolation-consistency loss given the batch's own (constant) predictions.
/// The mixed forward pass uses batch statistics in train mode without
/// touching the running statistics.
inline Var mixup_loss(Tape& t, TargetNet& net, const Tensor& batch, const Tensor& clean_probs, const MixupDraw& d,
                      Mode mode = Mode::kTrain) {
  if (batch.rows() < 2) throw ContractError("mixup needs at least two samples");
  const Tensor target = mix_rows(clean_probs, d);
  Var pred = ad::softmax(net.forward(t, mix_rows(batch, d), mode, StatsUpdate::kFrozen));
  return ad::soft_cross_entropy(target, pred);
}

/// Self-contained form: computes the stop-gradient predictions f'(x) itself.
inline Var mixup_loss(Tape& t, TargetNet& net, const Tensor& batch, const MixupDraw& d, Mode mode = Mode::kTrain) {
  if (batch.rows() < 2) throw ContractError("mixup needs at least two samples");
  Tape side(false);
  const Tensor clean = softmax(net.forward(side, batch, mode, StatsUpdate::kFrozen).value());
  return mixup_loss(t, net, batch, clean, d, mode);
}

inline Var mixup_loss(Tape& t, TargetNet& net, const Tensor& batch, std::mt19937_64& rng, double alpha = 0.3,
                      Mode mode = Mode::kTrain) {
  if (batch.rows() < 2) throw ContractError("mixup needs at least two samples");
  return mixup_loss(t, net, batch, draw_mixup(batch.rows(), alpha, rng), mode);
}

struct LossTerms {
  Var total;
  Var probs;  // student predictions on the clean batch
  double kd = 0.0;
  double mix = 0.0;
  double mi = 0.0;
};

/// KL + beta · mixup - MI on one batch, all on tape `t`. `draw` is consumed
/// only when the mixup term is active.
inline LossTerms total_loss(Tape& t, const AdaptConfig& cfg, const Tensor& bank_rows, TargetNet& net,
                            const Tensor& batch, const MixupDraw* draw, StatsUpdate update = StatsUpdate::kUpdate) {
  LossTerms terms;
  terms.probs = ad::softmax(net.forward(t, batch, Mode::kTrain, update));
  Var total = distill_loss(bank_rows, terms.probs);
  terms.kd = total.scalar();
  if (!cfg.drop_mix && cfg.beta > 0.0) {
    if (!draw) throw ContractError("total_loss: mixup draw required");
    Var mix = mixup_loss(t, net, batch, terms.probs.value(), *draw);
    terms.mix = mix.scalar();
    total = ad::add(total, ad::scale(mix, cfg.beta));
  }
  if (!cfg.drop_mi) {
    Var mi = mi_loss(terms.probs);
    terms.mi = mi.scalar();
    total = ad::sub(total, mi);
  }
  terms.total = total;
  return terms;
}

// ---------------------------------------------------------------------------
// Memory bank update

/// row ← gamma · row + (1 - gamma) · fresh for every sample.
inline void ema_update(MemoryBank& bank, const Tensor& fresh, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ContractError("gamma must lie in [0, 1]");
  if (fresh.shape() != bank.rows().shape())
    throw ContractError("ema_update: fresh predictions must cover every bank row");
  Tensor rows = bank.rows();
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = gamma * rows[i] + (1.0 - gamma) * fresh[i];
  bank.replace(std::move(rows));
}

// ---------------------------------------------------------------------------
// Training loop

struct DistillResult {
  std::vector<EpochMetrics> epochs;
};

/// Runs `cfg.epochs` epochs of distillation on unlabeled target features.
/// Deterministic for a fixed cfg.seed.
inline DistillResult run_distillation(const AdaptConfig& cfg, const SgdConfig& sgd, MemoryBank& bank, TargetNet& net,
                                      const Tensor& target_features, const EpochCallback& on_epoch = {}) {
  cfg.validate(net.num_classes());
  if (bank.size() != target_features.rows()) throw ContractError("memory bank does not match the target set");
  if (bank.num_classes() != net.num_classes()) throw ContractError("memory bank class count does not match net");
  std::mt19937_64 rng(cfg.seed);
  Sgd opt(sgd);
  auto params = net.parameters();
  const std::size_t n = target_features.rows();
  const double total_steps = static_cast<double>(cfg.epochs * batches_per_epoch(n, cfg.batch_size));
  std::size_t step = 0;
  DistillResult result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochMetrics m{"distill", epoch};
    const auto batches = epoch_batches(n, cfg.batch_size, rng);
    for (const auto& ids : batches) {
      const Tensor x = gather_rows(target_features, ids);
      const Tensor teacher = bank.gather(ids);
      std::optional<MixupDraw> draw;
      if (!cfg.drop_mix && cfg.beta > 0.0) draw = draw_mixup(ids.size(), cfg.mixup_alpha, rng);
      for (Parameter* p : params) p->zero_grad();
      Tape tape;
      const LossTerms terms = total_loss(tape, cfg, teacher, net, x, draw ? &*draw : nullptr);
      tape.backward(terms.total);
      opt.step(params, static_cast<double>(step) / total_steps);
      net.after_update();
      ++step;
      m.loss_total += terms.total.scalar();
      m.loss_kd += terms.kd;
      m.loss_mix += terms.mix;
      m.loss_mi += terms.mi;
      for (std::size_t i = 0; i < ids.size(); ++i)
        m.mean_entropy += entropy(terms.probs.value().row(i)) / static_cast<double>(ids.size());
    }
    const double nb = static_cast<double>(batches.size());
    m.loss_total /= nb;
    m.loss_kd /= nb;
    m.loss_mix /= nb;
    m.loss_mi /= nb;
    m.mean_entropy /= nb;
    ema_update(bank, predict_all(net, target_features), cfg.gamma);
    result.epochs.push_back(m);
    if (on_epoch) on_epoch(m, net);
  }
  return result;
}

}  // namespace dine
