#include <sstream>

#include <gtest/gtest.h>

#include "dine/checkpoint.hpp"
#include "dine/finetune.hpp"
#include "support.hpp"

namespace dine {
namespace {

std::string bytes(const TargetNet& net) {
  std::ostringstream os;
  save_checkpoint(os, net);
  return os.str();
}

/// The reference scenario's distilled net for seed 2020.
const TargetNet& distilled() {
  static const TargetNet net = [] {
    const std::uint64_t seed = 2020;
    const auto& ref = testing::reference();
    MemoryBank bank = init_teacher(ref.handles, ref.scenario.target_features, ref.cfg.teacher_encoding());
    TargetNet n(ref.cfg.arch(), seed);
    AdaptConfig ac = ref.cfg.adapt;
    ac.seed = seed;
    run_distillation(ac, ref.cfg.optimizer, bank, n, ref.scenario.target_features);
    return n;
  }();
  return net;
}

FinetuneConfig reference_config() {
  FinetuneConfig fc = testing::reference().cfg.finetune;
  fc.seed = 2020;
  return fc;
}

TEST(Finetune, ZeroEpochsLeavesTheNetUnchanged) {
  TargetNet net = distilled();
  FinetuneConfig fc = reference_config();
  fc.epochs = 0;
  const auto res = run_finetune(fc, {}, net, testing::reference().scenario.target_features);
  EXPECT_TRUE(res.epochs.empty());
  EXPECT_EQ(bytes(net), bytes(distilled()));
}

TEST(Finetune, Deterministic) {
  TargetNet a = distilled(), b = distilled();
  FinetuneConfig fc = reference_config();
  fc.epochs = 3;
  const Tensor& x = testing::reference().scenario.target_features;
  run_finetune(fc, {}, a, x);
  run_finetune(fc, {}, b, x);
  EXPECT_EQ(bytes(a), bytes(b));
}

// Near the end the batch entropy sits around 0.02 nats and moves by a few
// thousandths from one epoch to the next, so this checks the trend rather
// than every consecutive pair.
TEST(Finetune, PredictionsSharpen) {
  TargetNet net = distilled();
  const auto res = run_finetune(reference_config(), {}, net, testing::reference().scenario.target_features);
  ASSERT_EQ(res.epochs.size(), 30u);
  const double first = res.epochs.front().mean_entropy;
  for (std::size_t e = 1; e < res.epochs.size(); ++e) EXPECT_LE(res.epochs[e].mean_entropy, first) << e + 1;
  EXPECT_LE(res.epochs.back().mean_entropy, 0.5 * first);
}

TEST(Finetune, NegativeMiDoesNotWorsen) {
  TargetNet net = distilled();
  const auto res = run_finetune(reference_config(), {}, net, testing::reference().scenario.target_features);
  EXPECT_LE(res.epochs.back().loss_total, res.epochs.front().loss_total);
  for (const auto& m : res.epochs) {
    EXPECT_EQ(m.phase, "finetune");
    EXPECT_DOUBLE_EQ(m.loss_total, -m.loss_mi);
    EXPECT_EQ(m.loss_kd, 0.0);
    EXPECT_EQ(m.loss_mix, 0.0);
  }
}

TEST(Finetune, FrozenStatisticsSwitchLeavesRunningStatsAlone) {
  TargetNet net = distilled();
  FinetuneConfig fc = reference_config();
  fc.epochs = 2;
  fc.update_bn_stats = false;
  run_finetune(fc, {}, net, testing::reference().scenario.target_features);
  EXPECT_EQ(net.batch_norm().running_mean, distilled().batch_norm().running_mean);
  EXPECT_EQ(net.batch_norm().running_var, distilled().batch_norm().running_var);
}

TEST(Finetune, NoSeedLosesMoreThanHalfAPointAndTheMeanRises) {
  const auto& rep = testing::reference_run().report;
  double before = 0.0, after = 0.0;
  for (const auto& s : rep.seeds) {
    EXPECT_GE(s.final_accuracy, s.distill_accuracy - 0.5) << s.seed;
    before += s.distill_accuracy;
    after += s.final_accuracy;
  }
  EXPECT_GT(after, before);
}

}  // namespace
}  // namespace dine
