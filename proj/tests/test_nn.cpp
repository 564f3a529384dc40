#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "dine/checkpoint.hpp"
#include "dine/losses.hpp"
#include "dine/optim.hpp"
#include "support.hpp"

namespace dine {
namespace {

ArchDescriptor arch(std::size_t k = 3) {
  ArchDescriptor a;
  a.hidden = {16, 16};
  a.bottleneck = 8;
  a.num_classes = k;
  return a;
}

double row_norm(std::span<const double> r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return std::sqrt(s);
}

TEST(TargetNet, OutputShapeAndWidthCheck) {
  const TargetNet net(arch(4), 1);
  std::mt19937_64 rng(1);
  EXPECT_EQ(net.logits(testing::random_matrix(5, 2, rng)).shape(), (Shape{5, 4}));
  EXPECT_THROW(net.logits(testing::random_matrix(5, 3, rng)), DimensionError);
}

TEST(TargetNet, SameSeedSameWeights) {
  std::mt19937_64 rng(2);
  const Tensor x = testing::random_matrix(4, 2, rng);
  EXPECT_EQ(TargetNet(arch(), 9).logits(x), TargetNet(arch(), 9).logits(x));
  EXPECT_NE(TargetNet(arch(), 9).logits(x), TargetNet(arch(), 10).logits(x));
}

TEST(WeightNorm, DirectionsStartAtUnitNorm) {
  const TargetNet net(arch(), 3);
  const Tensor& v = net.classifier().direction.value;
  for (std::size_t r = 0; r < v.rows(); ++r) EXPECT_NEAR(row_norm(v.row(r)), 1.0, 1e-9);
}

TEST(WeightNorm, RescalingDirectionLeavesOutputUnchanged) {
  TargetNet net(arch(), 4);
  std::mt19937_64 rng(4);
  const Tensor x = testing::random_matrix(6, 2, rng);
  const Tensor before = net.logits(x);
  net.classifier().direction.value *= 7.5;
  const Tensor scaled = net.logits(x);
  net.after_update();
  const Tensor after = net.logits(x);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_NEAR(scaled[i], before[i], 1e-12);
    EXPECT_NEAR(after[i], before[i], 1e-12);
  }
}

TEST(WeightNorm, UnitNormHoldsAfterTrainingSteps) {
  TargetNet net(arch(), 5);
  std::mt19937_64 rng(5);
  Sgd opt(SgdConfig{0.1, 0.5, 0.9, 1e-3});
  auto params = net.parameters();
  for (int step = 0; step < 20; ++step) {
    const Tensor x = testing::random_matrix(16, 2, rng);
    for (Parameter* p : params) p->zero_grad();
    Tape t;
    t.backward(ad::scale(ad::mutual_information(ad::softmax(net.forward(t, x, Mode::kTrain))), -1.0));
    opt.step(params, step / 20.0);
    net.after_update();
  }
  const Tensor& v = net.classifier().direction.value;
  for (std::size_t r = 0; r < v.rows(); ++r) EXPECT_NEAR(row_norm(v.row(r)), 1.0, 1e-9);
}

TEST(BatchNorm, TrainForwardFoldsBatchStatisticsIntoRunningStats) {
  TargetNet net(arch(), 6);
  std::mt19937_64 rng(6);
  const Tensor x = testing::random_matrix(10, 2, rng);
  // Features entering the normalization, recomputed from the trunk weights.
  auto params = net.parameters();
  Tensor h = x;
  for (std::size_t l = 0; l < 2; ++l) {
    const Tensor& w = params[2 * l]->value;
    const Tensor& b = params[2 * l + 1]->value;
    Tensor next({h.rows(), w.rows()});
    for (std::size_t i = 0; i < h.rows(); ++i)
      for (std::size_t o = 0; o < w.rows(); ++o) {
        double s = b[o];
        for (std::size_t j = 0; j < w.cols(); ++j) s += w(o, j) * h(i, j);
        next(i, o) = std::max(0.0, s);
      }
    h = next;
  }
  {
    Tape t(false);
    net.forward(t, x, Mode::kTrain);
  }
  const double m = nn::BatchNorm::kMomentum;
  const auto& bn = net.batch_norm();
  for (std::size_t j = 0; j < h.cols(); ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < h.rows(); ++i) mean += h(i, j) / 10.0;
    for (std::size_t i = 0; i < h.rows(); ++i) var += (h(i, j) - mean) * (h(i, j) - mean) / 9.0;
    EXPECT_NEAR(bn.running_mean[j], m * mean, 1e-12);
    EXPECT_NEAR(bn.running_var[j], (1.0 - m) + m * var, 1e-12);
  }
}

TEST(BatchNorm, FrozenAndEvalForwardsLeaveStatsAlone) {
  TargetNet net(arch(), 7);
  std::mt19937_64 rng(7);
  const Tensor x = testing::random_matrix(10, 2, rng);
  const auto mean0 = net.batch_norm().running_mean, var0 = net.batch_norm().running_var;
  {
    Tape t(false);
    net.forward(t, x, Mode::kTrain, StatsUpdate::kFrozen);
    net.forward(t, x, Mode::kEval);
  }
  net.logits(x);
  EXPECT_EQ(net.batch_norm().running_mean, mean0);
  EXPECT_EQ(net.batch_norm().running_var, var0);
}

TEST(BatchNorm, EvalOutputDoesNotDependOnBatchComposition) {
  const TargetNet net(arch(), 8);
  std::mt19937_64 rng(8);
  const Tensor x = testing::random_matrix(6, 2, rng);
  const Tensor all = net.logits(x);
  const std::size_t first[] = {0};
  const Tensor one = net.logits(gather_rows(x, first));
  for (std::size_t c = 0; c < one.cols(); ++c) EXPECT_DOUBLE_EQ(one(0, c), all(0, c));
}

TEST(EvalForward, RecordsNothingOnTheTape) {
  const TargetNet net(arch(), 9);
  std::mt19937_64 rng(9);
  Tape t(false);
  const Tensor x = testing::random_matrix(3, 2, rng);
  net.logits(x);
  EXPECT_FALSE(t.recording());
}

template <class Net>
void expect_same_parameters(const Net& a, const Net& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    EXPECT_EQ(pa[i]->group, pb[i]->group);
  }
}

TEST(Checkpoint, TargetRoundTripIsBitExact) {
  TargetNet net(arch(), 10);
  std::mt19937_64 rng(10);
  {
    Tape t(false);
    net.forward(t, testing::random_matrix(12, 2, rng), Mode::kTrain);
  }
  std::stringstream ss;
  save_checkpoint(ss, net);
  const TargetNet back = load_checkpoint<TargetNet>(ss);
  expect_same_parameters(net, back);
  EXPECT_EQ(back.batch_norm().running_mean, net.batch_norm().running_mean);
  EXPECT_EQ(back.batch_norm().running_var, net.batch_norm().running_var);
  EXPECT_EQ(back.arch().hidden, net.arch().hidden);
  const Tensor x = testing::random_matrix(7, 2, rng);
  EXPECT_EQ(back.logits(x), net.logits(x));
}

TEST(Checkpoint, SourceRoundTripIsBitExact) {
  const SourceNet net(arch(2), 11);
  std::stringstream ss;
  save_checkpoint(ss, net);
  const SourceNet back = load_checkpoint<SourceNet>(ss);
  expect_same_parameters(net, back);
}

TEST(Checkpoint, SavingTwiceGivesIdenticalBytes) {
  const TargetNet net(arch(), 12);
  std::stringstream a, b;
  save_checkpoint(a, net);
  save_checkpoint(b, net);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Checkpoint, WrongKindIsRejected) {
  const SourceNet net(arch(), 13);
  std::stringstream ss;
  save_checkpoint(ss, net);
  EXPECT_THROW(load_checkpoint<TargetNet>(ss), FormatError);
}

TEST(Checkpoint, TruncatedOrGarbageIsFormatError) {
  const TargetNet net(arch(), 14);
  std::stringstream ss;
  save_checkpoint(ss, net);
  const std::string text = ss.str();
  std::stringstream cut(text.substr(0, text.size() / 2));
  EXPECT_THROW(load_checkpoint<TargetNet>(cut), FormatError);
  std::stringstream junk("not a checkpoint\n");
  EXPECT_THROW(load_checkpoint<TargetNet>(junk), FormatError);
}

TEST(Checkpoint, MissingFileIsFormatError) {
  EXPECT_THROW(load_checkpoint<TargetNet>("/nonexistent/dir/x.ckpt"), FormatError);
}

}  // namespace
}  // namespace dine
