#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "dine/tensor.hpp"
#include "support.hpp"

namespace dine {
namespace {

TEST(Tensor, RejectsZeroDimensions) {
  EXPECT_THROW(Tensor({0, 3}), DimensionError);
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
}

TEST(Tensor, ShapeMustMatchData) { EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError); }

TEST(Tensor, RowAndElementAccess) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6.0);
  EXPECT_EQ(m.row(1)[0], 4.0);
}

TEST(Matmul, SmallOracle) {
  const Tensor c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5}, {6}}));
  EXPECT_EQ(c, Tensor::matrix({{17}, {39}}));
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{1, 2}})), DimensionError);
}

TEST(Matmul, IdentityIsNeutral) {
  std::mt19937_64 rng(3);
  const Tensor a = testing::random_matrix(4, 3, rng);
  EXPECT_EQ(matmul(a, Tensor::identity(3)), a);
  EXPECT_EQ(matmul(Tensor::identity(4), a), a);
}

TEST(Matmul, TransposeIdentity) {
  std::mt19937_64 rng(5);
  const Tensor a = testing::random_matrix(3, 4, rng), b = testing::random_matrix(4, 2, rng);
  const Tensor lhs = transpose(matmul(a, b)), rhs = matmul(transpose(b), transpose(a));
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
}

TEST(Softmax, Oracle) {
  const Tensor p = softmax(Tensor::matrix({{1, 2, 3}}));
  EXPECT_NEAR(p(0, 0), 0.09003, 1e-5);
  EXPECT_NEAR(p(0, 1), 0.24473, 1e-5);
  EXPECT_NEAR(p(0, 2), 0.66524, 1e-5);
}

TEST(Softmax, ShiftInvariantAndStableForHugeLogits) {
  const Tensor a = softmax(Tensor::matrix({{1, 2, 3}}));
  const Tensor b = softmax(Tensor::matrix({{1001, 1002, 1003}}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  EXPECT_TRUE(b.all_finite());
}

TEST(Softmax, RowsAreProbabilityVectors) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = softmax(testing::random_matrix(5, 7, rng, 10.0));
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double total = 0.0;
      for (double v : p.row(r)) {
        EXPECT_GE(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Entropy, Oracle) {
  EXPECT_NEAR(entropy(std::vector<double>{0.7, 0.2, 0.1}), 0.80182, 1e-5);
  EXPECT_NEAR(entropy(std::vector<double>{0.5, 0.5}), std::log(2.0), 1e-12);
  EXPECT_EQ(entropy(std::vector<double>{1.0, 0.0}), 0.0);
}

TEST(Entropy, RejectsNonProbability) {
  EXPECT_THROW(entropy(std::vector<double>{0.5, 0.6}), ContractError);
  EXPECT_THROW(entropy(std::vector<double>{1.2, -0.2}), ContractError);
}

TEST(Entropy, BoundedByLogK) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = testing::dirichlet(6, rng, 0.5);
    const double h = entropy(p);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(6.0) + 1e-12);
  }
}

TEST(KlDiv, Oracle) {
  EXPECT_NEAR(kl_div(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5}), std::log(2.0), 1e-12);
  EXPECT_EQ(kl_div(std::vector<double>{0.3, 0.7}, std::vector<double>{0.3, 0.7}), 0.0);
}

TEST(KlDiv, ZeroInSecondArgumentIsClampedNotInfinite) {
  const double d = kl_div(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0});
  EXPECT_TRUE(std::isfinite(d));
  EXPECT_NEAR(d, 0.5 * std::log(0.5) - 0.5 * std::log(1e-8) + 0.5 * std::log(0.5), 1e-9);
}

TEST(KlDiv, LengthMismatchThrows) {
  EXPECT_THROW(kl_div(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}), DimensionError);
}

TEST(KlDiv, NonNegativeOnRandomPairs) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = testing::dirichlet(5, rng), q = testing::dirichlet(5, rng);
    EXPECT_GE(kl_div(p, q), -1e-12);
  }
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax(std::vector<double>{0.2, 0.4, 0.4}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{0.5, 0.5}), 0u);
}

TEST(GatherRows, OutOfRangeThrows) {
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  const std::size_t ok[] = {1, 0}, bad[] = {2};
  EXPECT_EQ(gather_rows(m, ok), Tensor::matrix({{3, 4}, {1, 2}}));
  EXPECT_THROW(gather_rows(m, bad), LookupError);
}

TEST(ColumnMean, Oracle) {
  const auto m = column_mean(Tensor::matrix({{1, 2}, {3, 6}}));
  EXPECT_EQ(m, (std::vector<double>{2, 4}));
}

TEST(Finite, DetectsNaN) {
  Tensor t = Tensor::vector({1.0, std::numeric_limits<double>::quiet_NaN()});
  EXPECT_FALSE(t.all_finite());
}

}  // namespace
}  // namespace dine
