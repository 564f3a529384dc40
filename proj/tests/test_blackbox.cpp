#include <memory>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "dine/cache.hpp"
#include "dine/distill.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace dine {
namespace {

using oracle::Vec;

std::vector<double> full(std::initializer_list<double> v) { return v; }

TEST(Disclose, TopOneKeepsOnlyTheLargest) {
  const auto out = disclose(full({0.7, 0.2, 0.1}), {DisclosureMode::kTopR, 1});
  ASSERT_EQ(out.entries.size(), 1u);
  EXPECT_EQ(out.entries[0].label, 0u);
  EXPECT_DOUBLE_EQ(out.entries[0].prob, 0.7);
  EXPECT_EQ(out.num_classes, 3u);
}

TEST(Disclose, HardCarriesLabelOnly) {
  const auto out = disclose(full({0.1, 0.3, 0.6}), {DisclosureMode::kHard, 1});
  ASSERT_EQ(out.entries.size(), 1u);
  EXPECT_EQ(out.top_label(), 2u);
  EXPECT_EQ(out.entries[0].prob, 1.0);
}

TEST(Disclose, FullIsRankedAndComplete) {
  const auto out = disclose(full({0.1, 0.3, 0.6}), {DisclosureMode::kFull, 0});
  ASSERT_EQ(out.entries.size(), 3u);
  EXPECT_EQ(out.entries[0].label, 2u);
  EXPECT_EQ(out.entries[2].label, 0u);
}

TEST(Disclose, TopRBeyondKIsContractError) {
  EXPECT_THROW(disclose(full({0.5, 0.5}), {DisclosureMode::kTopR, 3}), ContractError);
  EXPECT_THROW(disclose(full({0.5, 0.5}), {DisclosureMode::kTopR, 0}), ContractError);
}

TEST(AdaLS, WorkedExample) {
  const auto s = ada_ls(full({0.7, 0.2, 0.1}), 1).probs;
  EXPECT_NEAR(s[0], 0.7, 1e-15);
  EXPECT_NEAR(s[1], 0.15, 1e-15);
  EXPECT_NEAR(s[2], 0.15, 1e-15);
}

TEST(AdaLS, RequiresOneToK) {
  EXPECT_THROW(ada_ls(full({0.5, 0.5}), 0), ContractError);
  EXPECT_THROW(ada_ls(full({0.5, 0.5}), 3), ContractError);
}

TEST(AdaLS, MatchesBruteForceOnSimplexLattice) {
  for (std::size_t k = 2; k <= 5; ++k)
    for (const Vec& p : oracle::simplex_lattice(k, 6))
      for (std::size_t r = 1; r <= k; ++r) {
        const auto got = ada_ls(p, r).probs;
        const Vec want = r == k ? p : oracle::ada_ls(p, r);
        for (std::size_t c = 0; c < k; ++c) ASSERT_NEAR(got[c], want[c], 1e-9) << "k=" << k << " r=" << r;
      }
}

TEST(AdaLS, OutputIsAProbabilityVector) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const auto p = testing::dirichlet(6, rng, 0.3);
    for (std::size_t r = 1; r <= 6; ++r) EXPECT_NO_THROW(require_probability(ada_ls(p, r).probs, 1e-12));
  }
}

TEST(AdaLS, PreservesArgmax) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto p = testing::dirichlet(10, rng);
    for (std::size_t r : {1u, 3u}) EXPECT_EQ(argmax(ada_ls(p, r).probs), argmax(p));
  }
}

TEST(AdaLS, DependsOnlyOnTheDisclosedEntries) {
  // Same top-2, different tails.
  const auto a = ada_ls(full({0.5, 0.3, 0.15, 0.05}), 2).probs;
  const auto b = ada_ls(full({0.5, 0.3, 0.0, 0.2}), 2).probs;
  EXPECT_EQ(a, b);
}

TEST(HardToProb, SmoothedTwoClassOracle) {
  const auto p = hard_to_prob(0, 2, HardEncoding::kSmoothed);
  EXPECT_NEAR(p[0], 0.95, 1e-15);
  EXPECT_NEAR(p[1], 0.05, 1e-15);
  EXPECT_EQ(hard_to_prob(1, 3, HardEncoding::kOneHot), full({0, 1, 0}));
  EXPECT_THROW(hard_to_prob(3, 3, HardEncoding::kOneHot), ContractError);
}

TEST(EncodeTeacher, HardDisclosureFallsBackToLabelEncodings) {
  const auto out = disclose(full({0.2, 0.8}), {DisclosureMode::kHard, 1});
  EXPECT_EQ(encode_teacher(out, {TeacherEncoding::Kind::kHard, 1}), full({0, 1}));
  const auto ls = encode_teacher(out, {TeacherEncoding::Kind::kAdaLS, 1});
  EXPECT_NEAR(ls[1], 0.95, 1e-15);
}

TEST(EncodeTeacher, FullDisclosureWithRequalsKIsTheFullRow) {
  const auto out = disclose(full({0.25, 0.5, 0.25}), {DisclosureMode::kFull, 0});
  EXPECT_EQ(encode_teacher(out, {TeacherEncoding::Kind::kAdaLS, 3}), full({0.25, 0.5, 0.25}));
}

PredictorHandle table(std::vector<Vec> rows, std::size_t r = 1) {
  return std::make_shared<oracle::TablePredictor>(std::move(rows), r);
}

TEST(InitTeacher, TwoPredictorExample) {
  const std::vector<PredictorHandle> hs = {table({{0.7, 0.2, 0.1}}), table({{0.1, 0.8, 0.1}})};
  const MemoryBank bank = init_teacher(hs, Tensor({1, 2}), {TeacherEncoding::Kind::kAdaLS, 1});
  EXPECT_NEAR(bank.row(0)[0], 0.4, 1e-12);
  EXPECT_NEAR(bank.row(0)[1], 0.475, 1e-12);
  EXPECT_NEAR(bank.row(0)[2], 0.125, 1e-12);
  EXPECT_EQ(bank.epoch(), 0u);
}

TEST(InitTeacher, IdenticalPredictorsAreIdempotent) {
  std::mt19937_64 rng(3);
  std::vector<Vec> rows;
  for (int i = 0; i < 20; ++i) rows.push_back(testing::dirichlet(4, rng));
  const TeacherEncoding enc{TeacherEncoding::Kind::kAdaLS, 2};
  const std::vector<PredictorHandle> one = {table(rows, 2)}, three = {table(rows, 2), table(rows, 2), table(rows, 2)};
  const Tensor x({20, 2});
  const Tensor a = init_teacher(one, x, enc).rows(), b = init_teacher(three, x, enc).rows();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(InitTeacher, MatchesBruteForceOverSmallInstances) {
  std::mt19937_64 rng(4);
  for (std::size_t k = 2; k <= 5; ++k)
    for (std::size_t m = 1; m <= 3; ++m)
      for (std::size_t r = 1; r < k; ++r) {
        const std::size_t n = 6;
        std::vector<std::vector<Vec>> per(m);
        std::vector<PredictorHandle> hs;
        for (auto& rows : per) {
          for (std::size_t i = 0; i < n; ++i) rows.push_back(testing::dirichlet(k, rng));
          hs.push_back(table(rows, r));
        }
        const MemoryBank bank = init_teacher(hs, Tensor({n, 2}), {TeacherEncoding::Kind::kAdaLS, r});
        for (std::size_t i = 0; i < n; ++i) {
          const Vec want = oracle::init_teacher_row(per, i, r);
          for (std::size_t c = 0; c < k; ++c) ASSERT_NEAR(bank.row(i)[c], want[c], 1e-9);
        }
      }
}

TEST(InitTeacher, AnyFailingPredictorAbortsConstruction) {
  const std::vector<PredictorHandle> hs = {table({{0.6, 0.4}}), std::make_shared<oracle::FailingPredictor>(2)};
  EXPECT_THROW(init_teacher(hs, Tensor({1, 2}), {}), TransportError);
}

TEST(InitTeacher, ContractChecks) {
  EXPECT_THROW(init_teacher({}, Tensor({1, 2}), {}), ContractError);
  const std::vector<PredictorHandle> mixed = {table({{0.6, 0.4}}), table({{0.2, 0.3, 0.5}})};
  EXPECT_THROW(init_teacher(mixed, Tensor({1, 2}), {}), ContractError);
  const std::vector<PredictorHandle> hs = {table({{0.6, 0.4}})};
  EXPECT_THROW(init_teacher(hs, Tensor({1, 2}), {TeacherEncoding::Kind::kAdaLS, 3}), ContractError);
}

TEST(MemoryBank, RowLookupOutOfRange) {
  const MemoryBank bank(Tensor::matrix({{0.5, 0.5}}));
  EXPECT_THROW(bank.row(1), LookupError);
  EXPECT_THROW(MemoryBank(Tensor::matrix({{0.5, 0.6}})), ContractError);
}

TEST(EmaUpdate, WorkedExample) {
  MemoryBank bank(Tensor::matrix({{1.0, 0.0}}));
  ema_update(bank, Tensor::matrix({{0.0, 1.0}}), 0.6);
  EXPECT_NEAR(bank.row(0)[0], 0.6, 1e-15);
  EXPECT_NEAR(bank.row(0)[1], 0.4, 1e-15);
  EXPECT_EQ(bank.epoch(), 1u);
}

TEST(EmaUpdate, MatchesBruteForceAndStaysOnSimplex) {
  std::mt19937_64 rng(5);
  for (std::size_t k = 2; k <= 5; ++k)
    for (double gamma : {0.0, 0.3, 0.6, 0.9, 1.0}) {
      Tensor rows({4, k}), fresh({4, k});
      for (std::size_t i = 0; i < 4; ++i) {
        const auto a = testing::dirichlet(k, rng), b = testing::dirichlet(k, rng);
        std::copy(a.begin(), a.end(), rows.row(i).begin());
        std::copy(b.begin(), b.end(), fresh.row(i).begin());
      }
      MemoryBank bank(rows);
      ema_update(bank, fresh, gamma);
      for (std::size_t i = 0; i < 4; ++i) {
        const Vec want = oracle::ema({rows.row(i).begin(), rows.row(i).end()},
                                     {fresh.row(i).begin(), fresh.row(i).end()}, gamma);
        for (std::size_t c = 0; c < k; ++c) ASSERT_NEAR(bank.row(i)[c], want[c], 1e-12);
        EXPECT_NO_THROW(require_probability(bank.row(i), 1e-12));
      }
    }
}

TEST(EmaUpdate, GammaOneIsBitIdenticalAndZeroCopies) {
  std::mt19937_64 rng(6);
  Tensor rows({3, 3}), fresh({3, 3});
  for (std::size_t i = 0; i < 3; ++i) {
    const auto a = testing::dirichlet(3, rng), b = testing::dirichlet(3, rng);
    std::copy(a.begin(), a.end(), rows.row(i).begin());
    std::copy(b.begin(), b.end(), fresh.row(i).begin());
  }
  MemoryBank keep(rows), copy(rows);
  ema_update(keep, fresh, 1.0);
  ema_update(copy, fresh, 0.0);
  EXPECT_EQ(keep.rows(), rows);
  EXPECT_EQ(copy.rows(), fresh);
}

TEST(EmaUpdate, RejectsBadInputs) {
  MemoryBank bank(Tensor::matrix({{0.5, 0.5}}));
  EXPECT_THROW(ema_update(bank, Tensor::matrix({{0.5, 0.5}}), 1.5), ContractError);
  EXPECT_THROW(ema_update(bank, Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}}), 0.5), ContractError);
}

// ---------------------------------------------------------------------------
// Prediction cache

SourceNet small_source(std::size_t k = 3) {
  ArchDescriptor a;
  a.hidden = {8};
  a.num_classes = k;
  return SourceNet(a, 21);
}

TEST(Cache, RoundTripReproducesDisclosedOutputs) {
  std::mt19937_64 rng(7);
  const Tensor x = testing::random_matrix(25, 2, rng);
  for (const Disclosure d : {Disclosure{DisclosureMode::kTopR, 1}, Disclosure{DisclosureMode::kTopR, 2},
                             Disclosure{DisclosureMode::kFull, 3}, Disclosure{DisclosureMode::kHard, 1}}) {
    const LocalPredictor local(small_source(), d);
    std::stringstream ss;
    write_cache(ss, "source-0", local, x);
    const CachedPredictor cached(ss, "source-0");
    EXPECT_EQ(cached.size(), 25u);
    EXPECT_EQ(cached.num_classes(), 3u);
    EXPECT_EQ(cached.disclosure().mode, d.mode);
    std::vector<std::size_t> ids(25);
    std::iota(ids.begin(), ids.end(), 0);
    EXPECT_EQ(cached.predict_batch(ids, x), local.predict_batch(ids, x));
  }
}

TEST(Cache, SeveralPredictorsShareOneFile) {
  std::mt19937_64 rng(8);
  const Tensor x = testing::random_matrix(5, 2, rng);
  const LocalPredictor a(small_source(), {}), b(SourceNet(small_source().arch(), 99), {});
  std::stringstream ss;
  write_cache(ss, "source-0", a, x);
  write_cache(ss, "source-1", b, x);
  const std::string text = ss.str();
  std::stringstream s0(text), s1(text);
  const std::size_t ids[] = {3};
  EXPECT_EQ(CachedPredictor(s0, "source-0").predict_batch(ids, x), a.predict_batch(ids, gather_rows(x, ids)));
  EXPECT_EQ(CachedPredictor(s1, "source-1").predict_batch(ids, x), b.predict_batch(ids, gather_rows(x, ids)));
}

TEST(Cache, MissingSampleOrPredictorIsLookupError) {
  std::mt19937_64 rng(9);
  const Tensor x = testing::random_matrix(3, 2, rng);
  std::stringstream ss;
  write_cache(ss, "source-0", LocalPredictor(small_source(), {}), x);
  const std::string text = ss.str();
  std::stringstream a(text), b(text);
  const CachedPredictor cached(a, "source-0");
  const std::size_t ids[] = {3};
  EXPECT_THROW(cached.predict_batch(ids, x), LookupError);
  EXPECT_THROW(CachedPredictor(b, "source-7"), LookupError);
}

TEST(Cache, MalformedLinesAreFormatErrors) {
  std::stringstream junk("{\"predictor_id\": \"source-0\", \"sample_id\": 0}\n");
  EXPECT_THROW(CachedPredictor(junk, "source-0"), FormatError);
  std::stringstream text("not json\n");
  EXPECT_THROW(CachedPredictor(text, "source-0"), FormatError);
  EXPECT_THROW(CachedPredictor("/nonexistent/cache.ndjson", "source-0"), FormatError);
}

TEST(Cache, RecordLayout) {
  const auto out = disclose(full({0.2, 0.8}), {DisclosureMode::kTopR, 1});
  const auto j = cache_record("source-0", 4, out, 1);
  EXPECT_EQ(j.at("predictor_id"), "source-0");
  EXPECT_EQ(j.at("sample_id"), 4);
  EXPECT_EQ(j.at("mode"), "top-r");
  EXPECT_EQ(j.at("classes"), nlohmann::json::array({1}));
  EXPECT_EQ(j.at("probs"), nlohmann::json::array({0.8}));
}

}  // namespace
}  // namespace dine
