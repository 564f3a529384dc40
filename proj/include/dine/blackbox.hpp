// The opaque source-predictor boundary.
//
// A predictor only ever hands out a DisclosedOutput: the full probability
// vector, the top-r (class, probability) pairs, or a hard label. Probabilities
// cross the boundary rounded to 9 significant digits, whichever backing
// (in-process net, network service, on-disk cache) produced them, so every
// backing discloses identical values for the same query.
#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dine/memory_bank.hpp"
#include "dine/nn.hpp"

namespace dine {

enum class DisclosureMode { kFull, kTopR, kHard };

inline std::string to_string(DisclosureMode m) {
  switch (m) {
    case DisclosureMode::kFull: return "full";
    case DisclosureMode::kTopR: return "top-r";
    case DisclosureMode::kHard: return "hard";
  }
  return "?";
}

inline DisclosureMode parse_disclosure_mode(const std::string& s) {
  if (s == "full" || s == "full-soft") return DisclosureMode::kFull;
  if (s == "top-r" || s == "topr" || s == "top") return DisclosureMode::kTopR;
  if (s == "hard") return DisclosureMode::kHard;
  throw ContractError("unknown disclosure mode '" + s + "'");
}

struct Disclosure {
  DisclosureMode mode = DisclosureMode::kTopR;
  std::size_t r = 1;  // used by kTopR only

  friend bool operator==(const Disclosure&, const Disclosure&) = default;
};

struct ClassProb {
  std::size_t label = 0;
  double prob = 0.0;

  friend bool operator==(const ClassProb&, const ClassProb&) = default;
};

/// What a predictor reveals about one sample. Entries are in descending
/// probability order (ties: lower class index first). A hard output carries
/// a single entry with probability 1.
struct DisclosedOutput {
  DisclosureMode mode = DisclosureMode::kTopR;
  std::size_t num_classes = 0;
  std::vector<ClassProb> entries;

  std::size_t top_label() const { return entries.front().label; }

  friend bool operator==(const DisclosedOutput&, const DisclosedOutput&) = default;
};

/// Rounds to 9 significant decimal digits, the precision used on the wire
/// and in caches.
inline double quantize(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

/// Class indices ordered by descending probability, lowest index first on ties.
inline std::vector<std::size_t> ranked_classes(std::span<const double> p) {
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  return idx;
}

/// Applies a disclosure policy to a full probability vector.
inline DisclosedOutput disclose(std::span<const double> probs, const Disclosure& d) {
  const std::size_t k = probs.size();
  DisclosedOutput out{d.mode, k, {}};
  const auto ranked = ranked_classes(probs);
  switch (d.mode) {
    case DisclosureMode::kHard:
      out.entries.push_back({ranked.front(), 1.0});
      break;
    case DisclosureMode::kTopR:
      if (d.r < 1 || d.r > k) throw ContractError("top-r disclosure needs 1 <= r <= K");
      for (std::size_t i = 0; i < d.r; ++i) out.entries.push_back({ranked[i], quantize(probs[ranked[i]])});
      break;
    case DisclosureMode::kFull:
      for (std::size_t c : ranked) out.entries.push_back({c, quantize(probs[c])});
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Teacher encodings

/// Adaptive label smoothing: keep the top-r probabilities, spread the rest
/// of the mass uniformly over the other K - r classes.
struct SmoothedPrediction {
  std::vector<double> probs;
  std::size_t r = 0;
};

inline SmoothedPrediction ada_ls(std::span<const ClassProb> top, std::size_t num_classes, std::size_t r) {
  if (r < 1 || r > num_classes) throw ContractError("ada_ls needs 1 <= r <= K");
  if (top.size() < r)
    throw ContractError("ada_ls: disclosure carries " + std::to_string(top.size()) + " entries, r = " +
                        std::to_string(r));
  SmoothedPrediction out{std::vector<double>(num_classes, 0.0), r};
  std::vector<bool> kept(num_classes, false);
  double mass = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const auto& e = top[i];
    if (e.label >= num_classes || kept[e.label]) throw ContractError("ada_ls: bad class index in disclosure");
    kept[e.label] = true;
    out.probs[e.label] = e.prob;
    mass += e.prob;
  }
  if (r < num_classes) {
    const double rest = std::max(0.0, (1.0 - mass) / static_cast<double>(num_classes - r));
    for (std::size_t c = 0; c < num_classes; ++c)
      if (!kept[c]) out.probs[c] = rest;
  }
  return out;
}

inline SmoothedPrediction ada_ls(std::span<const double> p, std::size_t r) {
  require_probability(p);
  if (r == p.size()) return {std::vector<double>(p.begin(), p.end()), r};
  const auto ranked = ranked_classes(p);
  std::vector<ClassProb> top;
  for (std::size_t i = 0; i < std::min(r, p.size()); ++i) top.push_back({ranked[i], p[ranked[i]]});
  return ada_ls(top, p.size(), r);
}

enum class HardEncoding { kOneHot, kSmoothed };

inline constexpr double kLabelSmoothing = 0.1;

/// One-hot or label-smoothed ((1 - 0.1)·onehot + 0.1/K) encoding of a class.
inline std::vector<double> hard_to_prob(std::size_t label, std::size_t num_classes, HardEncoding enc) {
  if (label >= num_classes) throw ContractError("hard_to_prob: class out of range");
  const double alpha = enc == HardEncoding::kSmoothed ? kLabelSmoothing : 0.0;
  std::vector<double> p(num_classes, alpha / static_cast<double>(num_classes));
  p[label] += 1.0 - alpha;
  return p;
}

/// How disclosed source outputs become teacher rows.
struct TeacherEncoding {
  enum class Kind { kAdaLS, kHard, kLS };
  Kind kind = Kind::kAdaLS;
  std::size_t r = 1;  // kAdaLS only; r = K keeps the full prediction

  friend bool operator==(const TeacherEncoding&, const TeacherEncoding&) = default;
};

inline std::string to_string(TeacherEncoding::Kind k) {
  switch (k) {
    case TeacherEncoding::Kind::kAdaLS: return "adals";
    case TeacherEncoding::Kind::kHard: return "hard";
    case TeacherEncoding::Kind::kLS: return "ls";
  }
  return "?";
}

inline TeacherEncoding::Kind parse_teacher_kind(const std::string& s) {
  if (s == "adals" || s == "adals_r") return TeacherEncoding::Kind::kAdaLS;
  if (s == "hard") return TeacherEncoding::Kind::kHard;
  if (s == "ls") return TeacherEncoding::Kind::kLS;
  throw ContractError("unknown teacher encoding '" + s + "'");
}

inline std::vector<double> encode_teacher(const DisclosedOutput& out, const TeacherEncoding& enc) {
  if (out.entries.empty()) throw ContractError("empty disclosure");
  const std::size_t k = out.num_classes;
  if (out.mode == DisclosureMode::kHard) {
    // A hard label cannot support AdaLS; fall back to the smoothed encoding.
    const auto kind = enc.kind == TeacherEncoding::Kind::kHard ? HardEncoding::kOneHot : HardEncoding::kSmoothed;
    return hard_to_prob(out.top_label(), k, kind);
  }
  switch (enc.kind) {
    case TeacherEncoding::Kind::kHard: return hard_to_prob(out.top_label(), k, HardEncoding::kOneHot);
    case TeacherEncoding::Kind::kLS: return hard_to_prob(out.top_label(), k, HardEncoding::kSmoothed);
    case TeacherEncoding::Kind::kAdaLS: break;
  }
  if (out.mode == DisclosureMode::kFull && enc.r == k) {
    std::vector<double> p(k, 0.0);
    for (const auto& e : out.entries) p[e.label] = e.prob;
    return p;
  }
  return ada_ls(out.entries, k, enc.r).probs;
}

// ---------------------------------------------------------------------------
// Predictors

/// A black-box source predictor. Implementations expose only disclosed
/// outputs; concurrent calls on one instance are allowed.
class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual std::size_t num_classes() const = 0;
  /// Feature width accepted, or 0 when the backing does not look at features.
  virtual std::size_t input_dim() const = 0;
  virtual Disclosure disclosure() const = 0;

  /// Disclosed outputs for target samples `ids` with features `x` (one row each).
  virtual std::vector<DisclosedOutput> predict_batch(std::span<const std::size_t> ids, const Tensor& x) const = 0;

  DisclosedOutput predict(std::size_t id, std::span<const double> features) const {
    const std::size_t ids[] = {id};
    return predict_batch(ids, Tensor::matrix(1, features.size(), {features.begin(), features.end()})).front();
  }
};

using PredictorHandle = std::shared_ptr<const Predictor>;

/// In-process predictor backed by a private snapshot of a source network.
class LocalPredictor final : public Predictor {
 public:
  LocalPredictor(SourceNet net, Disclosure disclosure) : net_(std::move(net)), disclosure_(disclosure) {
    if (disclosure_.mode == DisclosureMode::kTopR && (disclosure_.r < 1 || disclosure_.r > net_.num_classes()))
      throw ContractError("top-r disclosure needs 1 <= r <= K");
  }

  std::size_t num_classes() const override { return net_.num_classes(); }
  std::size_t input_dim() const override { return net_.arch().input_dim; }
  Disclosure disclosure() const override { return disclosure_; }

  std::vector<DisclosedOutput> predict_batch(std::span<const std::size_t> ids, const Tensor& x) const override {
    if (x.rank() != 2 || x.cols() != input_dim())
      throw DimensionError("feature width does not match predictor input " + std::to_string(input_dim()));
    if (ids.size() != x.rows()) throw DimensionError("id count does not match feature rows");
    const Tensor p = net_.predict_proba(x);
    std::vector<DisclosedOutput> out;
    out.reserve(p.rows());
    for (std::size_t i = 0; i < p.rows(); ++i) out.push_back(disclose(p.row(i), disclosure_));
    return out;
  }

 private:
  SourceNet net_;
  Disclosure disclosure_;
};

/// Averages the teacher encodings of every predictor's output per sample.
/// Any predictor failure propagates and no bank is produced.
inline MemoryBank init_teacher(std::span<const PredictorHandle> handles, const Tensor& target_features,
                               const TeacherEncoding& enc) {
  if (handles.empty()) throw ContractError("init_teacher needs at least one predictor");
  const std::size_t k = handles.front()->num_classes();
  for (const auto& h : handles)
    if (h->num_classes() != k) throw ContractError("init_teacher: predictors disagree on K");
  if (enc.kind == TeacherEncoding::Kind::kAdaLS && (enc.r < 1 || enc.r > k))
    throw ContractError("init_teacher needs 1 <= r <= K");
  const std::size_t n = target_features.rows();
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Tensor rows({n, k});
  for (const auto& h : handles) {
    const auto outs = h->predict_batch(ids, target_features);
    if (outs.size() != n) throw ContractError("predictor returned the wrong number of outputs");
    for (std::size_t i = 0; i < n; ++i) {
      if (outs[i].num_classes != k) throw ContractError("predictor output has the wrong class count");
      const auto enc_row = encode_teacher(outs[i], enc);
      for (std::size_t c = 0; c < k; ++c) rows(i, c) += enc_row[c];
    }
  }
  rows *= 1.0 / static_cast<double>(handles.size());
  return MemoryBank(std::move(rows));
}

}  // namespace dine
