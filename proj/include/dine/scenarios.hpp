// Synthetic covariate-shift scenarios.
//
// Every domain draws from one base distribution (two moons, or K Gaussian
// clusters on a circle centred at the origin), adds isotropic noise, and then
// applies its own rotation about the origin and translation. Target labels are returned in a
// separate TargetLabels object that only the evaluator accepts, so training
// code never receives them.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "dine/blackbox.hpp"
#include "dine/training.hpp"

namespace dine {

enum class Family { kMoons, kGaussians };
enum class Regime { kClosed, kPartial };

inline std::string to_string(Family f) { return f == Family::kMoons ? "moons" : "gaussians"; }
inline std::string to_string(Regime r) { return r == Regime::kClosed ? "closed" : "partial"; }

inline Family parse_family(const std::string& s) {
  if (s == "moons") return Family::kMoons;
  if (s == "gaussians") return Family::kGaussians;
  throw ContractError("unknown scenario family '" + s + "'");
}

inline Regime parse_regime(const std::string& s) {
  if (s == "closed") return Regime::kClosed;
  if (s == "partial") return Regime::kPartial;
  throw ContractError("unknown regime '" + s + "'");
}

struct DomainShift {
  double rotation_deg = 0.0;
  std::array<double, 2> translation{0.0, 0.0};
  double noise = 0.1;

  friend bool operator==(const DomainShift&, const DomainShift&) = default;
};

struct ScenarioSpec {
  Family family = Family::kMoons;
  std::size_t n_source = 1000;
  std::size_t n_target = 1000;
  std::size_t n_source_test = 500;
  std::size_t num_classes = 2;
  std::vector<DomainShift> sources{DomainShift{}};
  DomainShift target{30.0, {0.0, 0.0}, 0.1};
  Regime regime = Regime::kClosed;
  std::size_t k_target = 0;  // partial regime only
  std::uint64_t seed = 2020;
  // Gaussian family geometry: cluster centres on a circle of this radius,
  // with separate spreads along the radial and tangential directions.
  double radius = 3.0;
  double radial_std = 0.3;
  double tangential_std = 0.3;

  std::size_t num_sources() const { return sources.size(); }
  std::size_t target_classes() const { return regime == Regime::kPartial ? k_target : num_classes; }

  void validate() const {
    if (num_classes < 2) throw ContractError("scenario needs at least two classes");
    if (family == Family::kMoons && num_classes != 2) throw ContractError("moons family has exactly two classes");
    if (sources.empty()) throw ContractError("scenario needs at least one source domain");
    if (regime == Regime::kPartial && (k_target < 1 || k_target >= num_classes))
      throw ContractError("partial regime needs 1 <= k_target < K");
    if (n_source < num_classes || n_target < 2) throw ContractError("too few samples for the class count");
  }

  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

struct DomainData {
  Tensor features;
  std::vector<std::size_t> labels;
};

/// Ground-truth target labels; readable only through evaluate().
class TargetLabels {
 public:
  TargetLabels() = default;

  std::size_t size() const { return labels_.size(); }

 private:
  explicit TargetLabels(std::vector<std::size_t> labels) : labels_(std::move(labels)) {}

  std::vector<std::size_t> labels_;

  friend struct ScenarioAccess;
};

struct Scenario {
  ScenarioSpec spec;
  std::vector<DomainData> sources;       // training split per source domain
  std::vector<DomainData> source_tests;  // held-out split per source domain
  Tensor target_features;
  TargetLabels target_labels;
};

/// The only way in or out of a TargetLabels.
struct ScenarioAccess {
  static TargetLabels make(std::vector<std::size_t> labels) { return TargetLabels(std::move(labels)); }
  static const std::vector<std::size_t>& labels(const TargetLabels& t) { return t.labels_; }
};

namespace scenario_detail {

inline std::array<double, 2> sample_base(const ScenarioSpec& s, std::size_t label, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  if (s.family == Family::kMoons) {
    const double t = std::numbers::pi * unit(rng);
    if (label == 0) return {std::cos(t), std::sin(t)};
    return {1.0 - std::cos(t), 0.5 - std::sin(t)};
  }
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(s.num_classes);
  const double radial = s.radius + s.radial_std * gauss(rng);
  const double tangential = s.tangential_std * gauss(rng);
  const double c = std::cos(angle), sn = std::sin(angle);
  return {radial * c - tangential * sn, radial * sn + tangential * c};
}

/// Counter-clockwise rotation about the origin by `deg` degrees.
inline std::array<double, 2> rotate(std::array<double, 2> p, double deg) {
  const double a = deg * std::numbers::pi / 180.0;
  return {std::cos(a) * p[0] - std::sin(a) * p[1], std::sin(a) * p[0] + std::cos(a) * p[1]};
}

inline DomainData sample_domain(const ScenarioSpec& s, const DomainShift& shift, std::size_t n,
                                std::size_t num_labels, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(s.seed), static_cast<std::uint32_t>(s.seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> gauss(0.0, 1.0);
  DomainData d{Tensor({n, 2}), std::vector<std::size_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % num_labels;  // class-balanced
    auto p = sample_base(s, label, rng);
    p[0] += shift.noise * gauss(rng);
    p[1] += shift.noise * gauss(rng);
    p = rotate(p, shift.rotation_deg);
    d.features(i, 0) = p[0] + shift.translation[0];
    d.features(i, 1) = p[1] + shift.translation[1];
    d.labels[i] = label;
  }
  return d;
}

}  // namespace scenario_detail

/// Pure function of the spec: identical specs give bit-identical data.
inline Scenario generate(const ScenarioSpec& spec) {
  spec.validate();
  Scenario sc;
  sc.spec = spec;
  const std::size_t m = spec.num_sources();
  for (std::size_t i = 0; i < m; ++i) {
    sc.sources.push_back(scenario_detail::sample_domain(spec, spec.sources[i], spec.n_source, spec.num_classes, 2 * i));
    sc.source_tests.push_back(
        scenario_detail::sample_domain(spec, spec.sources[i], spec.n_source_test, spec.num_classes, 2 * i + 1));
  }
  auto target = scenario_detail::sample_domain(spec, spec.target, spec.n_target, spec.target_classes(), 1000);
  sc.target_features = std::move(target.features);
  sc.target_labels = ScenarioAccess::make(std::move(target.labels));
  return sc;
}

struct Accuracy {
  double overall = 0.0;         // percent
  double per_class_mean = 0.0;  // percent, mean over classes present in the labels
  std::vector<double> per_class;
};

/// Accuracy (percent) of row-wise argmax over all K columns.
inline Accuracy accuracy_from_probs(const Tensor& probs, const std::vector<std::size_t>& labels) {
  if (probs.rows() != labels.size()) throw DimensionError("prediction count does not match label count");
  const std::size_t k = probs.cols();
  std::vector<double> hit(k, 0.0), count(k, 0.0);
  double correct = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool ok = argmax(probs.row(i)) == labels[i];
    correct += ok;
    if (labels[i] < k) {
      hit[labels[i]] += ok;
      count[labels[i]] += 1.0;
    }
  }
  Accuracy acc;
  acc.overall = 100.0 * correct / static_cast<double>(labels.size());
  double sum = 0.0, present = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c] == 0.0) continue;
    acc.per_class.push_back(100.0 * hit[c] / count[c]);
    sum += acc.per_class.back();
    present += 1.0;
  }
  acc.per_class_mean = present > 0.0 ? sum / present : 0.0;
  return acc;
}

inline Accuracy evaluate(const Tensor& probs, const TargetLabels& labels) {
  return accuracy_from_probs(probs, ScenarioAccess::labels(labels));
}

/// Eval-mode accuracy of a target net. In the partial regime the argmax
/// still ranges over every source class.
inline Accuracy evaluate(const TargetNet& net, const Tensor& target_features, const TargetLabels& labels) {
  return evaluate(predict_all(net, target_features), labels);
}

/// Accuracy of the averaged source predictions without any training.
inline Accuracy no_adapt_baseline(std::span<const PredictorHandle> handles, const Tensor& target_features,
                                  const TargetLabels& labels, const TeacherEncoding& enc) {
  return evaluate(init_teacher(handles, target_features, enc).rows(), labels);
}

/// Comma-separated export: x0,x1,label (label column omitted when empty).
inline void write_csv(std::ostream& os, const Tensor& features, const std::vector<std::size_t>& labels = {}) {
  os.precision(17);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t j = 0; j < features.cols(); ++j) os << (j ? "," : "") << features(i, j);
    if (!labels.empty()) os << ',' << labels[i];
    os << '\n';
  }
}

}  // namespace dine
