// Feed-forward source and target networks.
//
// SourceNet: ReLU trunk followed by a single linear head.
// TargetNet: ReLU trunk, bottleneck (batch norm then linear), and a
// weight-normalized linear classifier.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "dine/autodiff.hpp"

namespace dine {

enum class Mode { kTrain, kEval };

/// Whether a train-mode forward folds its batch statistics into the running
/// statistics. Auxiliary passes (the mixup branch, gradient checks) use kFrozen.
enum class StatsUpdate { kUpdate, kFrozen };

namespace nn {

template <class P>
Var bind(Tape& t, P& p) {
  if constexpr (std::is_const_v<P>)
    return t.constant(p.value);
  else
    return t.watch(p);
}

inline Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

struct Dense {
  Parameter weight;  // out × in
  Parameter bias;    // out

  Dense() = default;
  /// Gaussian weights with the given standard deviation and zero bias.
  Dense(const std::string& name, std::size_t in, std::size_t out, double init_std, ParamGroup group,
        std::mt19937_64& rng)
      : weight(name + ".weight", normal_tensor({out, in}, init_std, rng), group),
        bias(name + ".bias", Tensor({out}), group) {}

  /// Weights and bias uniform in ±1/sqrt(in).
  static Dense fan_in_uniform(const std::string& name, std::size_t in, std::size_t out, ParamGroup group,
                              std::mt19937_64& rng) {
    Dense d;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    d.weight = Parameter(name + ".weight", uniform_tensor({out, in}, bound, rng), group);
    d.bias = Parameter(name + ".bias", uniform_tensor({out}, bound, rng), group);
    return d;
  }

  std::size_t in() const { return weight.value.shape()[1]; }
  std::size_t out() const { return weight.value.shape()[0]; }

  template <class Self>
  static Var apply(Self& self, Tape& t, Var x) {
    return ad::linear(x, bind(t, self.weight), bind(t, self.bias));
  }
};

struct BatchNorm {
  static constexpr double kEps = 1e-5;
  // An epoch is only ~15 batches at this scale; 0.1 leaves the running
  // statistics a fifth stale at the end of the first epoch.
  static constexpr double kMomentum = 0.5;

  Parameter gamma;
  Parameter beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;

  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t width, ParamGroup group)
      : gamma(name + ".gamma", Tensor({width}, 1.0), group),
        beta(name + ".beta", Tensor({width}), group),
        running_mean(width, 0.0),
        running_var(width, 1.0) {}

  template <class Self>
  static Var apply(Self& self, Tape& t, Var x, Mode mode, StatsUpdate update) {
    if (mode == Mode::kEval)
      return ad::batch_norm_fixed(x, bind(t, self.gamma), bind(t, self.beta), self.running_mean, self.running_var,
                                  kEps);
    ad::BatchStats stats;
    Var y = ad::batch_norm(x, bind(t, self.gamma), bind(t, self.beta), kEps, &stats);
    if constexpr (!std::is_const_v<Self>) {
      if (update == StatsUpdate::kUpdate) {
        const double n = static_cast<double>(x.value().rows());
        const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
        for (std::size_t j = 0; j < stats.mean.size(); ++j) {
          self.running_mean[j] = (1.0 - kMomentum) * self.running_mean[j] + kMomentum * stats.mean[j];
          self.running_var[j] = (1.0 - kMomentum) * self.running_var[j] + kMomentum * stats.var[j] * unbias;
        }
      }
    }
    return y;
  }
};

/// Linear layer whose weight rows are g_k · v_k / ||v_k||.
struct WeightNormDense {
  Parameter direction;  // out × in, rows kept at unit norm between updates
  Parameter magnitude;  // out
  Parameter bias;       // out

  WeightNormDense() = default;
  WeightNormDense(const std::string& name, std::size_t in, std::size_t out, double init_std, ParamGroup group,
                  std::mt19937_64& rng)
      : direction(name + ".direction", normal_tensor({out, in}, init_std, rng), group),
        magnitude(name + ".magnitude", Tensor({out}), group),
        bias(name + ".bias", Tensor({out}), group) {
    for (std::size_t r = 0; r < out; ++r) {
      double s = 0.0;
      for (double v : direction.value.row(r)) s += v * v;
      magnitude.value[r] = std::sqrt(s);
    }
    renormalize();
  }

  /// Rescales every direction row to unit norm; the effective weight is unchanged.
  void renormalize() {
    Tensor& v = direction.value;
    for (std::size_t r = 0; r < v.rows(); ++r) {
      double s = 0.0;
      for (double x : v.row(r)) s += x * x;
      const double norm = std::sqrt(s);
      if (norm > 0.0)
        for (double& x : v.row(r)) x /= norm;
    }
  }

  template <class Self>
  static Var apply(Self& self, Tape& t, Var x) {
    Var w = ad::weight_norm(bind(t, self.direction), bind(t, self.magnitude));
    return ad::linear(x, w, bind(t, self.bias));
  }
};

struct Trunk {
  std::vector<Dense> layers;

  Trunk() = default;
  Trunk(std::size_t input_dim, const std::vector<std::size_t>& hidden, ParamGroup group, std::mt19937_64& rng) {
    std::size_t in = input_dim;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      layers.push_back(Dense::fan_in_uniform("trunk." + std::to_string(i), in, hidden[i], group, rng));
      in = hidden[i];
    }
  }

  template <class Self>
  static Var apply(Self& self, Tape& t, Var x) {
    for (auto& layer : self.layers) x = ad::relu(Dense::apply(layer, t, x));
    return x;
  }
};

}  // namespace nn

/// Architecture of either network. Enough to rebuild the parameter shapes.
struct ArchDescriptor {
  enum class Kind { kSource, kTarget };
  Kind kind = Kind::kTarget;
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t bottleneck = 32;  // target only
  std::size_t num_classes = 2;

  std::size_t feature_dim() const { return hidden.empty() ? input_dim : hidden.back(); }
  friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

inline void require_feature_width(const Tensor& batch, std::size_t input_dim) {
  require_matrix(batch, "forward");
  if (batch.cols() != input_dim)
    throw DimensionError("feature width " + std::to_string(batch.cols()) + " does not match network input " +
                         std::to_string(input_dim));
}

class SourceNet {
 public:
  SourceNet() = default;
  SourceNet(ArchDescriptor arch, std::uint64_t seed) : arch_(std::move(arch)), seed_(seed) {
    arch_.kind = ArchDescriptor::Kind::kSource;
    std::mt19937_64 rng(seed);
    trunk_ = nn::Trunk(arch_.input_dim, arch_.hidden, ParamGroup::kTrunk, rng);
    head_ = nn::Dense::fan_in_uniform("head", arch_.feature_dim(), arch_.num_classes, ParamGroup::kNew, rng);
  }

  const ArchDescriptor& arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t num_classes() const { return arch_.num_classes; }

  /// Logits. The source net has no normalization layers, so `mode` only
  /// matters through the tape's recording flag.
  Var forward(Tape& t, const Tensor& batch, Mode /*mode*/ = Mode::kTrain) { return forward_impl(*this, t, batch); }

  Tensor logits(const Tensor& batch) const {
    Tape t(false);
    return forward_impl(*this, t, batch).value();
  }

  Tensor predict_proba(const Tensor& batch) const { return softmax(logits(batch)); }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> ps;
    for (auto& l : trunk_.layers) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
    }
    ps.push_back(&head_.weight);
    ps.push_back(&head_.bias);
    return ps;
  }

  std::vector<const Parameter*> parameters() const {
    auto ps = const_cast<SourceNet*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  void after_update() {}

 private:
  template <class Self>
  static Var forward_impl(Self& self, Tape& t, const Tensor& batch) {
    require_feature_width(batch, self.arch_.input_dim);
    Var x = nn::Trunk::apply(self.trunk_, t, t.constant(batch));
    return nn::Dense::apply(self.head_, t, x);
  }

  ArchDescriptor arch_;
  std::uint64_t seed_ = 0;
  nn::Trunk trunk_;
  nn::Dense head_;
};

class TargetNet {
 public:
  TargetNet() = default;
  TargetNet(ArchDescriptor arch, std::uint64_t seed) : arch_(std::move(arch)), seed_(seed) {
    arch_.kind = ArchDescriptor::Kind::kTarget;
    std::mt19937_64 rng(seed);
    trunk_ = nn::Trunk(arch_.input_dim, arch_.hidden, ParamGroup::kTrunk, rng);
    const std::size_t feat = arch_.feature_dim();
    bn_ = nn::BatchNorm("bottleneck.bn", feat, ParamGroup::kNew);
    const double xavier_b = std::sqrt(2.0 / static_cast<double>(feat + arch_.bottleneck));
    bottleneck_ = nn::Dense("bottleneck.fc", feat, arch_.bottleneck, xavier_b, ParamGroup::kNew, rng);
    const double xavier_c = std::sqrt(2.0 / static_cast<double>(arch_.bottleneck + arch_.num_classes));
    classifier_ = nn::WeightNormDense("classifier", arch_.bottleneck, arch_.num_classes, xavier_c, ParamGroup::kNew, rng);
  }

  const ArchDescriptor& arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t num_classes() const { return arch_.num_classes; }

  /// Logits for `batch`. Train mode normalizes with batch statistics and, with
  /// StatsUpdate::kUpdate, folds them into the running statistics.
  Var forward(Tape& t, const Tensor& batch, Mode mode, StatsUpdate update = StatsUpdate::kUpdate) {
    return forward_impl(*this, t, batch, mode, update);
  }

  /// Eval-mode logits; records nothing and mutates nothing.
  Tensor logits(const Tensor& batch) const {
    Tape t(false);
    return forward_impl(*this, t, batch, Mode::kEval, StatsUpdate::kFrozen).value();
  }

  Tensor predict_proba(const Tensor& batch) const { return softmax(logits(batch)); }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> ps;
    for (auto& l : trunk_.layers) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
    }
    ps.insert(ps.end(), {&bn_.gamma, &bn_.beta, &bottleneck_.weight, &bottleneck_.bias, &classifier_.direction,
                         &classifier_.magnitude, &classifier_.bias});
    return ps;
  }

  std::vector<const Parameter*> parameters() const {
    auto ps = const_cast<TargetNet*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  /// Running statistics, as (name, values) pairs.
  std::vector<std::pair<std::string, std::vector<double>*>> buffers() {
    return {{"bottleneck.bn.running_mean", &bn_.running_mean}, {"bottleneck.bn.running_var", &bn_.running_var}};
  }

  nn::WeightNormDense& classifier() { return classifier_; }
  const nn::WeightNormDense& classifier() const { return classifier_; }
  const nn::BatchNorm& batch_norm() const { return bn_; }

  /// Restores unit-norm classifier directions after a parameter update.
  void after_update() { classifier_.renormalize(); }

 private:
  template <class Self>
  static Var forward_impl(Self& self, Tape& t, const Tensor& batch, Mode mode, StatsUpdate update) {
    require_feature_width(batch, self.arch_.input_dim);
    Var x = nn::Trunk::apply(self.trunk_, t, t.constant(batch));
    x = nn::BatchNorm::apply(self.bn_, t, x, mode, update);
    x = nn::Dense::apply(self.bottleneck_, t, x);
    return nn::WeightNormDense::apply(self.classifier_, t, x);
  }

  ArchDescriptor arch_;
  std::uint64_t seed_ = 0;
  nn::Trunk trunk_;
  nn::BatchNorm bn_;
  nn::Dense bottleneck_;
  nn::WeightNormDense classifier_;
};

}  // namespace dine
