// Shared fixtures: the reference scenario and its trained source are built
// once per test binary.
#pragma once

#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dine/harness.hpp"

namespace dine::testing {

struct Reference {
  ExperimentConfig cfg;
  Scenario scenario;
  std::vector<PredictorHandle> handles;
};

inline const Reference& reference() {
  static const Reference ref = [] {
    Reference r;
    r.scenario = generate(r.cfg.scenario);
    r.handles = open_predictors(r.cfg, r.scenario);
    return r;
  }();
  return ref;
}

struct ReferenceRun {
  RunReport report;
  std::string metrics;  // NDJSON
};

/// Default-config adaptation over the three default seeds.
inline const ReferenceRun& reference_run() {
  static const ReferenceRun run = [] {
    const Reference& ref = reference();
    std::ostringstream metrics;
    ReferenceRun r;
    r.report = run_adaptation(ref.cfg, ref.scenario, ref.handles, {&metrics, {}});
    r.metrics = metrics.str();
    return r;
  }();
  return run;
}

inline Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t({rows, cols});
  for (double& v : t.values()) v = d(rng);
  return t;
}

inline std::vector<double> dirichlet(std::size_t k, std::mt19937_64& rng, double alpha = 1.0) {
  std::gamma_distribution<double> g(alpha, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (double& v : p) total += (v = g(rng));
  for (double& v : p) v /= total;
  return p;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dine_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace dine::testing
