// Experiment driver shared by the command-line tool and the acceptance suite.
//
// A run directory holds
//   manifest.json     the full config, seeds and code version
//   metrics.ndjson    one record per (seed, phase, epoch)
//   report.json       per-seed accuracies with mean and std
//   target_<seed>.ckpt, distilled_<seed>.ckpt
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dine/cache.hpp"
#include "dine/checkpoint.hpp"
#include "dine/distill.hpp"
#include "dine/finetune.hpp"
#include "dine/service.hpp"
#include "dine/source_training.hpp"

#ifndef DINE_VERSION
#define DINE_VERSION "0.1.0"
#endif

namespace dine {

inline constexpr const char* kVersion = DINE_VERSION;

/// Where adaptation gets its source predictors from.
struct PredictorSource {
  enum class Kind { kLocal, kCache, kService };
  Kind kind = Kind::kLocal;
  std::vector<std::string> checkpoints;  // kLocal; empty trains the sources in-process
  std::string cache;                     // kCache
  std::vector<std::string> endpoints;    // kService, host:port each

  friend bool operator==(const PredictorSource&, const PredictorSource&) = default;
};

inline std::string to_string(PredictorSource::Kind k) {
  switch (k) {
    case PredictorSource::Kind::kLocal: return "local";
    case PredictorSource::Kind::kCache: return "cache";
    case PredictorSource::Kind::kService: return "service";
  }
  return "?";
}

inline PredictorSource::Kind parse_predictor_kind(const std::string& s) {
  if (s == "local") return PredictorSource::Kind::kLocal;
  if (s == "cache") return PredictorSource::Kind::kCache;
  if (s == "service") return PredictorSource::Kind::kService;
  throw ContractError("unknown predictor backend '" + s + "'");
}

struct ExperimentConfig {
  std::string name = "dine";
  ScenarioSpec scenario;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t bottleneck = 32;
  SgdConfig optimizer;
  SourceTrainConfig source_training;
  Disclosure disclosure;
  AdaptConfig adapt;
  FinetuneConfig finetune;
  TeacherEncoding::Kind teacher = TeacherEncoding::Kind::kAdaLS;
  std::vector<std::uint64_t> seeds = {2019, 2020, 2021};
  std::string output_dir = "runs/dine";
  std::size_t checkpoint_every = 0;  // 0: final checkpoints only
  PredictorSource predictors;

  ArchDescriptor arch() const {
    ArchDescriptor a;
    a.input_dim = 2;
    a.hidden = hidden;
    a.bottleneck = bottleneck;
    a.num_classes = scenario.num_classes;
    return a;
  }

  TeacherEncoding teacher_encoding() const { return {teacher, adapt.r}; }

  void validate() const {
    scenario.validate();
    adapt.validate(scenario.num_classes);
    if (seeds.empty()) throw ContractError("at least one seed is required");
    if (bottleneck == 0) throw ContractError("bottleneck width must be positive");
    for (auto h : hidden)
      if (h == 0) throw ContractError("hidden widths must be positive");
    if (finetune.batch_size < 2) throw ContractError("finetune batch size must be at least 2");
    if (source_training.batch_size < 2) throw ContractError("source batch size must be at least 2");
    if (disclosure.mode == DisclosureMode::kTopR && (disclosure.r < 1 || disclosure.r > scenario.num_classes))
      throw ContractError("top-r disclosure needs 1 <= r <= K");
    if (teacher == TeacherEncoding::Kind::kAdaLS && disclosure.mode == DisclosureMode::kTopR &&
        adapt.r > disclosure.r)
      throw ContractError("AdaLS r exceeds the number of disclosed classes");
    if (teacher == TeacherEncoding::Kind::kAdaLS && disclosure.mode == DisclosureMode::kHard)
      throw ContractError("AdaLS teacher needs soft disclosures; use teacher hard or ls");
    if (predictors.kind == PredictorSource::Kind::kCache && predictors.cache.empty())
      throw ContractError("cache backend needs a cache path");
    if (predictors.kind == PredictorSource::Kind::kService && predictors.endpoints.empty())
      throw ContractError("service backend needs at least one endpoint");
    if (predictors.kind == PredictorSource::Kind::kService)
      for (const auto& e : predictors.endpoints) RemotePredictor::parse_endpoint(e);
    if (predictors.kind == PredictorSource::Kind::kLocal && !predictors.checkpoints.empty() &&
        predictors.checkpoints.size() != scenario.num_sources())
      throw ContractError("one checkpoint per source domain is required");
  }
};

// ---------------------------------------------------------------------------
// JSON round trip. Missing keys keep their defaults; unknown keys are errors.

namespace config_detail {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ContractError(where_ + " must be an object");
  }
  /// Rejects keys that no get()/sub() call asked for.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw ContractError("unknown key '" + where_ + "." + it.key() + "'");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.emplace_back(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ContractError("bad value for '" + where_ + "." + key + "': " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.emplace_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

inline json shift_to_json(const DomainShift& s) {
  return {{"rotation_deg", s.rotation_deg}, {"translation", s.translation}, {"noise", s.noise}};
}

inline DomainShift shift_from_json(const json& j, const std::string& where) {
  DomainShift s;
  Reader r(j, where);
  r.get("rotation_deg", s.rotation_deg);
  r.get("translation", s.translation);
  r.get("noise", s.noise);
  r.finish();
  return s;
}

}  // namespace config_detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using config_detail::shift_to_json;
  using nlohmann::json;
  json sources = json::array();
  for (const auto& s : c.scenario.sources) sources.push_back(shift_to_json(s));
  const auto& sc = c.scenario;
  json j;
  j["name"] = c.name;
  j["scenario"] = {{"family", to_string(sc.family)},
                   {"n_source", sc.n_source},
                   {"n_target", sc.n_target},
                   {"n_source_test", sc.n_source_test},
                   {"num_classes", sc.num_classes},
                   {"sources", sources},
                   {"target", shift_to_json(sc.target)},
                   {"regime", to_string(sc.regime)},
                   {"k_target", sc.k_target},
                   {"seed", sc.seed},
                   {"radius", sc.radius},
                   {"radial_std", sc.radial_std},
                   {"tangential_std", sc.tangential_std}};
  j["model"] = {{"hidden", c.hidden}, {"bottleneck", c.bottleneck}};
  j["optimizer"] = {{"lr_trunk", c.optimizer.lr_trunk},
                    {"lr_new", c.optimizer.lr_new},
                    {"momentum", c.optimizer.momentum},
                    {"weight_decay", c.optimizer.weight_decay}};
  j["source_training"] = {{"epochs", c.source_training.epochs},
                          {"batch_size", c.source_training.batch_size},
                          {"label_smoothing", c.source_training.label_smoothing},
                          {"lr_trunk", c.source_training.sgd.lr_trunk},
                          {"lr_new", c.source_training.sgd.lr_new},
                          {"momentum", c.source_training.sgd.momentum},
                          {"weight_decay", c.source_training.sgd.weight_decay}};
  j["disclosure"] = {{"mode", to_string(c.disclosure.mode)}, {"r", c.disclosure.r}};
  j["adapt"] = {{"beta", c.adapt.beta},       {"gamma", c.adapt.gamma},     {"mixup_alpha", c.adapt.mixup_alpha},
                {"r", c.adapt.r},             {"epochs", c.adapt.epochs},   {"batch_size", c.adapt.batch_size}};
  j["finetune"] = {{"epochs", c.finetune.epochs},
                   {"batch_size", c.finetune.batch_size},
                   {"update_bn_stats", c.finetune.update_bn_stats}};
  j["ablation"] = {{"drop_mi", c.adapt.drop_mi}, {"drop_mix", c.adapt.drop_mix}, {"teacher", to_string(c.teacher)}};
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["checkpoint_every"] = c.checkpoint_every;
  j["predictors"] = {{"backend", to_string(c.predictors.kind)},
                     {"checkpoints", c.predictors.checkpoints},
                     {"cache", c.predictors.cache},
                     {"endpoints", c.predictors.endpoints}};
  return j;
}

/// Overlays `j` on the defaults. A manifest (an object with a "config" key)
/// is accepted as well.
inline ExperimentConfig config_from_json(const nlohmann::json& j_in) {
  using namespace config_detail;
  const json& j = j_in.contains("config") && j_in.contains("version") ? j_in.at("config") : j_in;
  ExperimentConfig c;
  Reader top(j, "config");
  top.get("name", c.name);
  top.get("seeds", c.seeds);
  top.get("output_dir", c.output_dir);
  top.get("checkpoint_every", c.checkpoint_every);
  if (const json* s = top.sub("scenario")) {
    auto& sc = c.scenario;
    Reader r(*s, "scenario");
    std::string family = to_string(sc.family), regime = to_string(sc.regime);
    r.get("family", family);
    r.get("regime", regime);
    sc.family = parse_family(family);
    sc.regime = parse_regime(regime);
    r.get("n_source", sc.n_source);
    r.get("n_target", sc.n_target);
    r.get("n_source_test", sc.n_source_test);
    r.get("num_classes", sc.num_classes);
    r.get("k_target", sc.k_target);
    r.get("seed", sc.seed);
    r.get("radius", sc.radius);
    r.get("radial_std", sc.radial_std);
    r.get("tangential_std", sc.tangential_std);
    if (const json* src = r.sub("sources")) {
      if (!src->is_array()) throw ContractError("scenario.sources must be an array");
      sc.sources.clear();
      for (const auto& e : *src) sc.sources.push_back(shift_from_json(e, "scenario.sources[]"));
    }
    if (const json* t = r.sub("target")) sc.target = shift_from_json(*t, "scenario.target");
    r.finish();
  }
  if (const json* m = top.sub("model")) {
    Reader r(*m, "model");
    r.get("hidden", c.hidden);
    r.get("bottleneck", c.bottleneck);
    r.finish();
  }
  if (const json* o = top.sub("optimizer")) {
    Reader r(*o, "optimizer");
    r.get("lr_trunk", c.optimizer.lr_trunk);
    r.get("lr_new", c.optimizer.lr_new);
    r.get("momentum", c.optimizer.momentum);
    r.get("weight_decay", c.optimizer.weight_decay);
    r.finish();
  }
  if (const json* s = top.sub("source_training")) {
    Reader r(*s, "source_training");
    r.get("epochs", c.source_training.epochs);
    r.get("batch_size", c.source_training.batch_size);
    r.get("label_smoothing", c.source_training.label_smoothing);
    r.get("lr_trunk", c.source_training.sgd.lr_trunk);
    r.get("lr_new", c.source_training.sgd.lr_new);
    r.get("momentum", c.source_training.sgd.momentum);
    r.get("weight_decay", c.source_training.sgd.weight_decay);
    r.finish();
  }
  if (const json* d = top.sub("disclosure")) {
    Reader r(*d, "disclosure");
    std::string mode = to_string(c.disclosure.mode);
    r.get("mode", mode);
    c.disclosure.mode = parse_disclosure_mode(mode);
    r.get("r", c.disclosure.r);
    r.finish();
  }
  if (const json* a = top.sub("adapt")) {
    Reader r(*a, "adapt");
    r.get("beta", c.adapt.beta);
    r.get("gamma", c.adapt.gamma);
    r.get("mixup_alpha", c.adapt.mixup_alpha);
    r.get("r", c.adapt.r);
    r.get("epochs", c.adapt.epochs);
    r.get("batch_size", c.adapt.batch_size);
    r.finish();
  }
  if (const json* f = top.sub("finetune")) {
    Reader r(*f, "finetune");
    r.get("epochs", c.finetune.epochs);
    r.get("batch_size", c.finetune.batch_size);
    r.get("update_bn_stats", c.finetune.update_bn_stats);
    r.finish();
  }
  if (const json* a = top.sub("ablation")) {
    Reader r(*a, "ablation");
    r.get("drop_mi", c.adapt.drop_mi);
    r.get("drop_mix", c.adapt.drop_mix);
    std::string teacher = to_string(c.teacher);
    r.get("teacher", teacher);
    c.teacher = parse_teacher_kind(teacher);
    r.finish();
  }
  if (const json* p = top.sub("predictors")) {
    Reader r(*p, "predictors");
    std::string backend = to_string(c.predictors.kind);
    r.get("backend", backend);
    c.predictors.kind = parse_predictor_kind(backend);
    r.get("checkpoints", c.predictors.checkpoints);
    r.get("cache", c.predictors.cache);
    r.get("endpoints", c.predictors.endpoints);
    r.finish();
  }
  top.finish();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open config " + path);
  try {
    return config_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config " + path + ": " + e.what());
  }
}

/// Sets one dotted key ("adapt.gamma=1") on a config. The value is parsed as
/// JSON when possible and taken as a string otherwise.
inline ExperimentConfig with_override(const ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ContractError("override must look like key.path=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json j = to_json(c);
  nlohmann::json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw ContractError("unknown config key '" + path + "'");
    node = &(*node)[parts[i]];
  }
  if (!node->is_object() || !node->contains(parts.back())) throw ContractError("unknown config key '" + path + "'");
  (*node)[parts.back()] = value;
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Reports

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return m;
}

inline std::string format_mean_std(const MeanStd& m) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << m.mean << "±" << m.std;
  return os.str();
}

struct SeedResult {
  std::uint64_t seed = 0;
  double distill_accuracy = 0.0;  // before fine-tuning
  double final_accuracy = 0.0;
  double final_per_class = 0.0;
};

struct RunReport {
  std::string name;
  double no_adapt = 0.0;
  double no_adapt_per_class = 0.0;
  std::vector<SeedResult> seeds;

  std::vector<double> finals() const {
    std::vector<double> v;
    for (const auto& s : seeds) v.push_back(s.final_accuracy);
    return v;
  }
  std::vector<double> distilled() const {
    std::vector<double> v;
    for (const auto& s : seeds) v.push_back(s.distill_accuracy);
    return v;
  }
  MeanStd final_stats() const { return mean_std(finals()); }
  MeanStd distill_stats() const { return mean_std(distilled()); }
};

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : r.seeds)
    seeds.push_back({{"seed", s.seed},
                     {"distill_accuracy", s.distill_accuracy},
                     {"final_accuracy", s.final_accuracy},
                     {"final_per_class", s.final_per_class}});
  const auto f = r.final_stats(), d = r.distill_stats();
  return {{"name", r.name},
          {"no_adapt", r.no_adapt},
          {"no_adapt_per_class", r.no_adapt_per_class},
          {"seeds", seeds},
          {"final_mean", f.mean},
          {"final_std", f.std},
          {"distill_mean", d.mean},
          {"distill_std", d.std}};
}

inline RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  r.name = j.at("name").get<std::string>();
  r.no_adapt = j.at("no_adapt").get<double>();
  r.no_adapt_per_class = j.value("no_adapt_per_class", r.no_adapt);
  for (const auto& s : j.at("seeds"))
    r.seeds.push_back({s.at("seed").get<std::uint64_t>(), s.at("distill_accuracy").get<double>(),
                       s.at("final_accuracy").get<double>(), s.value("final_per_class", 0.0)});
  return r;
}

inline nlohmann::json metrics_record(std::uint64_t seed, const EpochMetrics& m, const Accuracy& acc) {
  return {{"seed", seed},
          {"phase", m.phase},
          {"epoch", m.epoch},
          {"loss_total", m.loss_total},
          {"loss_kd", m.loss_kd},
          {"loss_mix", m.loss_mix},
          {"loss_mi", m.loss_mi},
          {"mean_entropy", m.mean_entropy},
          {"accuracy", acc.overall},
          {"per_class_accuracy", acc.per_class_mean}};
}

// ---------------------------------------------------------------------------
// Pipeline pieces

/// Trains one SourceNet per source domain; source i uses seed scenario.seed + i.
inline std::vector<SourceNet> train_sources(const ExperimentConfig& cfg, const Scenario& sc) {
  std::vector<SourceNet> nets;
  ArchDescriptor arch = cfg.arch();
  for (std::size_t i = 0; i < sc.sources.size(); ++i) {
    SourceTrainConfig stc = cfg.source_training;
    stc.seed = cfg.scenario.seed + i;
    nets.push_back(train_source(stc, arch, sc.sources[i]));
  }
  return nets;
}

inline std::string predictor_id(std::size_t i) { return "source-" + std::to_string(i); }

/// Opens the configured predictor backend: one handle per source domain.
inline std::vector<PredictorHandle> open_predictors(const ExperimentConfig& cfg, const Scenario& sc) {
  std::vector<PredictorHandle> handles;
  switch (cfg.predictors.kind) {
    case PredictorSource::Kind::kLocal: {
      if (cfg.predictors.checkpoints.empty()) {
        for (auto& net : train_sources(cfg, sc))
          handles.push_back(std::make_shared<LocalPredictor>(std::move(net), cfg.disclosure));
      } else {
        for (const auto& path : cfg.predictors.checkpoints)
          handles.push_back(std::make_shared<LocalPredictor>(load_checkpoint<SourceNet>(path), cfg.disclosure));
      }
      break;
    }
    case PredictorSource::Kind::kCache:
      for (const auto& id : CachedPredictor::predictor_ids(cfg.predictors.cache))
        handles.push_back(std::make_shared<CachedPredictor>(cfg.predictors.cache, id));
      break;
    case PredictorSource::Kind::kService:
      for (const auto& ep : cfg.predictors.endpoints) {
        auto [host, port] = RemotePredictor::parse_endpoint(ep);
        handles.push_back(std::make_shared<RemotePredictor>(host, port, cfg.arch().input_dim));
      }
      break;
  }
  if (handles.empty()) throw ContractError("no source predictors available");
  for (const auto& h : handles)
    if (h->num_classes() != cfg.scenario.num_classes)
      throw ContractError("predictor class count does not match the scenario");
  return handles;
}

struct AdaptationHooks {
  std::ostream* metrics = nullptr;  // NDJSON metrics sink
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
};

/// init_teacher → distillation → fine-tuning for every configured seed.
/// Target labels are touched only through evaluate().
inline RunReport run_adaptation(const ExperimentConfig& cfg, const Scenario& sc,
                                std::span<const PredictorHandle> handles, const AdaptationHooks& hooks = {}) {
  cfg.validate();
  const TeacherEncoding enc = cfg.teacher_encoding();
  const MemoryBank initial = init_teacher(handles, sc.target_features, enc);
  RunReport report;
  report.name = cfg.name;
  const Accuracy base = evaluate(initial.rows(), sc.target_labels);
  report.no_adapt = base.overall;
  report.no_adapt_per_class = base.per_class_mean;

  for (std::uint64_t seed : cfg.seeds) {
    MemoryBank bank = initial;
    TargetNet net(cfg.arch(), seed);
    auto on_epoch = [&](const EpochMetrics& m, const TargetNet& n) {
      const Accuracy acc = evaluate(n, sc.target_features, sc.target_labels);
      if (hooks.metrics) *hooks.metrics << metrics_record(seed, m, acc).dump() << '\n';
      if (!hooks.checkpoint_dir.empty() && cfg.checkpoint_every > 0 && m.epoch % cfg.checkpoint_every == 0)
        save_checkpoint((hooks.checkpoint_dir / ("target_" + std::to_string(seed) + "_" + m.phase + "_e" +
                                                 std::to_string(m.epoch) + ".ckpt"))
                            .string(),
                        n);
    };
    AdaptConfig ac = cfg.adapt;
    ac.seed = seed;
    run_distillation(ac, cfg.optimizer, bank, net, sc.target_features, on_epoch);
    SeedResult res;
    res.seed = seed;
    res.distill_accuracy = evaluate(net, sc.target_features, sc.target_labels).overall;
    if (!hooks.checkpoint_dir.empty())
      save_checkpoint((hooks.checkpoint_dir / ("distilled_" + std::to_string(seed) + ".ckpt")).string(), net);
    FinetuneConfig fc = cfg.finetune;
    fc.seed = seed;
    run_finetune(fc, cfg.optimizer, net, sc.target_features, on_epoch);
    const Accuracy fin = evaluate(net, sc.target_features, sc.target_labels);
    res.final_accuracy = fin.overall;
    res.final_per_class = fin.per_class_mean;
    if (!hooks.checkpoint_dir.empty())
      save_checkpoint((hooks.checkpoint_dir / ("target_" + std::to_string(seed) + ".ckpt")).string(), net);
    report.seeds.push_back(res);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Commands

inline nlohmann::json manifest(const ExperimentConfig& cfg, const std::string& command) {
  return {{"command", command}, {"version", kVersion}, {"seeds", cfg.seeds}, {"config", to_json(cfg)}};
}

namespace harness_detail {

inline std::filesystem::path prepare_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw FormatError("cannot create output directory " + dir + ": " + ec.message());
  return p;
}

/// Left-aligned table cell padded to `width` code points (at least one space).
inline std::string cell(const std::string& text, std::size_t width) {
  std::size_t points = 0;
  for (unsigned char ch : text) points += (ch & 0xC0) != 0x80;
  return text + std::string(points < width ? width - points : 1, ' ');
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace harness_detail

struct SourceReport {
  std::vector<std::string> checkpoints;
  std::vector<double> test_accuracy;  // percent, per source domain
};

/// Trains every source domain and writes source_<i>.ckpt into output_dir.
inline SourceReport cmd_train_source(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto dir = harness_detail::prepare_dir(cfg.output_dir);
  const Scenario sc = generate(cfg.scenario);
  SourceReport rep;
  const auto nets = train_sources(cfg, sc);
  nlohmann::json acc = nlohmann::json::array();
  for (std::size_t i = 0; i < nets.size(); ++i) {
    const auto path = (dir / ("source_" + std::to_string(i) + ".ckpt")).string();
    save_checkpoint(path, nets[i]);
    rep.checkpoints.push_back(path);
    rep.test_accuracy.push_back(source_accuracy(nets[i], sc.source_tests[i]));
    acc.push_back({{"checkpoint", path}, {"test_accuracy", rep.test_accuracy.back()}});
  }
  harness_detail::write_json(dir / "manifest.json", manifest(cfg, "train-source"));
  harness_detail::write_json(dir / "source_report.json", {{"sources", acc}});
  return rep;
}

/// Queries the configured predictors once for every target sample and
/// writes the disclosed outputs to `cache_path`.
inline void cmd_cache_predictions(const ExperimentConfig& cfg, const std::string& cache_path) {
  cfg.validate();
  const Scenario sc = generate(cfg.scenario);
  const auto handles = open_predictors(cfg, sc);
  const auto parent = std::filesystem::path(cache_path).parent_path();
  if (!parent.empty()) harness_detail::prepare_dir(parent.string());
  std::ofstream os(cache_path);
  if (!os) throw FormatError("cannot write cache " + cache_path);
  for (std::size_t i = 0; i < handles.size(); ++i) write_cache(os, predictor_id(i), *handles[i], sc.target_features);
}

/// Loads a source checkpoint and starts serving it on "host:port" (port 0
/// picks a free one); the caller owns the server.
inline std::unique_ptr<PredictorServer> cmd_serve(const std::string& checkpoint, const Disclosure& disclosure,
                                                  const std::string& endpoint) {
  auto [host, port] = RemotePredictor::parse_endpoint(endpoint);
  auto predictor = std::make_shared<LocalPredictor>(load_checkpoint<SourceNet>(checkpoint), disclosure);
  auto server = std::make_unique<PredictorServer>(predictor, host, port);
  server->start();
  return server;
}

/// Full adaptation run: writes manifest, metrics, report and checkpoints.
inline RunReport cmd_adapt(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto dir = harness_detail::prepare_dir(cfg.output_dir);
  harness_detail::write_json(dir / "manifest.json", manifest(cfg, "adapt"));
  const Scenario sc = generate(cfg.scenario);
  const auto handles = open_predictors(cfg, sc);
  std::ofstream metrics(dir / "metrics.ndjson");
  if (!metrics) throw FormatError("cannot write metrics in " + dir.string());
  const RunReport report = run_adaptation(cfg, sc, handles, {&metrics, dir});
  harness_detail::write_json(dir / "report.json", to_json(report));
  return report;
}

/// Fine-tunes the distilled_<seed>.ckpt (or target_<seed>.ckpt) nets of an
/// earlier run with the MI objective alone.
inline RunReport cmd_finetune_only(const ExperimentConfig& cfg, const std::string& from_dir) {
  cfg.validate();
  const auto dir = harness_detail::prepare_dir(cfg.output_dir);
  harness_detail::write_json(dir / "manifest.json", manifest(cfg, "finetune-only"));
  const Scenario sc = generate(cfg.scenario);
  std::ofstream metrics(dir / "metrics.ndjson");
  if (!metrics) throw FormatError("cannot write metrics in " + dir.string());
  RunReport report;
  report.name = cfg.name;
  const std::filesystem::path from(from_dir);
  if (std::ifstream prev(from / "report.json"); prev) {
    const RunReport before = report_from_json(nlohmann::json::parse(prev));
    report.no_adapt = before.no_adapt;
    report.no_adapt_per_class = before.no_adapt_per_class;
  }
  for (std::uint64_t seed : cfg.seeds) {
    auto path = from / ("distilled_" + std::to_string(seed) + ".ckpt");
    if (!std::filesystem::exists(path)) path = from / ("target_" + std::to_string(seed) + ".ckpt");
    TargetNet net = load_checkpoint<TargetNet>(path.string());
    SeedResult res;
    res.seed = seed;
    res.distill_accuracy = evaluate(net, sc.target_features, sc.target_labels).overall;
    FinetuneConfig fc = cfg.finetune;
    fc.seed = seed;
    run_finetune(fc, cfg.optimizer, net, sc.target_features, [&](const EpochMetrics& m, const TargetNet& n) {
      metrics << metrics_record(seed, m, evaluate(n, sc.target_features, sc.target_labels)).dump() << '\n';
    });
    const Accuracy fin = evaluate(net, sc.target_features, sc.target_labels);
    res.final_accuracy = fin.overall;
    res.final_per_class = fin.per_class_mean;
    save_checkpoint((dir / ("target_" + std::to_string(seed) + ".ckpt")).string(), net);
    report.seeds.push_back(res);
  }
  harness_detail::write_json(dir / "report.json", to_json(report));
  return report;
}

/// Mean ± std table over run directories. Missing runs are listed as absent.
/// When `curves` is given, every run's metrics are appended as CSV rows.
inline std::vector<std::optional<RunReport>> cmd_report(const std::vector<std::string>& run_dirs, std::ostream& table,
                                                        std::ostream* curves = nullptr) {
  std::vector<std::optional<RunReport>> reports;
  using harness_detail::cell;
  table << cell("run", 28) << cell("seeds", 7) << cell("no-adapt", 10) << cell("w/o FT", 14) << "final\n";
  if (curves) *curves << "run,seed,phase,epoch,loss_total,loss_kd,loss_mix,loss_mi,mean_entropy,accuracy\n";
  for (const auto& d : run_dirs) {
    const std::filesystem::path dir(d);
    std::ifstream is(dir / "report.json");
    if (!is) {
      table << cell(d, 28) << "absent\n";
      reports.emplace_back(std::nullopt);
      continue;
    }
    RunReport r = report_from_json(nlohmann::json::parse(is));
    std::ostringstream na;
    na << std::fixed << std::setprecision(1) << r.no_adapt;
    table << cell(d, 28) << cell(std::to_string(r.seeds.size()), 7) << cell(na.str(), 10)
          << cell(format_mean_std(r.distill_stats()), 14) << format_mean_std(r.final_stats()) << '\n';
    if (curves) {
      std::ifstream ms(dir / "metrics.ndjson");
      std::string line;
      while (std::getline(ms, line)) {
        if (line.empty()) continue;
        const auto m = nlohmann::json::parse(line);
        *curves << d << ',' << m.at("seed").get<std::uint64_t>() << ',' << m.at("phase").get<std::string>() << ','
                << m.at("epoch").get<std::size_t>();
        for (const char* k : {"loss_total", "loss_kd", "loss_mix", "loss_mi", "mean_entropy", "accuracy"})
          *curves << ',' << m.at(k).dump();
        *curves << '\n';
      }
    }
    reports.emplace_back(std::move(r));
  }
  return reports;
}

}  // namespace dine
