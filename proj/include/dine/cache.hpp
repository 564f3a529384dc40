// On-disk prediction cache: one JSON record per line,
//   {"predictor_id": "...", "sample_id": 17, "mode": "top-r", "r": 1,
//    "num_classes": 4, "classes": [2], "probs": [0.912345678]}
// A cache stores exactly what a predictor disclosed, so adaptation can run
// from the cache alone after the source API has been queried once.
#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dine/blackbox.hpp"

namespace dine {

inline nlohmann::json cache_record(const std::string& predictor_id, std::size_t sample_id, const DisclosedOutput& out,
                                   std::size_t r) {
  nlohmann::json classes = nlohmann::json::array(), probs = nlohmann::json::array();
  for (const auto& e : out.entries) {
    classes.push_back(e.label);
    probs.push_back(quantize(e.prob));
  }
  return {{"predictor_id", predictor_id}, {"sample_id", sample_id}, {"mode", to_string(out.mode)},
          {"r", r},                       {"num_classes", out.num_classes}, {"classes", classes},
          {"probs", probs}};
}

/// Queries `predictor` for every row of `features` (sample ids 0..n-1) and
/// appends the disclosed outputs to `os`.
inline void write_cache(std::ostream& os, const std::string& predictor_id, const Predictor& predictor,
                        const Tensor& features) {
  std::vector<std::size_t> ids(features.rows());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  const auto outs = predictor.predict_batch(ids, features);
  const std::size_t r = predictor.disclosure().mode == DisclosureMode::kTopR ? predictor.disclosure().r
                        : predictor.disclosure().mode == DisclosureMode::kFull ? predictor.num_classes()
                                                                                : 1;
  for (std::size_t i = 0; i < outs.size(); ++i) os << cache_record(predictor_id, ids[i], outs[i], r).dump() << '\n';
}

/// Predictor that replays a cache file for one predictor id.
class CachedPredictor final : public Predictor {
 public:
  CachedPredictor(std::istream& is, const std::string& predictor_id) { load(is, predictor_id); }

  CachedPredictor(const std::string& path, const std::string& predictor_id) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open prediction cache " + path);
    load(is, predictor_id);
  }

  std::size_t num_classes() const override { return num_classes_; }
  std::size_t input_dim() const override { return 0; }
  Disclosure disclosure() const override { return disclosure_; }

  std::vector<DisclosedOutput> predict_batch(std::span<const std::size_t> ids, const Tensor&) const override {
    std::vector<DisclosedOutput> out;
    out.reserve(ids.size());
    for (std::size_t id : ids) {
      auto it = rows_.find(id);
      if (it == rows_.end()) throw LookupError("sample " + std::to_string(id) + " missing from prediction cache");
      out.push_back(it->second);
    }
    return out;
  }

  std::size_t size() const { return rows_.size(); }

  /// Distinct predictor ids present in a cache file, in first-seen order.
  static std::vector<std::string> predictor_ids(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open prediction cache " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto id = nlohmann::json::parse(line).at("predictor_id").get<std::string>();
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
    return ids;
  }

 private:
  void load(std::istream& is, const std::string& predictor_id) {
    std::string line;
    std::size_t lineno = 0;
    bool seen = false;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        if (j.at("predictor_id").get<std::string>() != predictor_id) continue;
        DisclosedOutput out;
        out.mode = parse_disclosure_mode(j.at("mode").get<std::string>());
        out.num_classes = j.at("num_classes").get<std::size_t>();
        const auto classes = j.at("classes").get<std::vector<std::size_t>>();
        const auto probs = j.at("probs").get<std::vector<double>>();
        if (classes.size() != probs.size() || classes.empty()) throw FormatError("classes/probs length mismatch");
        for (std::size_t i = 0; i < classes.size(); ++i) out.entries.push_back({classes[i], probs[i]});
        const Disclosure d{out.mode, j.at("r").get<std::size_t>()};
        if (!seen) {
          disclosure_ = d;
          num_classes_ = out.num_classes;
          seen = true;
        } else if (!(d == disclosure_) || out.num_classes != num_classes_) {
          throw FormatError("inconsistent disclosure within one predictor");
        }
        rows_[j.at("sample_id").get<std::size_t>()] = std::move(out);
      } catch (const nlohmann::json::exception& e) {
        throw FormatError("prediction cache line " + std::to_string(lineno) + ": " + e.what());
      } catch (const FormatError& e) {
        throw FormatError("prediction cache line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    if (!seen) throw LookupError("predictor '" + predictor_id + "' not found in prediction cache");
  }

  std::map<std::size_t, DisclosedOutput> rows_;
  Disclosure disclosure_;
  std::size_t num_classes_ = 0;
};

}  // namespace dine
