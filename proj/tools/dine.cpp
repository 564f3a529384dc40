// dine: command-line driver for black-box domain adaptation experiments.
//
//   dine train-source      --config exp.json
//   dine serve             --checkpoint runs/src/source_0.ckpt --endpoint 127.0.0.1:7070
//   dine cache-predictions --config exp.json --checkpoint runs/src/source_0.ckpt --out cache.ndjson
//   dine adapt             --config exp.json --cache cache.ndjson
//   dine finetune-only     --config exp.json --from runs/dine
//   dine report            runs/a runs/b --curves curves.csv
//
// Exit status: 0 ok, 1 unexpected failure, 2 contract or usage error,
// 3 file format or I/O error, 4 transport error.
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dine/harness.hpp"

namespace {

using namespace dine;

/// Flags shared by every subcommand that reads an ExperimentConfig.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> checkpoints;
  std::vector<std::string> endpoints;
  std::string cache;
  std::string disclosure;
  std::string teacher;
  std::size_t disclosure_r = 0;
  std::size_t r = 0;
  bool drop_mi = false;
  bool drop_mix = false;

  void attach(CLI::App& app, bool predictors) {
    app.add_option("-c,--config", config_path, "experiment config (JSON) or a run manifest");
    app.add_option("--set", overrides, "override one config key, e.g. adapt.gamma=1 (repeatable)");
    app.add_option("-o,--output-dir", output_dir, "run directory");
    app.add_option("--name", name, "run name used in reports");
    app.add_option("--seeds", seeds, "seed list")->delimiter(',');
    app.add_option("--disclosure", disclosure, "full, top-r or hard");
    app.add_option("--disclosure-r", disclosure_r, "classes revealed by top-r disclosure");
    app.add_option("--teacher", teacher, "teacher encoding: adals, hard or ls");
    app.add_option("--adals-r", r, "AdaLS truncation r (also raises a smaller top-r disclosure)");
    app.add_flag("--drop-mi", drop_mi, "remove the mutual information term from distillation");
    app.add_flag("--drop-mix", drop_mix, "remove the mixup consistency term");
    if (predictors) {
      app.add_option("--checkpoint", checkpoints, "source checkpoint, one per source domain (repeatable)");
      app.add_option("--endpoint", endpoints, "predictor service host:port, one per source domain (repeatable)");
      app.add_option("--cache", cache, "prediction cache file");
    }
  }

  ExperimentConfig build() const {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    for (const auto& o : overrides) cfg = with_override(cfg, o);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (!name.empty()) cfg.name = name;
    if (!seeds.empty()) cfg.seeds = seeds;
    if (!disclosure.empty()) cfg.disclosure.mode = parse_disclosure_mode(disclosure);
    if (disclosure_r) cfg.disclosure.r = disclosure_r;
    if (!teacher.empty()) cfg.teacher = parse_teacher_kind(teacher);
    if (r) {
      cfg.adapt.r = r;
      if (cfg.disclosure.mode == DisclosureMode::kTopR && cfg.disclosure.r < r) cfg.disclosure.r = r;
    }
    if (drop_mi) cfg.adapt.drop_mi = true;
    if (drop_mix) cfg.adapt.drop_mix = true;
    if (!checkpoints.empty()) {
      cfg.predictors.kind = PredictorSource::Kind::kLocal;
      cfg.predictors.checkpoints = checkpoints;
    }
    if (!endpoints.empty()) {
      cfg.predictors.kind = PredictorSource::Kind::kService;
      cfg.predictors.endpoints = endpoints;
    }
    if (!cache.empty()) {
      cfg.predictors.kind = PredictorSource::Kind::kCache;
      cfg.predictors.cache = cache;
    }
    cfg.validate();
    return cfg;
  }
};

void print_report(const RunReport& r) {
  std::cout << std::fixed << std::setprecision(1);
  std::cout << "no-adapt " << r.no_adapt << '\n';
  for (const auto& s : r.seeds)
    std::cout << "seed " << s.seed << " w/o-ft " << s.distill_accuracy << " final " << s.final_accuracy << '\n';
  std::cout << "final " << format_mean_std(r.final_stats()) << " (w/o FT " << format_mean_std(r.distill_stats())
            << ")\n";
}

int serve_until_signal(const std::string& checkpoint, const Disclosure& disclosure, const std::string& endpoint) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  // Block before any worker thread exists so that only sigwait sees them.
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  auto server = cmd_serve(checkpoint, disclosure, endpoint);
  std::cout << "listening on " << server->host() << ':' << server->port() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  server->stop();
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Black-box domain adaptation by distillation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  ConfigFlags train_flags, cache_flags, adapt_flags, ft_flags, export_flags, show_flags;

  auto* train = app.add_subcommand("train-source", "train one source model per source domain");
  train_flags.attach(*train, false);

  auto* serve = app.add_subcommand("serve", "serve a source checkpoint over the NDJSON protocol");
  std::string serve_ckpt, serve_mode = "top-r", serve_endpoint = "127.0.0.1:7070";
  std::size_t serve_r = 1;
  serve->add_option("--checkpoint", serve_ckpt, "source checkpoint")->required();
  serve->add_option("--disclosure", serve_mode, "full, top-r or hard");
  serve->add_option("--disclosure-r", serve_r, "classes revealed by top-r disclosure");
  serve->add_option("--endpoint", serve_endpoint, "host:port to listen on (port 0 picks one)");

  auto* cache = app.add_subcommand("cache-predictions", "query the source predictors once and store the outputs");
  cache_flags.attach(*cache, true);
  std::string cache_out;
  cache->add_option("--out", cache_out, "cache file to write")->required();

  auto* adapt = app.add_subcommand("adapt", "distill and fine-tune a target model for every seed");
  adapt_flags.attach(*adapt, true);

  auto* ft = app.add_subcommand("finetune-only", "fine-tune the distilled nets of an earlier adapt run");
  ft_flags.attach(*ft, false);
  std::string ft_from;
  ft->add_option("--from", ft_from, "run directory holding distilled_<seed>.ckpt")->required();

  auto* report = app.add_subcommand("report", "mean ± std table over run directories");
  std::vector<std::string> report_dirs;
  std::string curves_path;
  report->add_option("runs", report_dirs, "run directories")->required();
  report->add_option("--curves", curves_path, "write per-epoch loss and accuracy curves as CSV");

  auto* exp = app.add_subcommand("export-data", "write the scenario's source and target features as CSV");
  export_flags.attach(*exp, false);

  auto* show = app.add_subcommand("show-config", "print the effective config as JSON");
  show_flags.attach(*show, true);

  CLI11_PARSE(app, argc, argv);

  if (*train) {
    const auto rep = cmd_train_source(train_flags.build());
    for (std::size_t i = 0; i < rep.checkpoints.size(); ++i)
      std::cout << rep.checkpoints[i] << " test accuracy " << std::fixed << std::setprecision(1)
                << rep.test_accuracy[i] << '\n';
  } else if (*serve) {
    return serve_until_signal(serve_ckpt, {parse_disclosure_mode(serve_mode), serve_r}, serve_endpoint);
  } else if (*cache) {
    cmd_cache_predictions(cache_flags.build(), cache_out);
  } else if (*adapt) {
    print_report(cmd_adapt(adapt_flags.build()));
  } else if (*ft) {
    print_report(cmd_finetune_only(ft_flags.build(), ft_from));
  } else if (*report) {
    std::ofstream curves;
    if (!curves_path.empty()) {
      curves.open(curves_path);
      if (!curves) throw FormatError("cannot write " + curves_path);
    }
    cmd_report(report_dirs, std::cout, curves_path.empty() ? nullptr : &curves);
  } else if (*exp) {
    const auto cfg = export_flags.build();
    const Scenario sc = generate(cfg.scenario);
    std::filesystem::create_directories(cfg.output_dir);
    for (std::size_t i = 0; i < sc.sources.size(); ++i) {
      std::ofstream os(std::filesystem::path(cfg.output_dir) / ("source_" + std::to_string(i) + ".csv"));
      write_csv(os, sc.sources[i].features, sc.sources[i].labels);
    }
    std::ofstream os(std::filesystem::path(cfg.output_dir) / "target.csv");
    write_csv(os, sc.target_features);
  } else if (*show) {
    std::cout << to_json(show_flags.build()).dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::invalid_argument& e) {  // contract and dimension errors
    std::cerr << "dine: " << e.what() << '\n';
    return 2;
  } catch (const dine::LookupError& e) {
    std::cerr << "dine: " << e.what() << '\n';
    return 2;
  } catch (const dine::FormatError& e) {
    std::cerr << "dine: " << e.what() << '\n';
    return 3;
  } catch (const dine::TransportError& e) {
    std::cerr << "dine: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "dine: " << e.what() << '\n';
    return 1;
  }
}
