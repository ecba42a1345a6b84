// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gencil/checkpoint.hpp"
#include "gencil/config.hpp"
#include "gencil/data.hpp"
#include "gencil/harness.hpp"
#include "gencil/results.hpp"

namespace gencil {

enum ExitCode : int { kExitOk = 0, kExitInput = 2, kExitGate = 3, kExitInternal = 4 };

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path);
  f << text;
}

inline Dataset load_dataset(const std::string& path) {
  if (!std::filesystem::exists(path)) throw DatasetError(DatasetError::Kind::kIo, "dataset not found: " + path);
  return read_dataset(path);
}

}  // namespace detail

struct GenDataOutput {
  std::vector<std::pair<std::string, std::uint64_t>> files;  // path, checksum
};

inline GenDataOutput cmd_gen_data(const Config& cfg, std::ostream& out) {
  SyntheticData d = gen_synthetic(cfg.data);
  detail::ensure_dir(cfg.out_dir);
  GenDataOutput r;
  for (auto [path, ds] : {std::pair{cfg.pretrain_path(), &d.pretrain}, std::pair{cfg.train_path(), &d.train},
                          std::pair{cfg.test_path(), &d.test}}) {
    write_dataset(*ds, path);
    r.files.emplace_back(path, dataset_checksum(*ds));
    out << path << "  " << ds->size() << " examples  " << ds->class_names.size() << " classes  checksum "
        << hex64(r.files.back().second) << '\n';
  }
  return r;
}

inline CheckpointData cmd_pretrain(const Config& cfg, std::ostream& out) {
  const Dataset pre = detail::load_dataset(cfg.pretrain_path());
  const Dataset train = detail::load_dataset(cfg.train_path());
  PipelineConfig pc = cfg.pipeline;
  pc.encoder.height = pre.height;
  pc.encoder.width = pre.width;
  pc.encoder.channels = pre.channels;
  auto [pipeline, report] = pretrain_pipeline(pre, train.class_names, pc);
  CheckpointData ck{std::move(pipeline), report, train.class_names, pre.class_names};
  detail::ensure_dir(std::filesystem::path(cfg.checkpoint_path()).parent_path().string().empty()
                         ? std::string(".")
                         : std::filesystem::path(cfg.checkpoint_path()).parent_path().string());
  write_checkpoint(ck, cfg.checkpoint_path());
  out << "encoder: train accuracy " << fixed2(100.0 * report.encoder_accuracy) << "% after " << report.encoder_steps
      << " steps (gate " << fixed2(100.0 * pc.encoder_pretrain.accuracy_gate) << "%)\n"
      << "decoder: caption loss " << report.decoder.caption_loss << " (gate " << pc.decoder_pretrain.gate
      << "), language loss " << report.decoder.language_loss << ", language decode accuracy "
      << fixed2(100.0 * report.decoder.language_decode_accuracy) << "%\n"
      << "checkpoint " << cfg.checkpoint_path() << "  checksum "
      << hex64(fnv1a64(read_file_bytes(cfg.checkpoint_path()))) << '\n';
  return ck;
}

struct RunOutput {
  ExperimentResult experiment;
  Json results;
  std::string results_path;
  std::string sessions_path;
};

inline RunOutput cmd_run(const Config& cfg, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ck_bytes = [&] {
    if (!std::filesystem::exists(cfg.checkpoint_path()))
      throw CheckpointError("checkpoint not found: " + cfg.checkpoint_path());
    return read_file_bytes(cfg.checkpoint_path());
  }();
  CheckpointData ck = checkpoint_to_pipeline(ck_bytes);
  const Dataset train = detail::load_dataset(cfg.train_path());
  const Dataset test = detail::load_dataset(cfg.test_path());
  if (train.class_names != ck.benchmark_classes)
    throw ConfigError("run: checkpoint was pretrained for a different benchmark class list");
  Pipeline& p = ck.pipeline;
  Benchmark bench = make_benchmark(train, test, p.encoder);
  RunOutput r;
  try {
    r.experiment = run_experiment(p, bench, cfg.harness, parse_methods(cfg.method));
  } catch (...) {
    detail::rethrow_with_context("run: ");
  }
  r.results = results_json(cfg, r.experiment, ck, fnv1a64(ck_bytes), train, detail::seconds_since(t0));
  detail::ensure_dir(cfg.out_dir);
  r.results_path = cfg.out_dir + "/results.json";
  r.sessions_path = cfg.out_dir + "/sessions.dat";
  detail::write_text(r.results_path, r.results.dump(1) + "\n");
  detail::write_text(r.sessions_path, sessions_table(r.experiment));
  out << run_summary(r.experiment) << "results " << r.results_path << "\nsessions " << r.sessions_path << '\n';
  return r;
}

inline Report cmd_report(const std::vector<std::string>& paths, const std::string& out_dir, std::ostream& out) {
  std::vector<std::pair<std::string, Json>> files;
  for (const auto& path : paths) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ReportError("results not found: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    files.emplace_back(path, parse_results_text(ss.str(), path));
  }
  Report r = build_report(files);
  detail::ensure_dir(out_dir);
  detail::write_text(out_dir + "/report.csv", report_csv(r));
  out << report_text(r) << "csv " << out_dir << "/report.csv\n";
  return r;
}

/// Maps an in-flight exception to the documented exit codes.
inline int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const GateError& e) {
    err << "gate failed: " << e.what() << '\n';
    return kExitGate;
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return kExitInput;
  } catch (const DatasetError& e) {
    err << e.what() << '\n';
    return kExitInput;
  } catch (const CheckpointError& e) {
    err << e.what() << '\n';
    return kExitInput;
  } catch (const ReportError& e) {
    err << e.what() << '\n';
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    err << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

/// `gencil gen-data|pretrain|run|report --config <file> [--key value ...] --seed <u64> --out <dir>`
inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"gencil: class-incremental learning with a generative captioning classifier"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::vector<std::string> report_paths;
  bool print_config = false;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file of key = value lines");
    sub->add_option("--seed", seed, "seed override");
    sub->add_option("--out", out_dir, "output directory override");
    sub->add_flag("--print-config", print_config, "print the effective config and exit");
    sub->allow_extras();
  };
  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic pretrain/train/test splits");
  CLI::App* pre = app.add_subcommand("pretrain", "pretrain encoder, decoder and projection; write a checkpoint");
  CLI::App* run = app.add_subcommand("run", "run the class-incremental experiment; write results JSON");
  CLI::App* rep = app.add_subcommand("report", "tabulate one or more results files");
  for (CLI::App* s : {gen, pre, run, rep}) common(s);
  rep->add_option("results", report_paths, "results JSON files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }
  CLI::App* sub = app.get_subcommands().front();

  try {
    Config cfg;
    if (!config_path.empty()) cfg = read_config(config_path);
    const auto extras = sub->remaining();
    for (std::size_t i = 0; i < extras.size(); ++i) {
      std::string key = extras[i], value;
      if (!key.starts_with("--")) throw ConfigError("unexpected argument \"" + key + "\"");
      key = key.substr(2);
      if (auto eq = key.find('='); eq != std::string::npos) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
      } else {
        if (i + 1 >= extras.size()) throw ConfigError("option --" + key + " needs a value");
        value = extras[++i];
      }
      std::replace(key.begin(), key.end(), '-', '_');
      set_config_value(cfg, key, value);
    }
    if (seed) cfg.set_seed(*seed);
    if (out_dir) cfg.out_dir = *out_dir;
    if (print_config) {
      out << render_config(cfg, true);
      return kExitOk;
    }
    if (sub == gen) cmd_gen_data(cfg, out);
    if (sub == pre) cmd_pretrain(cfg, out);
    if (sub == run) cmd_run(cfg, out);
    if (sub == rep) cmd_report(report_paths, cfg.out_dir, out);
    return kExitOk;
  } catch (...) {
    return exit_code_for_current_exception(err);
  }
}

}  // namespace gencil
