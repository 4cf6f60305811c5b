// Command-line front end: synth, train, eval, experiment, flops, stats.
//
// Settings come from an optional key=value file (--config) and are
// overridden by key=value arguments on the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "scp/analysis.hpp"
#include "scp/errors.hpp"
#include "scp/trainer.hpp"

namespace fs = std::filesystem;
using namespace scp;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Settings {
  TrainConfig train;
  SynthSpec synth;
};

// File values first, then command-line overrides, in order.
Settings load_settings(const std::string& config_path, const std::vector<std::string>& overrides) {
  Settings s;
  auto apply = [&](const std::string& key, const std::string& value) {
    if (!apply_train_key(s.train, key, value) && !apply_synth_key(s.synth, key, value)) {
      throw ConfigError("unknown setting '" + key + "'");
    }
  };
  if (!config_path.empty()) {
    for (const auto& [key, value] : read_key_values(config_path)) apply(key, value);
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not key=value");
    apply(kv.substr(0, eq), kv.substr(eq + 1));
  }
  s.train.validate();
  s.synth.validate();
  return s;
}

Dataset dataset_from(const std::string& data_dir, const SynthSpec& spec) {
  if (data_dir.empty()) return generate(spec);
  Dataset d;
  d.spec = read_spec_file(fs::path(data_dir) / "spec.txt");
  d.train = load_split(fs::path(data_dir) / "train");
  d.val = load_split(fs::path(data_dir) / "val");
  d.test = load_split(fs::path(data_dir) / "test");
  return d;
}

std::vector<std::pair<std::string, LesionMetricsReport>> named_cases(const EvalResult& r) {
  std::vector<std::pair<std::string, LesionMetricsReport>> rows;
  for (std::size_t i = 0; i < r.cases.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "case_%05zu", i);
    rows.emplace_back(name, r.cases[i]);
  }
  return rows;
}

void print_mean(const LesionMetricsReport& m) {
  std::printf("dice=%.4f l_dice=%.4f l_tpr=%.4f l_ppv=%.4f l_f1=%.4f\n", m.dice, m.l_dice, m.l_tpr, m.l_ppv, m.l_f1);
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, comma - pos);
    if constexpr (std::is_same_v<T, HeadVariant>) {
      out.push_back(parse_head_variant(item));
    } else {
      out.push_back(static_cast<T>(parse_u64(key, item)));
    }
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatially covariant pixel classifiers for lesion segmentation"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "key=value settings file")->check(CLI::ExistingFile);
    sub->add_option("settings", overrides, "key=value overrides");
  };

  std::string out_dir, data_dir, model_dir, split = "test";
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  common(synth);
  synth->add_option("-o,--out", out_dir, "dataset directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train one model");
  common(train_cmd);
  train_cmd->add_option("-d,--data", data_dir, "dataset directory (default: generate from the synth settings)");
  train_cmd->add_option("-o,--out", out_dir, "checkpoint directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("-m,--model", model_dir, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("-d,--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("-s,--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("-o,--out", out_dir, "write per-case metrics CSV here");

  std::string heads = "scp,base", widths, seeds = "0,1,2";
  auto* exp_cmd = app.add_subcommand("experiment", "multi-seed comparison of heads and widths");
  common(exp_cmd);
  exp_cmd->add_option("-d,--data", data_dir, "dataset directory (default: generate from the synth settings)");
  exp_cmd->add_option("-o,--out", out_dir, "results directory")->required();
  exp_cmd->add_option("--heads", heads, "comma-separated head variants; the first is the reference")
      ->capture_default_str();
  exp_cmd->add_option("--widths", widths, "comma-separated n_c values (default: the n_c setting)");
  exp_cmd->add_option("--seeds", seeds, "comma-separated training seeds")->capture_default_str();

  std::size_t height = 160, width = 224;
  auto* flops_cmd = app.add_subcommand("flops", "analytic parameter, FLOP and memory counts");
  common(flops_cmd);
  flops_cmd->add_option("--height", height)->capture_default_str();
  flops_cmd->add_option("--width", width)->capture_default_str();

  auto* stats_cmd = app.add_subcommand("stats", "statistics maps of the generated classifier weights");
  stats_cmd->add_option("-m,--model", model_dir, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  stats_cmd->add_option("-o,--out", out_dir, "output directory")->required();
  std::size_t stats_height = 64, stats_width = 64;
  stats_cmd->add_option("--height", stats_height)->capture_default_str();
  stats_cmd->add_option("--width", stats_width)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) {
      const Settings s = load_settings(config_path, overrides);
      const Dataset d = generate(s.synth);
      write_dataset(out_dir, d);
      std::printf("wrote %zu/%zu/%zu samples to %s\n", d.train.size(), d.val.size(), d.test.size(), out_dir.c_str());
    } else if (*train_cmd) {
      const Settings s = load_settings(config_path, overrides);
      const Dataset d = dataset_from(data_dir, s.synth);
      TrainOptions opts;
      opts.on_epoch = [](std::size_t e, const RunRecord& r) {
        std::printf("epoch %zu lr %.3g loss %.4f val_dice %.4f\n", e + 1, r.lr.back(), r.train_loss.back(),
                    r.val_dice.back());
        std::fflush(stdout);
      };
      TrainResult r = train(s.train, d.train, d.val, opts);
      save_model(out_dir, r.model, s.train);
      write_history_csv(fs::path(out_dir) / "history.csv", r.record);
      const EvalResult test = evaluate(r.model, d.test, {s.train.connectivity, s.train.ldice_doubled});
      write_metrics_csv(fs::path(out_dir) / "test_metrics.csv", named_cases(test));
      std::printf("best epoch %zu, test ", r.record.best_epoch);
      print_mean(test.mean);
    } else if (*eval_cmd) {
      auto [cfg, model] = load_model(model_dir);
      const auto samples = load_split(fs::path(data_dir) / split);
      const EvalResult r = evaluate(model, samples, {cfg.connectivity, cfg.ldice_doubled});
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_metrics_csv(fs::path(out_dir) / (split + "_metrics.csv"), named_cases(r));
      }
      std::printf("%s (%zu cases): ", split.c_str(), r.cases.size());
      print_mean(r.mean);
    } else if (*exp_cmd) {
      const Settings s = load_settings(config_path, overrides);
      const Dataset d = dataset_from(data_dir, s.synth);
      if (widths.empty()) widths = std::to_string(s.train.model.backbone.n_c);
      std::vector<Arm> arms;
      for (auto h : parse_list<HeadVariant>("heads", heads))
        for (auto n : parse_list<std::size_t>("widths", widths)) arms.push_back({h, n});
      fs::create_directories(out_dir);
      const auto log = [](const std::string& line) {
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
      };
      const ExperimentResult r = run_experiment(s.train, arms, parse_list<std::uint64_t>("seeds", seeds), d, log);
      const std::string table = format_experiment(r);
      std::printf("%s", table.c_str());
      std::ofstream(fs::path(out_dir) / "summary.txt") << table;
      for (const auto& arm : r.arms) {
        std::string tag = std::string(to_string(arm.arm.head)) + "_" + std::to_string(arm.arm.n_c);
        for (const auto& run : arm.runs) {
          write_history_csv(fs::path(out_dir) / (tag + "_seed" + std::to_string(run.seed) + "_history.csv"), run);
        }
        EvalResult per_case{arm.per_case, arm.mean};
        write_metrics_csv(fs::path(out_dir) / (tag + "_test_metrics.csv"), named_cases(per_case));
      }
    } else if (*flops_cmd) {
      const Settings s = load_settings(config_path, overrides);
      const ComplexityReport r = count_complexity(s.train.model, height, width);
      std::printf("%s", format_report_text(r).c_str());
    } else if (*stats_cmd) {
      auto [cfg, model] = load_model(model_dir);
      const WeightStats st = weight_stats(model.generated_weights(stats_height, stats_width));
      export_stats_pgm(st, out_dir);
      std::printf("wrote %zux%zu statistics maps to %s\n", stats_height, stats_width, out_dir.c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
