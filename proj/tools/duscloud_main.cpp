#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "duscloud/config.hpp"
#include "duscloud/error.hpp"
#include "duscloud/pipeline.hpp"

namespace fs = std::filesystem;
using namespace duscloud;

namespace {

struct Common {
  std::string preset = "desk";
  std::string config_file;
  std::vector<std::string> sets;
  std::string out = "out";
  bool scarce = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--preset", c.preset, "Base preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--config", c.config_file, "key = value config file applied on top of the preset");
  cmd->add_option("--set", c.sets, "Override one key (key=value), repeatable; wins over --config");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_flag("--scarce", c.scarce, "Train on 4 normal clouds per category instead of 16");
}

RunConfig resolve(const Common& c) {
  RunConfig config = RunConfig::preset(c.preset);
  if (!c.config_file.empty()) config = load_config(c.config_file, config);
  if (c.scarce) config.set("data.train", "4");
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::kConfigError, "--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.validate();
  return config;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfigError:
    case ErrorKind::kParseError:
      return 2;
    case ErrorKind::kMissingCorpus:
    case ErrorKind::kMissingCheckpoint:
      return 3;
    case ErrorKind::kConfigMismatch:
      return 4;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"duscloud: point-cloud anomaly detection by down-up sampling"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  auto* train_down = app.add_subcommand("train-down", "Train one Down-Net per category");
  auto* train_up = app.add_subcommand("train-up", "Train one Up-Net per category on the frozen Down-Net");
  auto* infer = app.add_subcommand("infer", "Score a single cloud");
  auto* eval = app.add_subcommand("eval", "Score the test split and write metrics");
  auto* bench = app.add_subcommand("bench", "Measure inference throughput and training step cost");
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate loss/noise ablations");
  auto* run = app.add_subcommand("run", "synth, train-down, train-up and eval in one go");
  auto* show = app.add_subcommand("config", "Print the resolved configuration");
  for (auto* cmd : {synth, train_down, train_up, infer, eval, bench, ablate, run, show}) add_common(cmd, common);

  std::optional<std::string> category;
  for (auto* cmd : {train_down, train_up}) cmd->add_option("--category", category, "Restrict to one category");

  std::string infer_category;
  std::string infer_input;
  std::string infer_csv;
  infer->add_option("--category", infer_category, "Category whose models score the cloud")->required();
  infer->add_option("--input", infer_input, "Cloud file (x y z [label] per line)")->required()->check(CLI::ExistingFile);
  infer->add_option("--csv", infer_csv, "Score CSV path (default <out>/infer/<name>.csv)");

  std::size_t subsample = 1;
  double noise_std = 0.0;
  bool robustness = false;
  bool no_scores = false;
  eval->add_option("--subsample", subsample, "Keep 1/n of every test cloud")->check(CLI::PositiveNumber);
  eval->add_option("--noise-std", noise_std, "Add Gaussian noise of this std to every test point")
      ->check(CLI::NonNegativeNumber);
  eval->add_flag("--robustness", robustness, "Sweep subsampling 1/2..1/8 and noise 0.001..0.009");
  eval->add_flag("--no-scores", no_scores, "Skip per-cloud score CSVs");

  std::size_t repeats = 3;
  bench->add_option("--repeats", repeats, "Passes over the test split")->check(CLI::PositiveNumber);

  std::vector<std::string> variants = {"full", "no_cos", "no_emd", "no_noise"};
  ablate->add_option("--variants", variants,
                     "Variants among full, no_mse, no_cos, no_cd, no_rep, no_emd, no_noise");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig config = resolve(common);
    const OutLayout out{common.out, {}};
    std::ostream& log = std::cout;

    if (*synth) {
      cmd_synth(config, out, log);
    } else if (*train_down) {
      cmd_train_down(config, out, log, category);
    } else if (*train_up) {
      cmd_train_up(config, out, log, category);
    } else if (*infer) {
      const fs::path csv = infer_csv.empty() ? out.root / "infer" / (fs::path(infer_input).stem().string() + ".csv")
                                             : fs::path(infer_csv);
      const AnomalyReport r = cmd_infer(config, out, infer_category, infer_input, csv);
      std::printf("%s: object score %.6f (%zu reconstructed points), scores in %s\n", r.id.c_str(), r.object,
                  r.recon_size, csv.string().c_str());
    } else if (*eval) {
      if (robustness) {
        cmd_robustness(config, out, log, {2, 4, 6, 8}, {0.001, 0.003, 0.005, 0.007, 0.009});
      } else {
        cmd_eval(config, out, log, {subsample, noise_std}, !no_scores);
      }
    } else if (*bench) {
      cmd_bench(config, out, log, repeats);
    } else if (*ablate) {
      cmd_ablate(config, out, log, variants);
    } else if (*run) {
      cmd_synth(config, out, log);
      cmd_train_down(config, out, log);
      cmd_train_up(config, out, log);
      cmd_eval(config, out, log);
    } else if (*show) {
      std::cout << config.to_text();
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
