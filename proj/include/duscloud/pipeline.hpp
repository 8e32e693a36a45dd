#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "duscloud/config.hpp"
#include "duscloud/scoring.hpp"
#include "duscloud/synth.hpp"

namespace duscloud {

// Fixed layout under --out:
//   corpus/manifest.json, corpus/<category>/<split>/<id>.xyz
//   models/<category>/{down.ckpt, down_loss.csv, up.ckpt, up_loss.csv}
//   eval/<tag>/metrics.json, eval/<tag>/scores/<category>/<id>.csv
//   robustness/robustness.{csv,json}
//   ablation/<variant>/..., ablation/ablation.{json,md}
//   bench/bench.json
struct OutLayout {
  std::filesystem::path root;
  std::filesystem::path shared_corpus;  // overrides root/corpus when set

  std::filesystem::path corpus() const { return shared_corpus.empty() ? root / "corpus" : shared_corpus; }
  std::filesystem::path models(const std::string& category) const { return root / "models" / category; }
  std::filesystem::path down_ckpt(const std::string& category) const { return models(category) / "down.ckpt"; }
  std::filesystem::path down_log(const std::string& category) const { return models(category) / "down_loss.csv"; }
  std::filesystem::path up_ckpt(const std::string& category) const { return models(category) / "up.ckpt"; }
  std::filesystem::path up_log(const std::string& category) const { return models(category) / "up_loss.csv"; }
  std::filesystem::path eval(const std::string& tag) const { return root / "eval" / tag; }
};

// Test-time corruption for the robustness protocol.
struct Perturbation {
  std::size_t subsample = 1;  // keep floor(N / subsample) points
  double noise_std = 0.0;     // extra Gaussian noise on every coordinate

  std::string tag() const;
};

PointCloud perturb(const PointCloud& cloud, const Perturbation& p, std::uint64_t seed);

// Worker count for parallel sections: DUSCLOUD_THREADS if set, else the
// hardware concurrency, never more than `jobs`.
std::size_t worker_count(std::size_t jobs);

Corpus cmd_synth(const RunConfig& config, const OutLayout& out, std::ostream& log);

// Both train commands work per category (optionally a single one).
void cmd_train_down(const RunConfig& config, const OutLayout& out, std::ostream& log,
                    const std::optional<std::string>& category = std::nullopt);
void cmd_train_up(const RunConfig& config, const OutLayout& out, std::ostream& log,
                  const std::optional<std::string>& category = std::nullopt);

struct CategoryMetrics {
  std::string category;
  MetricSet metrics;
};

struct EvalResult {
  Perturbation perturbation;
  std::vector<CategoryMetrics> categories;
  MetricSet mean;  // unweighted mean over categories
  std::size_t clouds = 0;
  double infer_seconds = 0.0;
  double throughput = 0.0;  // clouds per second

  nlohmann::json to_json() const;
};

EvalResult cmd_eval(const RunConfig& config, const OutLayout& out, std::ostream& log, const Perturbation& p = {},
                    bool write_scores = true);

struct RobustnessRow {
  std::string kind;  // "clean", "subsample" or "noise"
  std::string level;
  EvalResult result;
};

std::vector<RobustnessRow> cmd_robustness(const RunConfig& config, const OutLayout& out, std::ostream& log,
                                          const std::vector<std::size_t>& subsample_levels,
                                          const std::vector<double>& noise_levels);

// Single-cloud inference for `infer`: report plus score CSV.
AnomalyReport cmd_infer(const RunConfig& config, const OutLayout& out, const std::string& category,
                        const std::filesystem::path& input, const std::filesystem::path& csv);

struct BenchResult {
  std::size_t clouds = 0;
  double seconds = 0.0;
  double throughput = 0.0;
  double train_step_down_ms = 0.0;
  double train_step_up_ms = 0.0;

  nlohmann::json to_json() const;
};

BenchResult cmd_bench(const RunConfig& config, const OutLayout& out, std::ostream& log, std::size_t repeats);

struct AblationVariant {
  std::string name;
  RunConfig config;
};

// The default variants: full, no_cos, no_emd, no_noise (no_mse, no_cd and
// no_rep on request).
std::vector<AblationVariant> ablation_variants(const RunConfig& base, const std::vector<std::string>& names);

struct AblationRow {
  std::string name;
  EvalResult result;
  double o_auroc_drop = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  // Removing EMD and removing Noise-Gen each hurt O-AUROC more than removing COS.
  bool ordering_holds = false;

  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

AblationReport cmd_ablate(const RunConfig& base, const OutLayout& out, std::ostream& log,
                          const std::vector<std::string>& variants);

}  // namespace duscloud
