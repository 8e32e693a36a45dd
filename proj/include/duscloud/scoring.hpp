#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "duscloud/down_net.hpp"
#include "duscloud/geometry.hpp"
#include "duscloud/noise.hpp"
#include "duscloud/up_net.hpp"

namespace duscloud {

// s_i: distance from each input point to its nearest reconstruction point.
std::vector<double> score_points(const PointCloud& input, const PointCloud& recon);

// s~_i = (1 - exp(d1) / (exp(d1) + exp(d2) + exp(d3))) * s_i with d1 <= d2 <= d3
// the distances to the three nearest reconstruction points.
std::vector<double> normalize_scores(const PointCloud& input, const PointCloud& recon, std::span<const double> raw);

// The reweighting factor on its own, for d1 <= d2 <= d3.
double softmin_factor(double d1, double d2, double d3);

double object_score(std::span<const double> normalized);

// Mann-Whitney statistic with midranks for ties.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Step-wise area under the interpolated precision-recall curve: thresholds
// are the distinct scores in descending order, and each recall increment is
// weighted by the best precision reachable at that recall or beyond.
double aupr(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct AnomalyReport {
  std::string id;
  std::vector<double> raw;
  std::vector<double> normalized;
  double object = 0.0;
  std::size_t recon_size = 0;
  std::vector<Point3> recon;  // in input coordinates
};

struct InferOptions {
  NoiseParams noise;
  bool inject_noise = true;
};

// Seed of the inference-time noise for a given cloud id.
std::uint64_t inference_seed(std::uint64_t base, const std::string& id);

// normalize -> group -> inject -> Down-Net -> Up-Net -> denormalize -> score.
AnomalyReport infer(const DownNetModel& down, const UpNetModel& up, const InferOptions& options,
                    const PointCloud& cloud);

struct MetricSet {
  double o_auroc = 0.0;
  double o_aupr = 0.0;
  std::optional<double> p_auroc;
  std::optional<double> p_aupr;
  std::size_t samples = 0;
  std::size_t anomalous = 0;

  nlohmann::json to_json() const;
};

struct LabeledReport {
  const AnomalyReport* report;
  std::uint8_t object_label;
  // Per-point labels aligned with the report's input, if known.
  const std::vector<std::uint8_t>* point_labels;
};

// Object metrics from S per sample; point metrics pooled over every point of
// every sample that has point labels (omitted if none has, or if the pool is
// single-class).
MetricSet evaluate(std::span<const LabeledReport> samples);

void write_score_csv(const std::filesystem::path& path, const AnomalyReport& report,
                     const std::vector<std::uint8_t>* labels);

}  // namespace duscloud
