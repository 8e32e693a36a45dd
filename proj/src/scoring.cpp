#include "duscloud/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "duscloud/error.hpp"
#include "duscloud/kdtree.hpp"

namespace duscloud {
namespace {

void require_labels(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorKind::kShapeMismatch, std::to_string(scores.size()) + " scores vs " +
                                               std::to_string(labels.size()) + " labels");
  }
}

// Sample indices sorted by descending score (ties by index, which never
// affects the results below because ties are consumed as one block).
std::vector<std::size_t> by_descending_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// FNV-1a; std::hash is not stable across standard libraries.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::vector<double> score_points(const PointCloud& input, const PointCloud& recon) {
  if (recon.size() == 0) throw Error(ErrorKind::kEmptyReconstruction, "empty reconstruction");
  const auto nearest = nearest_indices(input.points(), recon.points());
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = distance(input[i], recon[nearest[i]]);
  return out;
}

double softmin_factor(double d1, double d2, double d3) {
  // exp(d1) / sum exp(dj), rescaled by exp(-d1) so large distances cannot overflow.
  return 1.0 - 1.0 / (1.0 + std::exp(d2 - d1) + std::exp(d3 - d1));
}

std::vector<double> normalize_scores(const PointCloud& input, const PointCloud& recon, std::span<const double> raw) {
  if (recon.size() < 3) {
    throw Error(ErrorKind::kTooFewPoints, "score normalization needs 3 reconstruction points, got " +
                                              std::to_string(recon.size()));
  }
  if (raw.size() != input.size()) throw Error(ErrorKind::kShapeMismatch, "raw scores do not match the input");
  const KdTree tree(recon.points());
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const auto nb = tree.knn(input[i], 3);
    out[i] = softmin_factor(std::sqrt(nb[0].squared_distance), std::sqrt(nb[1].squared_distance),
                            std::sqrt(nb[2].squared_distance)) *
             raw[i];
  }
  return out;
}

double object_score(std::span<const double> normalized) {
  if (normalized.empty()) throw Error(ErrorKind::kEmptyScores, "object score of an empty score set");
  return *std::max_element(normalized.begin(), normalized.end());
}

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  require_labels(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]]) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) throw Error(ErrorKind::kSingleClass, "AUROC needs both classes");
  const double np = static_cast<double>(positives);
  const double nn = static_cast<double>(negatives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double aupr(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  require_labels(scores, labels);
  const std::size_t positives = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  if (positives == 0) throw Error(ErrorKind::kNoPositives, "AUPR needs at least one positive");
  const auto order = by_descending_score(scores);
  std::vector<double> recall;
  std::vector<double> precision;
  std::size_t tp = 0;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] != 0;
      ++j;
    }
    seen = j;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
    i = j;
  }
  for (std::size_t i = precision.size() - 1; i-- > 0;) precision[i] = std::max(precision[i], precision[i + 1]);
  double area = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    area += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return area;
}

std::uint64_t inference_seed(std::uint64_t base, const std::string& id) { return derive_seed(base, fnv1a(id), 1); }

AnomalyReport infer(const DownNetModel& down, const UpNetModel& up, const InferOptions& options,
                    const PointCloud& cloud) {
  const DownNetConfig& dc = down.config();
  if (cloud.size() < dc.groups) {
    throw Error(ErrorKind::kTooFewPoints, "cloud '" + cloud.id() + "' has " + std::to_string(cloud.size()) +
                                              " points, fewer than G=" + std::to_string(dc.groups));
  }
  const auto [normalized, params] = normalize(cloud);
  const PatchSet patches = group(normalized, dc.groups, dc.neighbors);
  NoiseParams noise = options.noise;
  noise.seed = inference_seed(options.noise.seed, cloud.id());
  const NoisyPatchSet noisy = options.inject_noise ? inject(patches, noise) : without_noise(patches);
  const CenterPrediction centers = down_forward(down, noisy);
  const std::vector<Point3> dense = up_forward(up, centers.predicted);
  const PointCloud recon(denormalize(dense, params));

  AnomalyReport report;
  report.id = cloud.id();
  report.raw = score_points(cloud, recon);
  report.normalized = normalize_scores(cloud, recon, report.raw);
  report.object = object_score(report.normalized);
  report.recon_size = recon.size();
  report.recon = recon.points();
  return report;
}

nlohmann::json MetricSet::to_json() const {
  nlohmann::json j = {{"o_auroc", o_auroc}, {"o_aupr", o_aupr}, {"samples", samples}, {"anomalous", anomalous}};
  if (p_auroc) j["p_auroc"] = *p_auroc;
  if (p_aupr) j["p_aupr"] = *p_aupr;
  return j;
}

MetricSet evaluate(std::span<const LabeledReport> samples) {
  MetricSet m;
  std::vector<double> objects;
  std::vector<std::uint8_t> object_labels;
  std::vector<double> points;
  std::vector<std::uint8_t> point_labels;
  for (const auto& s : samples) {
    objects.push_back(s.report->object);
    object_labels.push_back(s.object_label);
    if (s.point_labels) {
      require_labels(s.report->normalized, *s.point_labels);
      points.insert(points.end(), s.report->normalized.begin(), s.report->normalized.end());
      point_labels.insert(point_labels.end(), s.point_labels->begin(), s.point_labels->end());
    }
  }
  m.samples = objects.size();
  m.anomalous = static_cast<std::size_t>(std::count(object_labels.begin(), object_labels.end(), 1));
  m.o_auroc = auroc(objects, object_labels);
  m.o_aupr = aupr(objects, object_labels);
  const auto point_positives = std::count(point_labels.begin(), point_labels.end(), 1);
  if (point_positives > 0 && static_cast<std::size_t>(point_positives) < point_labels.size()) {
    m.p_auroc = auroc(points, point_labels);
    m.p_aupr = aupr(points, point_labels);
  }
  return m;
}

void write_score_csv(const std::filesystem::path& path, const AnomalyReport& report,
                     const std::vector<std::uint8_t>* labels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  out << "point_index,s,s_tilde,label\n";
  char buf[96];
  for (std::size_t i = 0; i < report.raw.size(); ++i) {
    if (labels) {
      std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%d\n", i, report.raw[i], report.normalized[i],
                    static_cast<int>((*labels)[i]));
    } else {
      std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,\n", i, report.raw[i], report.normalized[i]);
    }
    out << buf;
  }
}

}  // namespace duscloud
