#include "duscloud/synth.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "duscloud/cloud_io.hpp"
#include "duscloud/error.hpp"
#include "duscloud/kdtree.hpp"
#include "duscloud/rng.hpp"

namespace duscloud {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr Point3 kBoxHalf{1.0, 0.7, 0.5};
constexpr double kCylinderRadius = 0.6;
constexpr double kCylinderHeight = 1.6;
constexpr double kTorusMajor = 1.0;
constexpr double kTorusMinor = 0.35;
constexpr std::size_t kNormalNeighbors = 16;
constexpr std::size_t kCrackAdjacency = 8;

Point3 sample_sphere(Rng& rng) {
  for (;;) {
    const Point3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

Point3 sample_box(Rng& rng) {
  const double ax = kBoxHalf.y * kBoxHalf.z;
  const double ay = kBoxHalf.x * kBoxHalf.z;
  const double az = kBoxHalf.x * kBoxHalf.y;
  const double pick = rng.uniform() * (ax + ay + az);
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double u = rng.uniform(-1.0, 1.0);
  const double v = rng.uniform(-1.0, 1.0);
  if (pick < ax) return {sign * kBoxHalf.x, u * kBoxHalf.y, v * kBoxHalf.z};
  if (pick < ax + ay) return {u * kBoxHalf.x, sign * kBoxHalf.y, v * kBoxHalf.z};
  return {u * kBoxHalf.x, v * kBoxHalf.y, sign * kBoxHalf.z};
}

Point3 sample_cylinder(Rng& rng) {
  const double side = 2.0 * kPi * kCylinderRadius * kCylinderHeight;
  const double caps = 2.0 * kPi * kCylinderRadius * kCylinderRadius;
  const double half = 0.5 * kCylinderHeight;
  const double pick = rng.uniform() * (side + caps);
  const double theta = rng.uniform(0.0, 2.0 * kPi);
  if (pick < side) {
    return {kCylinderRadius * std::cos(theta), kCylinderRadius * std::sin(theta), rng.uniform(-half, half)};
  }
  const double r = kCylinderRadius * std::sqrt(rng.uniform());
  const double z = rng.uniform() < 0.5 ? -half : half;
  return {r * std::cos(theta), r * std::sin(theta), z};
}

// Area element of the torus is proportional to (R + r cos phi), so accept
// (theta, phi) with that relative probability.
Point3 sample_torus(Rng& rng) {
  for (;;) {
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    const double ring = kTorusMajor + kTorusMinor * std::cos(phi);
    if (rng.uniform() * (kTorusMajor + kTorusMinor) > ring) continue;
    return {ring * std::cos(theta), ring * std::sin(theta), kTorusMinor * std::sin(phi)};
  }
}

// Smallest-variance direction of the neighborhood, pointing away from the
// cloud centroid.
Point3 estimate_normal(const PointCloud& cloud, std::size_t at) {
  const std::size_t k = std::min(kNormalNeighbors, cloud.size());
  const auto nb = knn(cloud[at], cloud, k);
  Point3 mean;
  for (std::size_t j : nb) mean += cloud[j];
  mean = mean / static_cast<double>(nb.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (std::size_t j : nb) {
    const Point3 d = cloud[j] - mean;
    const Eigen::Vector3d v(d.x, d.y, d.z);
    cov += v * v.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  const Eigen::Vector3d e = solver.eigenvectors().col(0);
  Point3 n{e.x(), e.y(), e.z()};
  const double len = n.norm();
  if (!(len > 0.0)) return {0.0, 0.0, 1.0};
  n = n / len;
  if (n.dot(cloud[at] - cloud.centroid()) < 0.0) n = n * -1.0;
  return n;
}

PointCloud displaced(const PointCloud& normal, const AnomalySpec& spec, std::size_t center) {
  const Point3 c = normal[center];
  const Point3 n = estimate_normal(normal, center);
  const double sign = spec.kind == AnomalyKind::kDent ? -1.0 : 1.0;
  std::vector<Point3> points = normal.points();
  std::vector<std::uint8_t> labels(points.size(), 0);
  std::size_t touched = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double r = distance(points[i], c);
    if (r > spec.radius) continue;
    const double t = r / spec.radius;
    const double f = spec.kind == AnomalyKind::kSpike ? spike_falloff(t) : bulge_falloff(t);
    points[i] += n * (sign * spec.magnitude * f);
    labels[i] = 1;
    ++touched;
  }
  if (touched == 0) throw Error(ErrorKind::kEmptyRegion, "anomaly region contains no points");
  return PointCloud(std::move(points), std::move(labels), normal.id());
}

PointCloud cracked(const PointCloud& normal, const AnomalySpec& spec, std::size_t center, Rng& rng) {
  const Point3 c = normal[center];
  const Point3 n = estimate_normal(normal, center);
  // Slab normal: a random direction in the local tangent plane.
  Point3 u;
  for (;;) {
    const Point3 v = sample_sphere(rng);
    u = v - n * v.dot(n);
    if (u.norm() > 1e-6) break;
  }
  u = u / u.norm();
  std::vector<char> removed(normal.size(), 0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < normal.size(); ++i) {
    const Point3 d = normal[i] - c;
    if (d.norm() <= spec.radius && std::abs(d.dot(u)) <= spec.magnitude) {
      removed[i] = 1;
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorKind::kEmptyRegion, "crack removes no points");
  if (count == normal.size()) throw Error(ErrorKind::kEmptyRegion, "crack would remove every point");
  const KdTree tree(normal.points());
  const std::size_t k = std::min(kCrackAdjacency + 1, normal.size());
  std::vector<Point3> points;
  std::vector<std::uint8_t> labels;
  for (std::size_t i = 0; i < normal.size(); ++i) {
    if (removed[i]) continue;
    std::uint8_t adjacent = 0;
    for (const Neighbor& nb : tree.knn(normal[i], k)) {
      if (nb.index != i && removed[nb.index]) adjacent = 1;
    }
    points.push_back(normal[i]);
    labels.push_back(adjacent);
  }
  return PointCloud(std::move(points), std::move(labels), normal.id());
}

std::string zero_pad(std::size_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02zu", v);
  return buf;
}

}  // namespace

ShapeKind parse_shape_kind(std::string_view name) {
  if (name == "sphere") return ShapeKind::kSphere;
  if (name == "box") return ShapeKind::kBox;
  if (name == "cylinder") return ShapeKind::kCylinder;
  if (name == "torus") return ShapeKind::kTorus;
  throw Error(ErrorKind::kInvalidArgument, "unknown shape '" + std::string(name) + "'");
}

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kBox: return "box";
    case ShapeKind::kCylinder: return "cylinder";
    case ShapeKind::kTorus: return "torus";
  }
  return "sphere";
}

AnomalyKind parse_anomaly_kind(std::string_view name) {
  if (name == "bulge") return AnomalyKind::kBulge;
  if (name == "dent") return AnomalyKind::kDent;
  if (name == "crack") return AnomalyKind::kCrack;
  if (name == "spike") return AnomalyKind::kSpike;
  throw Error(ErrorKind::kInvalidArgument, "unknown anomaly kind '" + std::string(name) + "'");
}

std::string_view to_string(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::kBulge: return "bulge";
    case AnomalyKind::kDent: return "dent";
    case AnomalyKind::kCrack: return "crack";
    case AnomalyKind::kSpike: return "spike";
  }
  return "bulge";
}

void ShapeSpec::validate() const {
  if (points < 64) throw Error(ErrorKind::kInvalidArgument, "a synthetic shape needs at least 64 points");
  if (!(jitter >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "jitter must be non-negative");
}

void AnomalySpec::validate() const {
  if (!(magnitude > 0.0)) throw Error(ErrorKind::kInvalidArgument, "anomaly magnitude must be positive");
  if (!(radius > 0.0)) throw Error(ErrorKind::kInvalidArgument, "anomaly radius must be positive");
}

double bulge_falloff(double t) { return 1.0 - 0.5 * t * t; }
double spike_falloff(double t) { return 1.0 - 0.5 * t; }

PointCloud gen_normal(const ShapeSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<Point3> points;
  points.reserve(spec.points);
  for (std::size_t i = 0; i < spec.points; ++i) {
    Point3 p;
    switch (spec.kind) {
      case ShapeKind::kSphere: p = sample_sphere(rng); break;
      case ShapeKind::kBox: p = sample_box(rng); break;
      case ShapeKind::kCylinder: p = sample_cylinder(rng); break;
      case ShapeKind::kTorus: p = sample_torus(rng); break;
    }
    if (spec.jitter > 0.0) p = p + Point3{rng.normal(), rng.normal(), rng.normal()} * spec.jitter;
    points.push_back(p);
  }
  return PointCloud(std::move(points), std::vector<std::uint8_t>(spec.points, 0));
}

PointCloud gen_anomalous(const PointCloud& normal, const AnomalySpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t center = rng.index(normal.size());
  if (spec.kind == AnomalyKind::kCrack) return cracked(normal, spec, center, rng);
  return displaced(normal, spec, center);
}

nlohmann::json CorpusSpec::to_json() const {
  nlohmann::json cats = nlohmann::json::array();
  for (auto c : categories) cats.push_back(std::string(to_string(c)));
  nlohmann::json kinds = nlohmann::json::array();
  for (auto k : anomaly_kinds) kinds.push_back(std::string(to_string(k)));
  return {{"categories", cats},
          {"train_normal", train_normal},
          {"test_normal", test_normal},
          {"test_anomalous", test_anomalous},
          {"points", points},
          {"jitter", jitter},
          {"anomaly_kinds", kinds},
          {"radius", {radius_min, radius_max}},
          {"magnitude", {magnitude_min, magnitude_max}},
          {"seed", seed}};
}

std::vector<std::string> Corpus::categories() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (std::find(out.begin(), out.end(), e.category) == out.end()) out.push_back(e.category);
  }
  return out;
}

std::vector<const CorpusEntry*> Corpus::select(const std::string& category, const std::string& split) const {
  std::vector<const CorpusEntry*> out;
  for (const auto& e : entries) {
    if (e.category == category && e.split == split) out.push_back(&e);
  }
  std::sort(out.begin(), out.end(), [](const CorpusEntry* a, const CorpusEntry* b) { return a->id < b->id; });
  return out;
}

PointCloud Corpus::load(const CorpusEntry& entry) const {
  PointCloud cloud = read_cloud(root / entry.path);
  cloud.set_id(entry.id);
  return cloud;
}

Corpus write_corpus(const std::filesystem::path& root, const CorpusSpec& spec) {
  if (spec.categories.empty()) throw Error(ErrorKind::kInvalidArgument, "corpus needs at least one category");
  if (spec.test_anomalous > 0 && spec.anomaly_kinds.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "anomalous samples requested without anomaly kinds");
  }
  Corpus corpus{root, {}};
  nlohmann::json listing = nlohmann::json::array();
  for (std::size_t ci = 0; ci < spec.categories.size(); ++ci) {
    const ShapeKind shape = spec.categories[ci];
    const std::string cat(to_string(shape));
    auto emit = [&](const std::string& id, const std::string& split, const std::string& anomaly,
                    const PointCloud& cloud) {
      const std::filesystem::path rel = std::filesystem::path(cat) / split / (id + ".xyz");
      std::filesystem::create_directories((root / rel).parent_path());
      write_xyz(root / rel, cloud);
      corpus.entries.push_back({id, cat, split, anomaly, rel});
      listing.push_back({{"id", id}, {"category", cat}, {"split", split}, {"anomaly", anomaly}, {"path", rel.string()}});
    };
    auto shape_spec = [&](std::uint64_t stream, std::size_t j) {
      return ShapeSpec{shape, spec.points, spec.jitter, derive_seed(spec.seed, ci * 16 + stream, j)};
    };
    for (std::size_t j = 0; j < spec.train_normal; ++j) {
      emit(cat + "-train-" + zero_pad(j), "train", "none", gen_normal(shape_spec(0, j)));
    }
    for (std::size_t j = 0; j < spec.test_normal; ++j) {
      emit(cat + "-test-good-" + zero_pad(j), "test", "none", gen_normal(shape_spec(1, j)));
    }
    for (std::size_t j = 0; j < spec.test_anomalous; ++j) {
      const AnomalyKind kind = spec.anomaly_kinds[j % spec.anomaly_kinds.size()];
      Rng rng(derive_seed(spec.seed, ci * 16 + 3, j));
      AnomalySpec a;
      a.kind = kind;
      a.radius = rng.uniform(spec.radius_min, spec.radius_max);
      a.magnitude = rng.uniform(spec.magnitude_min, spec.magnitude_max);
      a.seed = rng.next_u64();
      const PointCloud parent = gen_normal(shape_spec(2, j));
      const std::string kind_name(to_string(kind));
      emit(cat + "-test-" + kind_name + "-" + zero_pad(j), "test", kind_name, gen_anomalous(parent, a));
    }
  }
  const nlohmann::json manifest = {
      {"format", "duscloud-corpus"}, {"version", 1}, {"spec", spec.to_json()}, {"entries", listing}};
  std::ofstream out(root / "manifest.json");
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + (root / "manifest.json").string());
  out << manifest.dump(2) << '\n';
  return corpus;
}

Corpus read_corpus(const std::filesystem::path& root) {
  const auto path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingCorpus, "no corpus manifest at " + path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParseError, path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "duscloud-corpus") {
    throw Error(ErrorKind::kParseError, path.string() + " is not a corpus manifest");
  }
  Corpus corpus{root, {}};
  for (const auto& e : manifest.at("entries")) {
    corpus.entries.push_back({e.at("id"), e.at("category"), e.at("split"), e.at("anomaly"),
                              std::filesystem::path(e.at("path").get<std::string>())});
  }
  return corpus;
}

}  // namespace duscloud
