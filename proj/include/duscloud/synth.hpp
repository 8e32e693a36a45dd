#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "duscloud/geometry.hpp"

namespace duscloud {

enum class ShapeKind { kSphere, kBox, kCylinder, kTorus };
enum class AnomalyKind { kBulge, kDent, kCrack, kSpike };

ShapeKind parse_shape_kind(std::string_view name);
std::string_view to_string(ShapeKind kind);
AnomalyKind parse_anomaly_kind(std::string_view name);
std::string_view to_string(AnomalyKind kind);

// Surfaces at unit scale: sphere of radius 1; box with half extents
// (1, 0.7, 0.5); closed cylinder of radius 0.6 and height 1.6 along z;
// torus with radii 1 and 0.35 around z.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::kSphere;
  std::size_t points = 2048;
  double jitter = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// The region is the ball of `radius` around a cloud point picked by `seed`.
// Bulge, dent and spike displace region points along the surface normal at the
// region center; crack removes a slab of half-width `magnitude` through it.
struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::kBulge;
  double radius = 0.3;
  double magnitude = 0.12;
  std::uint64_t seed = 0;

  void validate() const;
};

PointCloud gen_normal(const ShapeSpec& spec);
PointCloud gen_anomalous(const PointCloud& normal, const AnomalySpec& spec);

// Displacement profile for bulge/dent (smooth) and spike (conical), r/R in [0, 1].
double bulge_falloff(double t);
double spike_falloff(double t);

struct CorpusSpec {
  std::vector<ShapeKind> categories = {ShapeKind::kSphere, ShapeKind::kBox, ShapeKind::kCylinder, ShapeKind::kTorus};
  std::size_t train_normal = 16;
  std::size_t test_normal = 10;
  std::size_t test_anomalous = 10;
  std::size_t points = 2048;
  double jitter = 0.002;
  std::vector<AnomalyKind> anomaly_kinds = {AnomalyKind::kBulge, AnomalyKind::kDent, AnomalyKind::kSpike};
  double radius_min = 0.25;
  double radius_max = 0.4;
  double magnitude_min = 0.25;
  double magnitude_max = 0.45;
  std::uint64_t seed = 2024;

  nlohmann::json to_json() const;
};

struct CorpusEntry {
  std::string id;
  std::string category;
  std::string split;    // "train" or "test"
  std::string anomaly;  // "none" or an anomaly kind
  std::filesystem::path path;  // relative to the corpus root
};

struct Corpus {
  std::filesystem::path root;
  std::vector<CorpusEntry> entries;

  std::vector<std::string> categories() const;
  std::vector<const CorpusEntry*> select(const std::string& category, const std::string& split) const;
  PointCloud load(const CorpusEntry& entry) const;
};

// Writes <root>/<category>/<split>/<id>.xyz (x y z label) and <root>/manifest.json.
Corpus write_corpus(const std::filesystem::path& root, const CorpusSpec& spec);
Corpus read_corpus(const std::filesystem::path& root);

}  // namespace duscloud
