#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace duscloud {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Point3 operator+(const Point3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Point3 operator-(const Point3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Point3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Point3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr Point3& operator+=(const Point3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr bool operator==(const Point3&) const = default;

  constexpr double dot(const Point3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

// Every distance comparison in the library goes through this one expression so
// that accelerated searches and brute-force scans agree bit for bit.
constexpr double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

inline double distance(const Point3& a, const Point3& b) { return std::sqrt(squared_distance(a, b)); }

// An ordered, non-empty set of finite points with an optional 0/1 anomaly mask.
class PointCloud {
 public:
  explicit PointCloud(std::vector<Point3> points, std::optional<std::vector<std::uint8_t>> labels = std::nullopt,
             std::string id = {});

  std::size_t size() const { return points_.size(); }
  const std::vector<Point3>& points() const { return points_; }
  const Point3& operator[](std::size_t i) const { return points_[i]; }

  bool has_labels() const { return labels_.has_value(); }
  const std::vector<std::uint8_t>& labels() const;
  const std::optional<std::vector<std::uint8_t>>& label_mask() const { return labels_; }

  const std::string& id() const { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }

  Point3 centroid() const;

 private:
  std::vector<Point3> points_;
  std::optional<std::vector<std::uint8_t>> labels_;
  std::string id_;
};

struct NormalizationParams {
  Point3 centroid;
  double scale = 1.0;
};

struct Patch {
  Point3 center;
  std::vector<Point3> neighbors;
  std::size_t center_index = 0;
};

struct PatchSet {
  std::vector<Patch> patches;
  std::string source_id;

  std::size_t group_count() const { return patches.size(); }
  std::size_t neighbor_count() const { return patches.empty() ? 0 : patches.front().neighbors.size(); }
};

// Maps the cloud to centroid-at-origin with unit maximum norm.
std::pair<PointCloud, NormalizationParams> normalize(const PointCloud& cloud);
Point3 denormalize(const Point3& p, const NormalizationParams& params);
std::vector<Point3> denormalize(std::span<const Point3> points, const NormalizationParams& params);
PointCloud denormalize(const PointCloud& cloud, const NormalizationParams& params);

// Index of the point farthest from the centroid (lowest index on ties). This is
// the deterministic first pick used by group().
std::size_t fps_seed(std::span<const Point3> points);

// Greedy farthest-point sampling. Returns g distinct indices in pick order.
std::vector<std::size_t> fps(std::span<const Point3> points, std::size_t g, std::size_t seed_index);
std::vector<std::size_t> fps(const PointCloud& cloud, std::size_t g, std::size_t seed_index);

// k nearest points by full scan, ascending by distance, lower index first on ties.
std::vector<std::size_t> knn(const Point3& query, std::span<const Point3> points, std::size_t k);
std::vector<std::size_t> knn(const Point3& query, const PointCloud& cloud, std::size_t k);

// g FPS centers (seeded by fps_seed), each with its k nearest neighbors.
PatchSet group(const PointCloud& cloud, std::size_t g, std::size_t k);

// Every center and neighbor multiplied by s (about the origin).
PatchSet scaled(const PatchSet& patches, double s);

double nn_distance(const Point3& p, std::span<const Point3> points);
double nn_distance(const Point3& p, const PointCloud& cloud);

}  // namespace duscloud
