#include "duscloud/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "duscloud/error.hpp"

namespace duscloud {

PointCloud::PointCloud(std::vector<Point3> points, std::optional<std::vector<std::uint8_t>> labels, std::string id)
    : points_(std::move(points)), labels_(std::move(labels)), id_(std::move(id)) {
  if (points_.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "point cloud must contain at least one point");
  }
  for (const auto& p : points_) {
    if (!p.finite()) throw Error(ErrorKind::kInvalidArgument, "point cloud contains a non-finite coordinate");
  }
  if (labels_ && labels_->size() != points_.size()) {
    throw Error(ErrorKind::kShapeMismatch, "label count " + std::to_string(labels_->size()) +
                                               " does not match point count " + std::to_string(points_.size()));
  }
}

const std::vector<std::uint8_t>& PointCloud::labels() const {
  if (!labels_) throw Error(ErrorKind::kInvalidArgument, "cloud '" + id_ + "' has no labels");
  return *labels_;
}

Point3 PointCloud::centroid() const {
  Point3 sum;
  for (const auto& p : points_) sum += p;
  return sum / static_cast<double>(points_.size());
}

std::pair<PointCloud, NormalizationParams> normalize(const PointCloud& cloud) {
  const Point3 c = cloud.centroid();
  double scale = 0.0;
  for (const auto& p : cloud.points()) scale = std::max(scale, (p - c).norm());
  if (!(scale > 0.0)) throw Error(ErrorKind::kDegenerateCloud, "all points of '" + cloud.id() + "' coincide");

  std::vector<Point3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points()) out.push_back((p - c) / scale);
  return {PointCloud(std::move(out), cloud.label_mask(), cloud.id()), NormalizationParams{c, scale}};
}

Point3 denormalize(const Point3& p, const NormalizationParams& params) { return p * params.scale + params.centroid; }

std::vector<Point3> denormalize(std::span<const Point3> points, const NormalizationParams& params) {
  std::vector<Point3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(denormalize(p, params));
  return out;
}

PointCloud denormalize(const PointCloud& cloud, const NormalizationParams& params) {
  return PointCloud(denormalize(cloud.points(), params), cloud.label_mask(), cloud.id());
}

std::size_t fps_seed(std::span<const Point3> points) {
  if (points.empty()) throw Error(ErrorKind::kEmptySet, "fps_seed on empty point set");
  Point3 c;
  for (const auto& p : points) c += p;
  c = c / static_cast<double>(points.size());
  std::size_t best = 0;
  double best_d = -1.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d = squared_distance(points[i], c);
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

std::vector<std::size_t> fps(std::span<const Point3> points, std::size_t g, std::size_t seed_index) {
  const std::size_t n = points.size();
  if (g < 1 || g > n) {
    throw Error(ErrorKind::kOutOfRange, "fps: g=" + std::to_string(g) + " outside [1, " + std::to_string(n) + "]");
  }
  if (seed_index >= n) throw Error(ErrorKind::kOutOfRange, "fps: seed_index " + std::to_string(seed_index) + " >= N");

  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::vector<bool> picked(n, false);
  std::vector<std::size_t> out;
  out.reserve(g);
  std::size_t current = seed_index;
  for (std::size_t step = 0; step < g; ++step) {
    out.push_back(current);
    picked[current] = true;
    if (step + 1 == g) break;
    const Point3& c = points[current];
    std::size_t next = n;
    double next_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (picked[i]) continue;
      min_d[i] = std::min(min_d[i], squared_distance(points[i], c));
      if (min_d[i] > next_d) {
        next_d = min_d[i];
        next = i;
      }
    }
    current = next;
  }
  return out;
}

std::vector<std::size_t> fps(const PointCloud& cloud, std::size_t g, std::size_t seed_index) {
  return fps(std::span<const Point3>(cloud.points()), g, seed_index);
}

std::vector<std::size_t> knn(const Point3& query, std::span<const Point3> points, std::size_t k) {
  if (k > points.size()) {
    throw Error(ErrorKind::kOutOfRange, "knn: k=" + std::to_string(k) + " exceeds N=" + std::to_string(points.size()));
  }
  std::vector<std::pair<double, std::size_t>> keyed(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) keyed[i] = {squared_distance(query, points[i]), i};
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(k), keyed.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = keyed[i].second;
  return out;
}

std::vector<std::size_t> knn(const Point3& query, const PointCloud& cloud, std::size_t k) {
  return knn(query, std::span<const Point3>(cloud.points()), k);
}

PatchSet group(const PointCloud& cloud, std::size_t g, std::size_t k) {
  if (k < 1) throw Error(ErrorKind::kOutOfRange, "group: k must be >= 1");
  const auto centers = fps(cloud, g, fps_seed(cloud.points()));
  PatchSet out;
  out.source_id = cloud.id();
  out.patches.reserve(g);
  for (std::size_t ci : centers) {
    Patch patch;
    patch.center = cloud[ci];
    patch.center_index = ci;
    const auto nbrs = knn(patch.center, cloud, k);
    patch.neighbors.reserve(k);
    for (std::size_t j : nbrs) patch.neighbors.push_back(cloud[j]);
    out.patches.push_back(std::move(patch));
  }
  return out;
}

PatchSet scaled(const PatchSet& patches, double s) {
  PatchSet out = patches;
  for (Patch& p : out.patches) {
    p.center = p.center * s;
    for (Point3& q : p.neighbors) q = q * s;
  }
  return out;
}

double nn_distance(const Point3& p, std::span<const Point3> points) {
  if (points.empty()) throw Error(ErrorKind::kEmptySet, "nn_distance against an empty cloud");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : points) best = std::min(best, squared_distance(p, q));
  return std::sqrt(best);
}

double nn_distance(const Point3& p, const PointCloud& cloud) {
  return nn_distance(p, std::span<const Point3>(cloud.points()));
}

}  // namespace duscloud
