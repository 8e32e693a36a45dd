#include "duscloud/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "duscloud/error.hpp"

namespace duscloud {
namespace {

double coord(const Point3& p, int axis) { return axis == 0 ? p.x : (axis == 1 ? p.y : p.z); }

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.squared_distance < b.squared_distance ||
         (a.squared_distance == b.squared_distance && a.index < b.index);
}

}  // namespace

KdTree::KdTree(std::span<const Point3> points, std::size_t leaf_size)
    : points_(points.begin(), points.end()), order_(points.size()), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
  if (points_.empty()) throw Error(ErrorKind::kEmptySet, "KdTree over an empty point set");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  nodes_.reserve(2 * points_.size() / leaf_size_ + 1);
  build(0, points_.size());
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  Point3 lo = points_[order_[begin]];
  Point3 hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    const Point3& p = points_[order_[i]];
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  const Point3 extent = hi - lo;
  int axis = 0;
  if (extent.y > extent.x) axis = 1;
  if (extent.z > coord(extent, axis)) axis = 2;
  if (coord(extent, axis) == 0.0) return id;  // all coincident: keep as an oversized leaf

  const std::size_t mid = begin + (end - begin) / 2;
  auto first = order_.begin() + static_cast<std::ptrdiff_t>(begin);
  std::nth_element(first, order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                     return coord(points_[a], axis) < coord(points_[b], axis);
                   });
  const double split = coord(points_[order_[mid]], axis);
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::size_t node_id, const Point3& query, std::size_t k, std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const std::size_t idx = order_[i];
      const Neighbor cand{idx, squared_distance(query, points_[idx])};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }
  const double diff = coord(query, node.axis) - node.split;
  const std::size_t near = diff < 0.0 ? node.left : node.right;
  const std::size_t far = diff < 0.0 ? node.right : node.left;
  search(near, query, k, heap);
  if (heap.size() < k || diff * diff <= heap.front().squared_distance) search(far, query, k, heap);
}

std::vector<Neighbor> KdTree::knn(const Point3& query, std::size_t k) const {
  if (k > points_.size()) {
    throw Error(ErrorKind::kOutOfRange, "KdTree::knn: k=" + std::to_string(k) + " exceeds N=" +
                                            std::to_string(points_.size()));
  }
  std::vector<Neighbor> heap;
  if (k == 0) return heap;
  heap.reserve(k);
  search(0, query, k, heap);
  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

Neighbor KdTree::nearest(const Point3& query) const { return knn(query, 1).front(); }

std::vector<std::size_t> nearest_indices(std::span<const Point3> query, std::span<const Point3> set) {
  std::vector<std::size_t> out(query.size());
  if (query.size() * set.size() <= 1u << 18) {
    for (std::size_t i = 0; i < query.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < set.size(); ++j) {
        const double d = squared_distance(query[i], set[j]);
        if (d < best) {
          best = d;
          out[i] = j;
        }
      }
    }
    return out;
  }
  const KdTree tree(set);
  for (std::size_t i = 0; i < query.size(); ++i) out[i] = tree.nearest(query[i]).index;
  return out;
}

}  // namespace duscloud
