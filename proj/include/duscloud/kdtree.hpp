#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "duscloud/geometry.hpp"

namespace duscloud {

struct Neighbor {
  std::size_t index = 0;
  double squared_distance = 0.0;
};

// Static 3-d tree over a copy of the input points. Query results are identical to a
// full scan ordered by (squared distance, index): subtrees are only pruned when
// they are strictly farther than the current k-th candidate.
class KdTree {
 public:
  explicit KdTree(std::span<const Point3> points, std::size_t leaf_size = 8);

  std::size_t size() const { return points_.size(); }

  std::vector<Neighbor> knn(const Point3& query, std::size_t k) const;
  Neighbor nearest(const Point3& query) const;

 private:
  struct Node {
    std::size_t begin = 0;
    std::size_t end = 0;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end);
  void search(std::size_t node, const Point3& query, std::size_t k, std::vector<Neighbor>& heap) const;

  std::vector<Point3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

// Index of the nearest point of `set` for each query point, lowest index on
// ties. Small problems are scanned directly, larger ones go through a KdTree.
std::vector<std::size_t> nearest_indices(std::span<const Point3> query, std::span<const Point3> set);

}  // namespace duscloud
