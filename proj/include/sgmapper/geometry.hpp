// sgmapper - point cloud primitives: bounding boxes, dynamic voxel
// downsampling, exact nearest-neighbor indexing and the dynamic NN ratio.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace sgmapper {

using Vec3 = Eigen::Vector3d;

/// World-frame point cloud with optional per-point RGB colors in [0,1].
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> colors;  // empty, or one entry per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_colors() const { return !colors.empty(); }
};

/// Axis-aligned bounding box, min <= max componentwise.
struct Aabb {
  Vec3 min{0, 0, 0};
  Vec3 max{0, 0, 0};

  Vec3 size() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

inline void require_non_empty(const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("empty cloud");
}

/// Tightest axis-aligned box containing all points.
inline Aabb bbox(const PointCloud& cloud) {
  require_non_empty(cloud);
  Aabb box{cloud.points.front(), cloud.points.front()};
  for (const Vec3& p : cloud.points) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

/// Euclidean norm of the box size vector (3D diagonal length).
inline double bbox_diagonal(const Aabb& box) { return (box.max - box.min).norm(); }

/// Squared distance from a point to the box (0 inside).
inline double bbox_distance_sq(const Aabb& box, const Vec3& p) {
  const Vec3 d = (box.min - p).cwiseMax(p - box.max).cwiseMax(0.0);
  return d.squaredNorm();
}

/// Smallest gap between two boxes (0 when they touch or overlap).
inline double bbox_gap(const Aabb& a, const Aabb& b) {
  const Vec3 d = (a.min - b.max).cwiseMax(b.min - a.max).cwiseMax(0.0);
  return d.norm();
}

/// Voxel size adapted to object scale: base * sqrt(bbox diagonal).
/// Densifies small objects and sparsifies large ones relative to a
/// fixed-size grid at `base`.
inline double dynamic_voxel_size(const PointCloud& cloud, double base) {
  if (base <= 0.0) throw std::invalid_argument("base voxel size must be positive");
  return base * std::sqrt(bbox_diagonal(bbox(cloud)));
}

namespace detail {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
  bool operator<(const VoxelKey& o) const {
    if (x != o.x) return x < o.x;
    if (y != o.y) return y < o.y;
    return z < o.z;
  }
};

inline VoxelKey voxel_key(const Vec3& p, double voxel) {
  return VoxelKey{static_cast<std::int64_t>(std::floor(p.x() / voxel)),
                  static_cast<std::int64_t>(std::floor(p.y() / voxel)),
                  static_cast<std::int64_t>(std::floor(p.z() / voxel))};
}

}  // namespace detail

/// Grid downsample keeping one point per occupied cell, placed at the cell
/// centroid. Cells are floor(coord/voxel) on each axis with world origin.
/// Output cells are emitted in lexicographic key order so results are
/// deterministic and serialization-stable.
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  if (voxel <= 0.0) throw std::invalid_argument("voxel size must be positive");
  struct Accum {
    Vec3 point_sum{0, 0, 0};
    Vec3 color_sum{0, 0, 0};
    std::size_t count = 0;
  };
  std::vector<std::pair<detail::VoxelKey, Accum>> cells;
  cells.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i)
    cells.emplace_back(detail::voxel_key(cloud.points[i], voxel), Accum{});
  // Sort by key, then accumulate runs; keeps per-cell averaging in input order.
  std::vector<std::size_t> order(cloud.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cells[a].first < cells[b].first;
  });

  PointCloud out;
  const bool with_colors = cloud.has_colors();
  std::size_t i = 0;
  while (i < order.size()) {
    const detail::VoxelKey key = cells[order[i]].first;
    Vec3 psum{0, 0, 0}, csum{0, 0, 0};
    std::size_t n = 0;
    for (; i < order.size() && cells[order[i]].first == key; ++i, ++n) {
      psum += cloud.points[order[i]];
      if (with_colors) csum += cloud.colors[order[i]];
    }
    out.points.push_back(psum / static_cast<double>(n));
    if (with_colors) out.colors.push_back(csum / static_cast<double>(n));
  }
  return out;
}

/// Distance threshold for the dynamic NN ratio between two clouds:
/// base * (sqrt(diag(a)) + sqrt(diag(b))) / 2. Symmetric in (a, b).
inline double dynamic_nn_threshold(const PointCloud& a, const PointCloud& b, double base) {
  if (base <= 0.0) throw std::invalid_argument("base voxel size must be positive");
  const double da = bbox_diagonal(bbox(a));
  const double db = bbox_diagonal(bbox(b));
  return base * (std::sqrt(da) + std::sqrt(db)) / 2.0;
}

/// Arithmetic mean of the points.
inline Vec3 centroid(const PointCloud& cloud) {
  require_non_empty(cloud);
  Vec3 sum{0, 0, 0};
  for (const Vec3& p : cloud.points) sum += p;
  return sum / static_cast<double>(cloud.size());
}

// ============================================================================
// SpatialIndex - exact nearest-neighbor kd-tree
// ============================================================================

/// kd-tree over one point cloud. Queries are exact (no approximation) and
/// break distance ties toward the lowest point index, so results match a
/// brute-force scan bitwise. Construction is single-threaded; a completed
/// index is safe to share across reader threads.
class SpatialIndex {
 public:
  explicit SpatialIndex(const PointCloud& cloud) : pts_(cloud.points) {
    if (pts_.empty()) throw std::invalid_argument("empty cloud");
    idx_.resize(pts_.size());
    std::iota(idx_.begin(), idx_.end(), std::size_t{0});
    nodes_.reserve(2 * pts_.size());
    root_ = build(0, pts_.size());
  }

  std::size_t size() const { return pts_.size(); }

  /// Index and squared distance of the nearest point; ties by lowest index.
  std::pair<std::size_t, double> nearest(const Vec3& q) const {
    std::size_t best_idx = idx_[0];
    double best_d2 = (pts_[best_idx] - q).squaredNorm();
    search_nearest(root_, q, best_idx, best_d2);
    return {best_idx, best_d2};
  }

  /// True when some point lies within `radius` of q (inclusive).
  bool has_neighbor_within(const Vec3& q, double radius) const {
    if (radius < 0.0) return false;
    return search_within(root_, q, radius * radius);
  }

 private:
  struct Node {
    int axis = -1;          // -1 marks a leaf
    double split = 0.0;
    std::int32_t left = -1, right = -1;
    std::uint32_t begin = 0, end = 0;  // leaf range into idx_
  };

  static constexpr std::size_t kLeafSize = 16;

  std::int32_t build(std::size_t begin, std::size_t end) {
    Node node;
    if (end - begin <= kLeafSize) {
      node.begin = static_cast<std::uint32_t>(begin);
      node.end = static_cast<std::uint32_t>(end);
      nodes_.push_back(node);
      return static_cast<std::int32_t>(nodes_.size() - 1);
    }
    Vec3 lo = pts_[idx_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(pts_[idx_[i]]);
      hi = hi.cwiseMax(pts_[idx_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(idx_.begin() + begin, idx_.begin() + mid, idx_.begin() + end,
                     [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
    node.axis = axis;
    node.split = pts_[idx_[mid]][axis];
    const std::int32_t self = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(node);
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  void search_nearest(std::int32_t ni, const Vec3& q, std::size_t& best_idx,
                      double& best_d2) const {
    const Node& node = nodes_[ni];
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::size_t pi = idx_[i];
        const double d2 = (pts_[pi] - q).squaredNorm();
        if (d2 < best_d2 || (d2 == best_d2 && pi < best_idx)) {
          best_d2 = d2;
          best_idx = pi;
        }
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const std::int32_t near = diff < 0.0 ? node.left : node.right;
    const std::int32_t far = diff < 0.0 ? node.right : node.left;
    search_nearest(near, q, best_idx, best_d2);
    // <= keeps equal-distance candidates reachable for the index tie-break.
    if (diff * diff <= best_d2) search_nearest(far, q, best_idx, best_d2);
  }

  bool search_within(std::int32_t ni, const Vec3& q, double r2) const {
    const Node& node = nodes_[ni];
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i)
        if ((pts_[idx_[i]] - q).squaredNorm() <= r2) return true;
      return false;
    }
    const double diff = q[node.axis] - node.split;
    const std::int32_t near = diff < 0.0 ? node.left : node.right;
    const std::int32_t far = diff < 0.0 ? node.right : node.left;
    if (search_within(near, q, r2)) return true;
    if (diff * diff <= r2) return search_within(far, q, r2);
    return false;
  }

  std::vector<Vec3> pts_;
  std::vector<std::size_t> idx_;
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

/// Fraction of query points with a neighbor in the indexed target within
/// `threshold` (inclusive).
inline double nn_ratio(const PointCloud& query, const SpatialIndex& target, double threshold) {
  require_non_empty(query);
  if (threshold < 0.0) throw std::invalid_argument("threshold must be non-negative");
  std::size_t hits = 0;
  for (const Vec3& q : query.points)
    if (target.has_neighbor_within(q, threshold)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(query.size());
}

inline double nn_ratio(const PointCloud& query, const PointCloud& target, double threshold) {
  require_non_empty(target);
  return nn_ratio(query, SpatialIndex(target), threshold);
}

}  // namespace sgmapper
