// Shared test helpers: seeded random clouds, brute-force oracles kept
// independent of the library implementations they check, and a scratch
// directory guard.

#pragma once

#include <sgmapper/geometry.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <tuple>
#include <vector>

namespace testsup {

using sgmapper::PointCloud;
using sgmapper::Vec3;

inline PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, const Vec3& lo, const Vec3& hi,
                               bool with_colors = false) {
  std::uniform_real_distribution<double> ux(lo.x(), hi.x()), uy(lo.y(), hi.y()), uz(lo.z(), hi.z());
  std::uniform_real_distribution<double> uc(0.0, 1.0);
  PointCloud cloud;
  for (std::size_t i = 0; i < n; ++i) {
    cloud.points.emplace_back(ux(rng), uy(rng), uz(rng));
    if (with_colors) cloud.colors.emplace_back(uc(rng), uc(rng), uc(rng));
  }
  return cloud;
}

// --- brute-force oracles ----------------------------------------------------

inline double oracle_min_dist_sq(const Vec3& q, const PointCloud& target) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& t : target.points) best = std::min(best, (q - t).squaredNorm());
  return best;
}

inline std::size_t oracle_nearest_index(const Vec3& q, const PointCloud& target) {
  std::size_t best = 0;
  double best_d2 = (q - target.points[0]).squaredNorm();
  for (std::size_t i = 1; i < target.size(); ++i) {
    const double d2 = (q - target.points[i]).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

inline double oracle_nn_ratio(const PointCloud& query, const PointCloud& target, double threshold) {
  std::size_t hits = 0;
  for (const Vec3& q : query.points)
    if (oracle_min_dist_sq(q, target) <= threshold * threshold) ++hits;
  return double(hits) / double(query.size());
}

/// Independent occupied-cell count (floor grid anchored at the origin).
inline std::size_t oracle_occupied_cells(const PointCloud& cloud, double voxel) {
  std::set<std::tuple<long long, long long, long long>> cells;
  for (const Vec3& p : cloud.points)
    cells.insert({(long long)std::floor(p.x() / voxel), (long long)std::floor(p.y() / voxel),
                  (long long)std::floor(p.z() / voxel)});
  return cells.size();
}

// --- scratch directories ----------------------------------------------------

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sgmapper_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testsup
