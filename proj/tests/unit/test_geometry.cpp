#include <sgmapper/geometry.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "../support/test_support.hpp"

#include <random>

using namespace sgmapper;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("bbox: degenerate and two-point boxes") {
  PointCloud single;
  single.points.emplace_back(1, 2, 3);
  const Aabb b1 = bbox(single);
  REQUIRE(b1.min == Vec3(1, 2, 3));
  REQUIRE(b1.max == Vec3(1, 2, 3));

  PointCloud two;
  two.points.emplace_back(0, 0, 0);
  two.points.emplace_back(1, 2, 3);
  const Aabb b2 = bbox(two);
  REQUIRE(b2.min == Vec3(0, 0, 0));
  REQUIRE(b2.max == Vec3(1, 2, 3));
}

TEST_CASE("bbox: empty cloud is an error") {
  REQUIRE_THROWS_AS(bbox(PointCloud{}), std::invalid_argument);
}

TEST_CASE("bbox: contains all points of a random cloud") {
  std::mt19937_64 rng(7);
  const PointCloud cloud = testsup::random_cloud(rng, 100, {0, 0, 0}, {1, 1, 1});
  const Aabb box = bbox(cloud);
  REQUIRE(box.min.minCoeff() >= 0.0);
  REQUIRE(box.max.maxCoeff() <= 1.0);
  for (const Vec3& p : cloud.points) REQUIRE(box.contains(p));
}

TEST_CASE("bbox_diagonal: table values") {
  REQUIRE(bbox_diagonal(Aabb{{1, 1, 1}, {1, 1, 1}}) == 0.0);
  // coffee cup 0.08 x 0.08 x 0.12, wall 10.0 x 0.20 x 3.0
  REQUIRE_THAT(bbox_diagonal(Aabb{{0, 0, 0}, {0.08, 0.08, 0.12}}), WithinAbs(0.165, 0.001));
  REQUIRE_THAT(bbox_diagonal(Aabb{{0, 0, 0}, {10.0, 0.20, 3.0}}), WithinAbs(10.44, 0.01));
}

TEST_CASE("dynamic_voxel_size: base * sqrt(diagonal)") {
  PointCloud cup;
  cup.points.emplace_back(0, 0, 0);
  cup.points.emplace_back(0.08, 0.08, 0.12);
  REQUIRE_THAT(dynamic_voxel_size(cup, 0.01), WithinAbs(0.004, 0.0005));

  PointCloud wall;
  wall.points.emplace_back(0, 0, 0);
  wall.points.emplace_back(10.0, 0.20, 3.0);
  REQUIRE_THAT(dynamic_voxel_size(wall, 0.01), WithinAbs(0.032, 0.001));

  PointCloud unit_diag;
  unit_diag.points.emplace_back(0, 0, 0);
  unit_diag.points.emplace_back(1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0));
  REQUIRE_THAT(dynamic_voxel_size(unit_diag, 0.01), WithinAbs(0.01, 1e-12));
}

TEST_CASE("dynamic_voxel_size: monotone in diagonal, linear in base") {
  std::mt19937_64 rng(11);
  double prev = 0.0;
  for (double scale : {0.1, 0.5, 1.0, 2.0, 5.0}) {
    PointCloud c = testsup::random_cloud(rng, 50, {0, 0, 0}, {scale, scale, scale});
    const double v = dynamic_voxel_size(c, 0.01);
    REQUIRE(v >= prev * 0.999);  // larger boxes never shrink the voxel
    REQUIRE_THAT(dynamic_voxel_size(c, 0.02), WithinRel(2.0 * v, 1e-12));
    prev = v;
  }
}

TEST_CASE("voxel_downsample: single point and midpoint merging") {
  PointCloud one;
  one.points.emplace_back(0.5, 0.5, 0.5);
  const PointCloud d1 = voxel_downsample(one, 0.3);
  REQUIRE(d1.size() == 1);
  REQUIRE(d1.points[0] == Vec3(0.5, 0.5, 0.5));

  PointCloud pair;
  pair.points.emplace_back(0.0040, 0.004, 0.004);
  pair.points.emplace_back(0.0050, 0.004, 0.004);
  const PointCloud d2 = voxel_downsample(pair, 0.01);
  REQUIRE(d2.size() == 1);
  REQUIRE_THAT(d2.points[0].x(), WithinAbs(0.0045, 1e-12));
}

TEST_CASE("voxel_downsample: count matches hash-grid oracle on a plane") {
  std::mt19937_64 rng(3);
  PointCloud plane = testsup::random_cloud(rng, 10000, {0, 0, 0}, {1, 1, 1e-9});
  const double voxel = 0.05;
  const PointCloud down = voxel_downsample(plane, voxel);
  REQUIRE(down.size() == testsup::oracle_occupied_cells(plane, voxel));
}

TEST_CASE("voxel_downsample: monotone in voxel, outputs stay in bbox") {
  std::mt19937_64 rng(5);
  const PointCloud cloud = testsup::random_cloud(rng, 2000, {-1, -1, -1}, {1, 1, 1}, true);
  const Aabb box = bbox(cloud);
  std::size_t prev = cloud.size() + 1;
  for (double voxel : {0.01, 0.05, 0.1, 0.5, 2.0}) {
    const PointCloud down = voxel_downsample(cloud, voxel);
    REQUIRE(!down.empty());
    REQUIRE(down.size() <= prev);
    REQUIRE(down.colors.size() == down.points.size());
    for (const Vec3& p : down.points) REQUIRE(box.contains(p));
    prev = down.size();
  }
  REQUIRE_THROWS_AS(voxel_downsample(cloud, 0.0), std::invalid_argument);
}

TEST_CASE("dynamic_nn_threshold: formula, symmetry, linearity") {
  PointCloud a, b;
  a.points.emplace_back(0, 0, 0);
  a.points.emplace_back(1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0));
  REQUIRE_THAT(dynamic_nn_threshold(a, a, 0.01), WithinAbs(0.01, 1e-12));

  b.points.emplace_back(0, 0, 0);
  b.points.emplace_back(0.08, 0.08, 0.12);  // diagonal 0.165
  // 0.01 * (sqrt(0.165) + sqrt(1)) / 2 = 0.00703
  REQUIRE_THAT(dynamic_nn_threshold(b, a, 0.01), WithinAbs(0.00703, 1e-4));
  REQUIRE(dynamic_nn_threshold(a, b, 0.01) == dynamic_nn_threshold(b, a, 0.01));
  REQUIRE_THAT(dynamic_nn_threshold(a, b, 0.02), WithinRel(2.0 * dynamic_nn_threshold(a, b, 0.01), 1e-12));
}

TEST_CASE("nn_ratio: identity, separation, brute-force equality") {
  std::mt19937_64 rng(13);
  const PointCloud a = testsup::random_cloud(rng, 50, {0, 0, 0}, {1, 1, 1});
  REQUIRE(nn_ratio(a, a, 1e-6) == 1.0);

  PointCloud far = a;
  for (Vec3& p : far.points) p += Vec3(10, 0, 0);
  REQUIRE(nn_ratio(a, far, 0.01) == 0.0);

  const PointCloud b = testsup::random_cloud(rng, 50, {0.5, 0, 0}, {1.5, 1, 1});
  REQUIRE(nn_ratio(a, b, 0.1) == testsup::oracle_nn_ratio(a, b, 0.1));
}

TEST_CASE("nn_ratio: monotone in threshold") {
  std::mt19937_64 rng(17);
  const PointCloud a = testsup::random_cloud(rng, 80, {0, 0, 0}, {1, 1, 1});
  const PointCloud b = testsup::random_cloud(rng, 80, {0.3, 0, 0}, {1.3, 1, 1});
  double prev = 0.0;
  for (double t : {0.0, 0.02, 0.05, 0.1, 0.3, 1.0, 3.0}) {
    const double r = nn_ratio(a, b, t);
    REQUIRE(r >= prev);
    prev = r;
  }
  REQUIRE(prev == 1.0);
}

TEST_CASE("SpatialIndex: matches brute force on random instances") {
  std::mt19937_64 rng(19);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 1 + rng() % 200;
    const PointCloud target = testsup::random_cloud(rng, n, {0, 0, 0}, {1, 1, 1});
    const SpatialIndex index(target);
    const PointCloud queries = testsup::random_cloud(rng, 50, {-0.2, -0.2, -0.2}, {1.2, 1.2, 1.2});
    for (const Vec3& q : queries.points) {
      const auto [idx, d2] = index.nearest(q);
      REQUIRE(d2 == testsup::oracle_min_dist_sq(q, target));
      REQUIRE(idx == testsup::oracle_nearest_index(q, target));
      const double r = 0.05 + 0.2 * (rng() % 100) / 100.0;
      REQUIRE(index.has_neighbor_within(q, r) ==
              (testsup::oracle_min_dist_sq(q, target) <= r * r));
    }
  }
}

TEST_CASE("SpatialIndex: inclusive threshold boundary") {
  PointCloud target;
  target.points.emplace_back(1, 0, 0);
  const SpatialIndex index(target);
  REQUIRE(index.has_neighbor_within(Vec3(0, 0, 0), 1.0));   // distance == radius
  REQUIRE(!index.has_neighbor_within(Vec3(0, 0, 0), 0.999));
}

TEST_CASE("centroid: trivial and summation-order oracle") {
  PointCloud one;
  one.points.emplace_back(4, 5, 6);
  REQUIRE(centroid(one) == Vec3(4, 5, 6));

  PointCloud two;
  two.points.emplace_back(0, 0, 0);
  two.points.emplace_back(2, 0, 0);
  REQUIRE(centroid(two) == Vec3(1, 0, 0));

  std::mt19937_64 rng(23);
  const PointCloud cloud = testsup::random_cloud(rng, 1000, {-5, -5, -5}, {5, 5, 5});
  // Independent route: reverse-order Kahan-free accumulation.
  Vec3 sum{0, 0, 0};
  for (auto it = cloud.points.rbegin(); it != cloud.points.rend(); ++it) sum += *it;
  const Vec3 expect = sum / 1000.0;
  REQUIRE_THAT((centroid(cloud) - expect).norm(), WithinAbs(0.0, 1e-9 * expect.norm() + 1e-12));
}

TEST_CASE("dynamic downsampling sparsifies large objects beyond the fixed grid") {
  // Two planes with diagonals > 1 m: the dynamic voxel (base*sqrt(diag) > base)
  // must retain strictly fewer points than the fixed grid at `base`.
  std::mt19937_64 rng(29);
  const double base = 0.01;
  for (double extent : {2.0, 8.0}) {
    PointCloud plane =
        testsup::random_cloud(rng, 20000, {0, 0, 0}, {extent, extent, 1e-9});
    const std::size_t fixed_count = voxel_downsample(plane, base).size();
    const std::size_t dynamic_count =
        voxel_downsample(plane, dynamic_voxel_size(plane, base)).size();
    REQUIRE(dynamic_count < fixed_count);
  }
}
