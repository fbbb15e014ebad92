#include <sgmapper/hull.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "../support/test_support.hpp"

#include <random>
#include <set>

using namespace sgmapper;

TEST_CASE("convex_hull: cube corners are vertices, interior points are not") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 8; ++i)
    pts.emplace_back(i & 1 ? 1.0 : 0.0, i & 2 ? 1.0 : 0.0, i & 4 ? 1.0 : 0.0);
  pts.emplace_back(0.5, 0.5, 0.5);
  pts.emplace_back(0.3, 0.7, 0.4);

  const ConvexHull hull = convex_hull(pts);
  REQUIRE(!hull.degenerate);
  const std::set<std::size_t> verts(hull.vertex_indices.begin(), hull.vertex_indices.end());
  for (std::size_t i = 0; i < 8; ++i) REQUIRE(verts.count(i) == 1);
  REQUIRE(verts.count(8) == 0);
  REQUIRE(verts.count(9) == 0);
}

TEST_CASE("convex_hull: every input point lies inside or on all faces") {
  std::mt19937_64 rng(41);
  for (int rep = 0; rep < 10; ++rep) {
    const auto cloud = testsup::random_cloud(rng, 200, {-1, -1, -1}, {1, 1, 1});
    const ConvexHull hull = convex_hull(cloud.points);
    REQUIRE(!hull.degenerate);
    REQUIRE(hull.faces.size() >= 4);
    for (const Vec3& p : cloud.points)
      for (const HullFace& f : hull.faces)
        REQUIRE(f.normal.dot(p) - f.offset <= 1e-7);
  }
}

TEST_CASE("convex_hull: sphere samples are all hull vertices") {
  std::mt19937_64 rng(43);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 500; ++i) {
    Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    pts.push_back(v.normalized());
  }
  const ConvexHull hull = convex_hull(pts);
  REQUIRE(!hull.degenerate);
  REQUIRE(hull.vertex_indices.size() == pts.size());
}

TEST_CASE("convex_hull: degenerate inputs are reported") {
  std::vector<Vec3> collinear{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  REQUIRE(convex_hull(collinear).degenerate);

  std::vector<Vec3> coplanar{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {0.5, 0.5, 0}};
  REQUIRE(convex_hull(coplanar).degenerate);

  std::vector<Vec3> too_few{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  REQUIRE(convex_hull(too_few).degenerate);
}

TEST_CASE("convex_hull: heavily coplanar cube-surface grids stay consistent") {
  // Dense grids on each cube face stress the coplanarity tolerance: the
  // hull must still contain every input point and keep outward normals.
  std::vector<Vec3> pts;
  const int per_axis = 12;
  for (int i = 0; i < per_axis; ++i)
    for (int j = 0; j < per_axis; ++j) {
      const double a = double(i) / (per_axis - 1) - 0.5;
      const double b = double(j) / (per_axis - 1) - 0.5;
      for (double s : {-0.5, 0.5}) {
        pts.emplace_back(s, a, b);
        pts.emplace_back(a, s, b);
        pts.emplace_back(a, b, s);
      }
    }
  const ConvexHull hull = convex_hull(pts);
  REQUIRE(!hull.degenerate);
  for (const Vec3& p : pts)
    for (const HullFace& f : hull.faces) REQUIRE(f.normal.dot(p) - f.offset <= 1e-7);
  // Exactly coplanar grid points may be absorbed rather than listed as
  // vertices, but every corner still sits on the hull surface.
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (std::abs(pts[i].x()) == 0.5 && std::abs(pts[i].y()) == 0.5 && std::abs(pts[i].z()) == 0.5)
      REQUIRE(std::abs(hull.plane_distance(pts[i])) < 1e-9);
}

TEST_CASE("convex_hull: near-cospherical shells keep every point as a vertex") {
  // Mirrors the flipped-cloud geometry hidden-point removal produces: a
  // thin spherical cap far from the origin. Radial jitter stays well under
  // the local sagitta so every sample is in strictly convex position.
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  std::vector<Vec3> pts;
  pts.emplace_back(0, 0, 0);  // the camera
  for (int i = 0; i < 400; ++i) {
    const double theta = u(rng), phi = u(rng);
    const double radius = 800.0 + 0.003 * u(rng);
    pts.push_back(radius * Vec3(std::cos(theta) * std::cos(phi), std::sin(theta) * std::cos(phi),
                                std::sin(phi)));
  }
  const ConvexHull hull = convex_hull(pts);
  REQUIRE(!hull.degenerate);
  REQUIRE(hull.vertex_indices.size() == pts.size());
}

TEST_CASE("convex_hull: plane_distance is zero on the surface, positive inside") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 8; ++i)
    pts.emplace_back(i & 1 ? 1.0 : -1.0, i & 2 ? 1.0 : -1.0, i & 4 ? 1.0 : -1.0);
  const ConvexHull hull = convex_hull(pts);
  REQUIRE_THAT(hull.plane_distance(Vec3(0, 0, 0)), Catch::Matchers::WithinAbs(1.0, 1e-9));
  REQUIRE_THAT(hull.plane_distance(Vec3(1, 1, 1)), Catch::Matchers::WithinAbs(0.0, 1e-9));
}
