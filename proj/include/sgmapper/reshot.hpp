// sgmapper - best-view "re-shot" rendering of fused object clouds:
// hemisphere candidate sampling, visibility through spherical-flip
// hidden-point removal, view quality scoring and point-splat rendering.

#pragma once

#include <sgmapper/fusion.hpp>
#include <sgmapper/geometry.hpp>
#include <sgmapper/hull.hpp>
#include <sgmapper/image.hpp>

#include <array>
#include <optional>
#include <vector>

namespace sgmapper {

struct ViewCandidate {
  int index = 0;
  Vec3 camera_position{0, 0, 0};
  Vec3 view_direction{0, 0, 1};  // unit, object center minus camera
  double s_vis = 0.0;
  double s_up = 0.0;
  double s_prior = 0.0;
  double s_view = 0.0;
};

struct RenderSettings {
  int image_size = 256;              // square output
  double fov_deg = 60.0;             // vertical FOV fallback for degenerate framing
  int splat_radius = 2;              // pixels
  std::array<std::uint8_t, 3> background{0, 0, 0};
  Vec3 gravity{0, 0, -1};            // unit
  int candidate_count = 64;
  double hemisphere_scale = 1.5;     // radius = scale * bbox diagonal
  double alpha = 0.2;                // uprightness weight
  double beta = 0.2;                 // prior-alignment weight
  double hpr_gamma = 100.0;          // flip sphere radius multiplier

  void validate() const {
    if (alpha < 0 || beta < 0 || alpha + beta >= 1.0)
      throw std::invalid_argument("view score weights need alpha, beta >= 0 and alpha + beta < 1");
    if (candidate_count < 1) throw std::invalid_argument("candidate count must be >= 1");
    if (image_size < 8) throw std::invalid_argument("image size too small");
    if (hemisphere_scale <= 0) throw std::invalid_argument("hemisphere scale must be positive");
  }
};

struct ReshotImage {
  ImageRgb pixels;
  ViewCandidate candidate;
  int object_id = 0;
};

// ============================================================================
// Candidate sampling
// ============================================================================

/// Deterministic Fibonacci-spiral layout on the hemisphere of `radius`
/// around `center`, on the side opposite the gravity vector. A single
/// sample sits at the zenith.
inline std::vector<Vec3> sample_hemisphere(const Vec3& center, double radius, int n,
                                           const Vec3& gravity) {
  if (radius <= 0) throw std::invalid_argument("hemisphere radius must be positive");
  if (n < 1) throw std::invalid_argument("sample count must be >= 1");
  const Vec3 up = -gravity.normalized();
  Vec3 helper = std::abs(up.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
  const Vec3 e1 = helper.cross(up).normalized();
  const Vec3 e2 = up.cross(e1);

  std::vector<Vec3> out;
  out.reserve(n);
  if (n == 1) {
    out.push_back(center + radius * up);
    return out;
  }
  constexpr double golden_angle = 2.399963229728653;  // pi * (3 - sqrt(5))
  for (int i = 0; i < n; ++i) {
    const double cos_theta = 1.0 - (i + 0.5) / n;  // area-uniform over the cap
    const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
    const double phi = golden_angle * i;
    const Vec3 dir = sin_theta * (std::cos(phi) * e1 + std::sin(phi) * e2) + cos_theta * up;
    out.push_back(center + radius * dir);
  }
  return out;
}

// ============================================================================
// Hidden-point removal
// ============================================================================

/// Fraction of points visible from `camera` under spherical-flip HPR:
/// flip every point about a sphere of radius gamma * max distance centered
/// at the camera, take the convex hull of the flipped set plus the camera,
/// and count hull members. Degenerate hulls (tiny or flat clouds) count as
/// fully visible.
inline double visible_ratio(const PointCloud& cloud, const Vec3& camera, double gamma = 100.0) {
  require_non_empty(cloud);
  if (bbox(cloud).contains(camera)) throw std::invalid_argument("camera inside object");
  const std::size_t n = cloud.size();
  if (n <= 3) return 1.0;

  double max_dist = 0.0;
  for (const Vec3& p : cloud.points) max_dist = std::max(max_dist, (p - camera).norm());
  const double flip_radius = gamma * max_dist;

  std::vector<Vec3> flipped;
  flipped.reserve(n + 1);
  for (const Vec3& p : cloud.points) {
    const Vec3 rel = p - camera;
    const double d = rel.norm();
    if (d < 1e-12) {
      flipped.push_back(camera);  // degenerate: coincides with the camera
      continue;
    }
    flipped.push_back(camera + rel * ((2.0 * flip_radius - d) / d));
  }
  flipped.push_back(camera);

  const ConvexHull hull = convex_hull(flipped);
  if (hull.degenerate) return 1.0;
  std::size_t visible = 0;
  for (std::size_t idx : hull.vertex_indices)
    if (idx < n) ++visible;  // exclude the appended camera vertex
  return double(visible) / double(n);
}

// ============================================================================
// View scoring
// ============================================================================

/// Scores one candidate camera position:
///   S_vis   visible点 ratio under HPR
///   S_up    1 - |v . g|
///   S_prior (1 + v . f_dir) / 2, neutral 0.5 without a prior
///   S_view  (1 - alpha - beta) S_vis + alpha S_up + beta S_prior
inline ViewCandidate view_scores(const PointCloud& cloud, const Vec3& camera_position,
                                 const Vec3& gravity, const std::optional<Vec3>& prior_dir,
                                 double alpha, double beta, double hpr_gamma = 100.0) {
  ViewCandidate c;
  c.camera_position = camera_position;
  const Vec3 center = centroid(cloud);
  const Vec3 to_object = center - camera_position;
  if (to_object.norm() < 1e-12) throw std::invalid_argument("camera at object center");
  c.view_direction = to_object.normalized();
  c.s_vis = visible_ratio(cloud, camera_position, hpr_gamma);
  c.s_up = 1.0 - std::abs(c.view_direction.dot(gravity.normalized()));
  c.s_prior = prior_dir ? 0.5 * (1.0 + c.view_direction.dot(prior_dir->normalized())) : 0.5;
  c.s_view = (1.0 - alpha - beta) * c.s_vis + alpha * c.s_up + beta * c.s_prior;
  return c;
}

/// All hemisphere candidates scored and sorted by descending S_view
/// (ties keep the lower candidate index). Candidates that fall inside the
/// object's bounding box are skipped; an empty result is an error.
inline std::vector<ViewCandidate> rank_views(const GlobalObject& object,
                                             const RenderSettings& settings) {
  settings.validate();
  const PointCloud& cloud = object.cloud;
  const Vec3 center = centroid(cloud);
  const Aabb box = bbox(cloud);
  const double radius = settings.hemisphere_scale * std::max(bbox_diagonal(box), 1e-6);

  std::optional<Vec3> prior_dir;
  if (object.mapping_count > 0) {
    const Vec3 f = object.average_camera_position() - center;
    if (f.norm() > 1e-9) prior_dir = f.normalized();
  }

  const std::vector<Vec3> positions =
      sample_hemisphere(center, radius, settings.candidate_count, settings.gravity);
  std::vector<ViewCandidate> scored;
  for (int i = 0; i < static_cast<int>(positions.size()); ++i) {
    if (box.contains(positions[i])) continue;
    ViewCandidate c = view_scores(cloud, positions[i], settings.gravity, prior_dir,
                                  settings.alpha, settings.beta, settings.hpr_gamma);
    c.index = i;
    scored.push_back(c);
  }
  if (scored.empty())
    throw std::runtime_error("no valid view candidates: all samples inside the object bounds");
  std::stable_sort(scored.begin(), scored.end(), [](const ViewCandidate& a, const ViewCandidate& b) {
    if (a.s_view != b.s_view) return a.s_view > b.s_view;
    return a.index < b.index;
  });
  return scored;
}

inline ViewCandidate select_best_view(const GlobalObject& object, const RenderSettings& settings) {
  return rank_views(object, settings).front();
}

// ============================================================================
// Point-splat rendering
// ============================================================================

/// Perspective splat render from a candidate position looking at the
/// cloud centroid. Up is gravity-opposed, framing auto-fits the bounding
/// box with a 10% margin, and each point paints a z-buffered disc.
inline ReshotImage render_point_splat(const PointCloud& cloud, const ViewCandidate& candidate,
                                      const RenderSettings& settings) {
  require_non_empty(cloud);
  const int size = settings.image_size;
  const Vec3 eye = candidate.camera_position;
  const Vec3 center = centroid(cloud);
  const Vec3 forward = (center - eye).normalized();
  const Vec3 up_world = -settings.gravity.normalized();
  Vec3 down = -(up_world - up_world.dot(forward) * forward);
  if (down.norm() < 1e-9) {
    Vec3 helper = std::abs(forward.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    down = forward.cross(helper);
  }
  down.normalize();
  const Vec3 right = down.cross(forward);

  // Fit the bbox corners with a 10% margin; fall back to the configured
  // FOV for degenerate (point-like) extents.
  const Aabb box = bbox(cloud);
  double max_nx = 0.0, max_ny = 0.0;
  for (int i = 0; i < 8; ++i) {
    const Vec3 corner(i & 1 ? box.max.x() : box.min.x(), i & 2 ? box.max.y() : box.min.y(),
                      i & 4 ? box.max.z() : box.min.z());
    const Vec3 rel = corner - eye;
    const double z = rel.dot(forward);
    if (z <= 1e-9) continue;
    max_nx = std::max(max_nx, std::abs(rel.dot(right)) / z);
    max_ny = std::max(max_ny, std::abs(rel.dot(down)) / z);
  }
  const double fallback_focal = (size / 2.0) / std::tan(settings.fov_deg * M_PI / 360.0);
  double focal = fallback_focal;
  if (std::max(max_nx, max_ny) > 1e-9)
    focal = 0.9 * (size / 2.0) / std::max(max_nx, max_ny);

  ReshotImage out;
  out.candidate = candidate;
  out.pixels = ImageRgb(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      std::uint8_t* px = out.pixels.px(x, y);
      px[0] = settings.background[0];
      px[1] = settings.background[1];
      px[2] = settings.background[2];
    }

  std::vector<double> zbuf(std::size_t(size) * size, std::numeric_limits<double>::infinity());
  const double cx = size / 2.0, cy = size / 2.0;
  const int r = std::max(0, settings.splat_radius);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 rel = cloud.points[i] - eye;
    const double z = rel.dot(forward);
    if (z <= 1e-9) continue;
    const int ix = static_cast<int>(std::lround(cx + focal * rel.dot(right) / z));
    const int iy = static_cast<int>(std::lround(cy + focal * rel.dot(down) / z));
    std::uint8_t color[3] = {200, 200, 200};
    if (cloud.has_colors()) {
      const Vec3& c = cloud.colors[i];
      color[0] = detail::to_byte(c.x());
      color[1] = detail::to_byte(c.y());
      color[2] = detail::to_byte(c.z());
    }
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        if (dx * dx + dy * dy > r * r) continue;
        const int sx = ix + dx, sy = iy + dy;
        if (sx < 0 || sx >= size || sy < 0 || sy >= size) continue;
        double& depth = zbuf[std::size_t(sy) * size + sx];
        if (z < depth) {
          depth = z;
          std::uint8_t* px = out.pixels.px(sx, sy);
          px[0] = color[0];
          px[1] = color[1];
          px[2] = color[2];
        }
      }
  }
  return out;
}

}  // namespace sgmapper
