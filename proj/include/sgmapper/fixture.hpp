// sgmapper - synthetic scene generator. Emits the exact dataset layout the
// ingest module consumes (color/, depth/, traj.txt, intrinsics.json) plus
// the mock-provider manifest (masks/%06d.png id images, manifest.json) and
// an analytic ground-truth cloud (gt.ply, classes.txt).

#pragma once

#include <sgmapper/geometry.hpp>
#include <sgmapper/image.hpp>
#include <sgmapper/ingest.hpp>
#include <sgmapper/ply.hpp>

#include <nlohmann/json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace sgmapper {

struct FixtureObject {
  std::string class_name;
  std::string caption;
  std::array<int, 3> color{};
  Aabb box;
  bool background = false;
};

struct FixtureOptions {
  int frames = 20;
  int width = 160;
  int height = 120;
  double focal = 110.0;
  int object_count = 5;    // ignored when wall_scene is set
  bool wall_scene = false; // benchmark variant: 10 m wall + floor + one crate
  bool write_gt = true;
  double gt_step = 0.06;   // surface grid step for ground-truth points
  std::uint64_t seed = 1;
};

namespace detail {

/// Slab-method ray/box intersection; returns the entry parameter or a
/// negative value on miss.  Directions are camera rays with dir.z == 1 in
/// the camera frame, so the parameter equals camera-frame depth.
inline double ray_box_entry(const Vec3& origin, const Vec3& dir, const Aabb& box) {
  double t0 = 1e-9, t1 = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    if (std::abs(dir[axis]) < 1e-12) {
      if (origin[axis] < box.min[axis] || origin[axis] > box.max[axis]) return -1.0;
      continue;
    }
    double a = (box.min[axis] - origin[axis]) / dir[axis];
    double b = (box.max[axis] - origin[axis]) / dir[axis];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return -1.0;
  }
  return t0;
}

/// Camera-to-world rotation for an eye looking at a target, image +y down.
inline Eigen::Matrix3d look_at_rotation(const Vec3& eye, const Vec3& target) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 world_up(0, 0, 1);
  Vec3 down = -(world_up - world_up.dot(forward) * forward);
  if (down.norm() < 1e-9) down = Vec3(0, -1, 0);  // looking straight along gravity
  down.normalize();
  const Vec3 right = down.cross(forward);
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return r;
}

inline std::vector<FixtureObject> default_objects(int count) {
  std::vector<FixtureObject> all = {
      {"table", "a wooden table", {160, 110, 60}, {{-0.5, -0.3, 0.0}, {0.5, 0.3, 0.5}}, false},
      {"lamp", "a yellow lamp", {230, 220, 80}, {{-0.1, -0.1, 0.501}, {0.1, 0.1, 0.95}}, false},
      {"chair", "a red chair", {200, 40, 40}, {{1.2, 0.1, 0.0}, {1.65, 0.55, 0.9}}, false},
      {"cabinet", "a blue cabinet", {40, 90, 200}, {{-1.9, -0.6, 0.0}, {-1.1, -0.2, 1.2}}, false},
      {"plant", "a potted plant", {40, 170, 60}, {{0.0, 1.3, 0.0}, {0.35, 1.65, 0.7}}, false},
  };
  if (count < 1 || count > int(all.size()))
    throw std::invalid_argument("fixture supports 1..5 objects");
  all.resize(count);
  return all;
}

inline std::vector<FixtureObject> wall_scene_objects() {
  return {
      {"floor", "a gray floor", {120, 120, 120}, {{-5.0, -5.0, -0.05}, {5.0, 5.0, 0.0}}, true},
      {"wall", "a white wall", {235, 235, 235}, {{-5.0, 4.8, 0.0}, {5.0, 5.0, 3.0}}, true},
      {"crate", "a wooden crate", {170, 120, 50}, {{-0.25, 4.1, 0.0}, {0.25, 4.6, 0.5}}, false},
  };
}

}  // namespace detail

/// Generate a complete fixture under `dir`. Returns the object list that
/// was rendered (ids are list positions).
inline std::vector<FixtureObject> generate_fixture(const std::filesystem::path& dir,
                                                   const FixtureOptions& options = {}) {
  namespace fs = std::filesystem;
  const std::vector<FixtureObject> objects =
      options.wall_scene ? detail::wall_scene_objects() : detail::default_objects(options.object_count);

  fs::create_directories(dir / "color");
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "masks");

  const int w = options.width, h = options.height;
  const double fx = options.focal, fy = options.focal;
  const double cx = w / 2.0, cy = h / 2.0;
  const double depth_scale = 0.001;

  {
    nlohmann::json intr{{"fx", fx},     {"fy", fy},         {"cx", cx},
                        {"cy", cy},     {"width", w},       {"height", h},
                        {"depth_scale", depth_scale}};
    std::ofstream out(dir / "intrinsics.json");
    out << intr.dump(2) << "\n";
  }

  std::ofstream traj(dir / "traj.txt");
  traj.precision(17);

  const std::array<int, 3> bg{30, 30, 30};
  for (int frame = 0; frame < options.frames; ++frame) {
    Vec3 eye, target;
    if (options.wall_scene) {
      // Pan along the wall; everything stays in view the whole sweep.
      const double x = -1.5 + 3.0 * frame / std::max(1, options.frames - 1);
      eye = Vec3(x, 1.2, 1.6);
      target = Vec3(x * 0.5, 5.0, 0.8);
    } else {
      const double angle = 2.0 * M_PI * 300.0 / 360.0 * frame / std::max(1, options.frames - 1);
      eye = Vec3(3.1 * std::cos(angle), 3.1 * std::sin(angle) + 0.3, 2.4);
      target = Vec3(0.0, 0.3, 0.45);
    }
    const Eigen::Matrix3d rot = detail::look_at_rotation(eye, target);

    traj << rot(0, 0) << " " << rot(0, 1) << " " << rot(0, 2) << " " << eye.x() << " "
         << rot(1, 0) << " " << rot(1, 1) << " " << rot(1, 2) << " " << eye.y() << " "
         << rot(2, 0) << " " << rot(2, 1) << " " << rot(2, 2) << " " << eye.z() << " "
         << "0 0 0 1\n";

    ImageRgb color(w, h);
    ImageDepth16 depth(w, h, 0);
    ImageGray8 ids(w, h, 0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Vec3 dir_cam((x - cx) / fx, (y - cy) / fy, 1.0);
        const Vec3 dir_world = rot * dir_cam;
        double best_t = std::numeric_limits<double>::infinity();
        int hit = -1;
        for (std::size_t k = 0; k < objects.size(); ++k) {
          const double t = detail::ray_box_entry(eye, dir_world, objects[k].box);
          if (t > 0.0 && t < best_t) {
            best_t = t;
            hit = static_cast<int>(k);
          }
        }
        std::uint8_t* px = color.px(x, y);
        if (hit >= 0) {
          const auto& c = objects[hit].color;
          px[0] = std::uint8_t(c[0]);
          px[1] = std::uint8_t(c[1]);
          px[2] = std::uint8_t(c[2]);
          depth.at(x, y) = static_cast<std::uint16_t>(std::min(best_t / depth_scale, 65535.0));
          ids.at(x, y) = static_cast<std::uint8_t>(hit + 1);
        } else {
          px[0] = std::uint8_t(bg[0]);
          px[1] = std::uint8_t(bg[1]);
          px[2] = std::uint8_t(bg[2]);
        }
      }
    }
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", frame);
    write_png((dir / "color" / name).string(), color);
    write_png((dir / "depth" / name).string(), depth);
    write_png((dir / "masks" / name).string(), ids);

    // The fusion contract needs every object detected in the very first
    // frame; verify the viewpoint geometry actually delivers that.
    if (frame == 0) {
      std::vector<int> areas(objects.size(), 0);
      for (std::uint8_t v : ids.data)
        if (v > 0) ++areas[v - 1];
      for (std::size_t k = 0; k < objects.size(); ++k)
        if (areas[k] < 64)
          throw std::runtime_error("fixture object " + objects[k].class_name +
                                   " is not visible enough in frame 0");
    }
  }

  // Mock-provider manifest.
  {
    nlohmann::json m;
    m["seed"] = options.seed;
    m["embedding_dim"] = 512;
    m["background_color"] = {bg[0], bg[1], bg[2]};
    nlohmann::json objs = nlohmann::json::array();
    for (std::size_t k = 0; k < objects.size(); ++k)
      objs.push_back({{"id", int(k)},
                      {"color", {objects[k].color[0], objects[k].color[1], objects[k].color[2]}},
                      {"class", objects[k].class_name},
                      {"caption", objects[k].caption},
                      {"background", objects[k].background}});
    m["objects"] = objs;
    nlohmann::json relations = nlohmann::json::object();
    if (!options.wall_scene && objects.size() >= 2)
      relations[objects[0].caption + "|" + objects[1].caption] = "b on a";  // lamp on table
    m["relations"] = relations;
    std::ofstream out(dir / "manifest.json");
    out << m.dump(2) << "\n";
  }

  if (options.write_gt) {
    LabeledCloud gt;
    std::vector<std::string> classes;
    for (std::size_t k = 0; k < objects.size(); ++k) {
      classes.push_back(objects[k].class_name);
      const Aabb& b = objects[k].box;
      const Vec3 size = b.size();
      // Grid over every face except the unobservable bottom.
      auto emit = [&](const Vec3& p) {
        gt.cloud.points.push_back(p);
        gt.labels.push_back(static_cast<std::int32_t>(k));
      };
      const double s = options.gt_step;
      for (double x = 0; x <= size.x() + 1e-9; x += s)
        for (double y = 0; y <= size.y() + 1e-9; y += s) {
          emit(Vec3(b.min.x() + std::min(x, size.x()), b.min.y() + std::min(y, size.y()), b.max.z()));
        }
      for (double x = 0; x <= size.x() + 1e-9; x += s)
        for (double z = 0; z <= size.z() + 1e-9; z += s) {
          emit(Vec3(b.min.x() + std::min(x, size.x()), b.min.y(), b.min.z() + std::min(z, size.z())));
          emit(Vec3(b.min.x() + std::min(x, size.x()), b.max.y(), b.min.z() + std::min(z, size.z())));
        }
      for (double y = 0; y <= size.y() + 1e-9; y += s)
        for (double z = 0; z <= size.z() + 1e-9; z += s) {
          emit(Vec3(b.min.x(), b.min.y() + std::min(y, size.y()), b.min.z() + std::min(z, size.z())));
          emit(Vec3(b.max.x(), b.min.y() + std::min(y, size.y()), b.min.z() + std::min(z, size.z())));
        }
    }
    write_ply((dir / "gt.ply").string(), gt);
    std::ofstream cls(dir / "classes.txt");
    for (const std::string& c : classes) cls << c << "\n";
  }

  return objects;
}

}  // namespace sgmapper
