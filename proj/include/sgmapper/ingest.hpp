// sgmapper - posed RGB-D sequence loading and back-projection of masked
// depth into world-frame point clouds.
//
// Dataset layout (Replica-style):
//   color/%06d.png   8-bit RGB
//   depth/%06d.png   16-bit single channel, raw units
//   traj.txt         one row-major 4x4 camera-to-world matrix per line
//   intrinsics.json  fx, fy, cx, cy, width, height, depth_scale

#pragma once

#include <sgmapper/geometry.hpp>
#include <sgmapper/image.hpp>
#include <sgmapper/providers.hpp>

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace sgmapper {

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;
  double depth_scale = 1.0;  // meters per raw depth unit

  void validate() const {
    if (fx <= 0 || fy <= 0) throw std::invalid_argument("focal lengths must be positive");
    if (cx < 0 || cx >= width || cy < 0 || cy >= height)
      throw std::invalid_argument("principal point outside image");
    if (depth_scale <= 0) throw std::invalid_argument("depth_scale must be positive");
  }
};

/// Camera-to-world rigid transform.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation{0, 0, 0};

  bool is_orthonormal(double tol = 1e-6) const {
    return (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

struct Frame {
  ImageRgb color;
  ImageDepth16 depth;
  Pose pose;
  CameraIntrinsics intrinsics;
  int index = 0;
};

/// Per-frame detection before cross-image fusion.
struct LocalObject {
  Eigen::VectorXd embedding;  // unit norm
  PointCloud cloud;
  Mask mask;
  ImageRgb crop;
  std::string crop_reference;  // set once the crop has been persisted
  int frame_index = 0;
  Vec3 camera_position{0, 0, 0};
};

struct IngestOptions {
  std::size_t min_points = 16;  // detections with fewer valid pixels are dropped
  double max_depth = 10.0;      // meters; deeper readings treated as invalid
  bool erode_masks = true;      // 1 px erosion against boundary depth bleeding
  double crop_padding = 0.1;    // bbox padding fraction for saved crops
};

struct DegenerateMask : std::runtime_error {
  explicit DegenerateMask(const std::string& what) : std::runtime_error(what) {}
};

// ============================================================================
// Sequence loading
// ============================================================================

class FrameSequence {
 public:
  explicit FrameSequence(const std::filesystem::path& dir) : dir_(dir) {
    namespace fs = std::filesystem;
    const fs::path intr_path = dir / "intrinsics.json";
    if (!fs::exists(intr_path)) throw std::runtime_error("missing intrinsics.json in " + dir.string());
    std::ifstream intr_in(intr_path);
    nlohmann::json j = nlohmann::json::parse(intr_in);
    intrinsics_.fx = j.at("fx").get<double>();
    intrinsics_.fy = j.at("fy").get<double>();
    intrinsics_.cx = j.at("cx").get<double>();
    intrinsics_.cy = j.at("cy").get<double>();
    intrinsics_.width = j.at("width").get<int>();
    intrinsics_.height = j.at("height").get<int>();
    intrinsics_.depth_scale = j.at("depth_scale").get<double>();
    intrinsics_.validate();

    const fs::path traj_path = dir / "traj.txt";
    if (!fs::exists(traj_path)) throw std::runtime_error("missing traj.txt in " + dir.string());
    std::ifstream traj(traj_path);
    std::string line;
    int idx = 0;
    while (std::getline(traj, line)) {
      if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
      std::istringstream ls(line);
      double m[16];
      for (int k = 0; k < 16; ++k)
        if (!(ls >> m[k]))
          throw std::runtime_error("frame " + std::to_string(idx) + ": malformed pose row");
      Pose pose;
      pose.rotation << m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10];
      pose.translation = Vec3(m[3], m[7], m[11]);
      if (!pose.is_orthonormal())
        throw std::runtime_error("frame " + std::to_string(idx) + ": pose rotation not orthonormal");
      poses_.push_back(pose);
      ++idx;
    }
    // An empty trajectory is a valid zero-frame sequence.
    for (std::size_t i = 0; i < poses_.size(); ++i) {
      if (!fs::exists(color_path(i)))
        throw std::runtime_error("frame " + std::to_string(i) + ": missing color image");
      if (!fs::exists(depth_path(i)))
        throw std::runtime_error("frame " + std::to_string(i) + ": missing depth image");
    }
    // A color image past the pose count means the trajectory is incomplete.
    if (fs::exists(color_path(poses_.size())))
      throw std::runtime_error("frame " + std::to_string(poses_.size()) +
                               ": color image present but no pose");
  }

  std::size_t size() const { return poses_.size(); }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }
  const std::filesystem::path& dir() const { return dir_; }

  Frame load(std::size_t i) const {
    if (i >= poses_.size()) throw std::out_of_range("frame index out of range");
    Frame f;
    f.color = read_png_rgb(color_path(i).string());
    f.depth = read_png_depth16(depth_path(i).string());
    f.pose = poses_[i];
    f.intrinsics = intrinsics_;
    f.index = static_cast<int>(i);
    if (f.color.width != intrinsics_.width || f.color.height != intrinsics_.height ||
        f.depth.width != intrinsics_.width || f.depth.height != intrinsics_.height)
      throw std::runtime_error("frame " + std::to_string(i) + ": image size does not match intrinsics");
    return f;
  }

 private:
  std::filesystem::path numbered(const char* sub, std::size_t i) const {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.png", i);
    return dir_ / sub / name;
  }
  std::filesystem::path color_path(std::size_t i) const { return numbered("color", i); }
  std::filesystem::path depth_path(std::size_t i) const { return numbered("depth", i); }

  std::filesystem::path dir_;
  CameraIntrinsics intrinsics_;
  std::vector<Pose> poses_;
};

// ============================================================================
// Back-projection
// ============================================================================

/// World-frame point per masked pixel with valid depth:
///   X = R * (z * K^-1 [u, v, 1]^T) + t,  z = raw * depth_scale.
/// Pixels with raw depth 0 or beyond max_depth are skipped. Throws
/// DegenerateMask when fewer than min_points pixels survive.
inline PointCloud backproject(const Frame& frame, const Mask& mask,
                              const IngestOptions& options = {}) {
  if (mask.width != frame.color.width || mask.height != frame.color.height)
    throw std::invalid_argument("mask size does not match frame");
  const CameraIntrinsics& k = frame.intrinsics;
  PointCloud cloud;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      const std::uint16_t raw = frame.depth.at(x, y);
      if (raw == 0) continue;
      const double z = raw * k.depth_scale;
      if (z > options.max_depth) continue;
      const Vec3 cam((x - k.cx) / k.fx * z, (y - k.cy) / k.fy * z, z);
      cloud.points.push_back(frame.pose.rotation * cam + frame.pose.translation);
      const std::uint8_t* c = frame.color.px(x, y);
      cloud.colors.emplace_back(c[0] / 255.0, c[1] / 255.0, c[2] / 255.0);
    }
  }
  if (cloud.size() < options.min_points)
    throw DegenerateMask("degenerate mask: " + std::to_string(cloud.size()) + " valid pixels");
  return cloud;
}

namespace detail {

inline ImageRgb crop_around_mask(const ImageRgb& image, const Mask& mask, double padding) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) throw std::invalid_argument("mask has no true pixels");
  const int pad_x = static_cast<int>(std::ceil((x1 - x0 + 1) * padding));
  const int pad_y = static_cast<int>(std::ceil((y1 - y0 + 1) * padding));
  x0 = std::max(0, x0 - pad_x);
  y0 = std::max(0, y0 - pad_y);
  x1 = std::min(mask.width - 1, x1 + pad_x);
  y1 = std::min(mask.height - 1, y1 + pad_y);
  return crop_image(image, x0, y0, x1 - x0 + 1, y1 - y0 + 1);
}

}  // namespace detail

/// One LocalObject per surviving mask. Degenerate masks (too few valid
/// depth pixels after optional erosion) are dropped silently; zero masks
/// yield an empty list.
inline std::vector<LocalObject> extract_local_objects(const Frame& frame,
                                                      SegmentationProvider& seg,
                                                      EmbeddingProvider& emb,
                                                      const IngestOptions& options = {}) {
  std::vector<LocalObject> out;
  for (const Mask& raw_mask : seg.segment(frame.color, frame.index)) {
    Mask mask = raw_mask;
    if (options.erode_masks)
      mask.bitmap = erode_mask(mask.bitmap, mask.width, mask.height);
    if (mask.true_count() == 0) continue;
    LocalObject obj;
    try {
      obj.cloud = backproject(frame, mask, options);
    } catch (const DegenerateMask&) {
      continue;
    }
    obj.embedding = unit_normalize(emb.embed_image_region(frame.color, raw_mask));
    obj.mask = std::move(mask);
    obj.crop = detail::crop_around_mask(frame.color, raw_mask, options.crop_padding);
    obj.frame_index = frame.index;
    obj.camera_position = frame.pose.translation;
    out.push_back(std::move(obj));
  }
  return out;
}

}  // namespace sgmapper
