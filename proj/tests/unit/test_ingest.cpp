#include <sgmapper/ingest.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "../support/test_support.hpp"

#include <fstream>

using namespace sgmapper;
using Catch::Matchers::WithinAbs;

namespace {

// Minimal in-test providers; the shipping mocks are covered separately.
struct FixedMasks : SegmentationProvider {
  std::vector<Mask> masks;
  std::vector<Mask> segment(const ImageRgb&, int) override { return masks; }
};

struct ConstantEmbedding : EmbeddingProvider {
  Eigen::VectorXd embed_image_region(const ImageRgb&, const Mask&) override {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(8);
    v[0] = 2.0;  // deliberately unnormalized; extract must renormalize
    return v;
  }
  Eigen::VectorXd embed_text(const std::string&) override { return Eigen::VectorXd::Ones(8); }
  int dimension() const override { return 8; }
};

Frame make_frame(int w, int h, double depth_m, const Pose& pose = {}) {
  Frame f;
  f.intrinsics = CameraIntrinsics{100.0, 100.0, w / 2.0, h / 2.0, w, h, 0.001};
  f.color = ImageRgb(w, h, 128);
  f.depth = ImageDepth16(w, h, static_cast<std::uint16_t>(depth_m * 1000.0));
  f.pose = pose;
  f.index = 0;
  return f;
}

Mask full_mask(int w, int h) {
  Mask m;
  m.width = w;
  m.height = h;
  m.bitmap.assign(std::size_t(w) * h, true);
  m.confidence = 0.9;
  return m;
}

void write_sequence(const std::filesystem::path& dir, int frames, int w, int h,
                    int poses = -1) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "color");
  fs::create_directories(dir / "depth");
  for (int i = 0; i < frames; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", i);
    write_png((dir / "color" / name).string(), ImageRgb(w, h, 100));
    write_png((dir / "depth" / name).string(), ImageDepth16(w, h, 2000));
  }
  std::ofstream traj(dir / "traj.txt");
  const int pose_count = poses < 0 ? frames : poses;
  for (int i = 0; i < pose_count; ++i)
    traj << "1 0 0 " << i << " 0 1 0 0 0 0 1 0 0 0 0 1\n";
  std::ofstream intr(dir / "intrinsics.json");
  intr << R"({"fx":100.0,"fy":100.0,"cx":)" << w / 2.0 << R"(,"cy":)" << h / 2.0
       << R"(,"width":)" << w << R"(,"height":)" << h << R"(,"depth_scale":0.001})";
}

}  // namespace

TEST_CASE("load_sequence: frames in index order with per-frame poses") {
  testsup::TempDir tmp("seq");
  write_sequence(tmp.path(), 3, 16, 12);
  FrameSequence seq(tmp.path());
  REQUIRE(seq.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const Frame f = seq.load(i);
    REQUIRE(f.index == static_cast<int>(i));
    REQUIRE(f.pose.translation == Vec3(double(i), 0, 0));
  }
}

TEST_CASE("load_sequence: color image without pose is an error at that index") {
  testsup::TempDir tmp("seq_extra");
  write_sequence(tmp.path(), 4, 16, 12, /*poses=*/3);
  REQUIRE_THROWS_WITH(FrameSequence(tmp.path()),
                      Catch::Matchers::ContainsSubstring("frame 3"));
}

TEST_CASE("load_sequence: missing depth image names the frame") {
  testsup::TempDir tmp("seq_missing");
  write_sequence(tmp.path(), 3, 16, 12);
  std::filesystem::remove(tmp.path() / "depth" / "000001.png");
  REQUIRE_THROWS_WITH(FrameSequence(tmp.path()),
                      Catch::Matchers::ContainsSubstring("frame 1"));
}

TEST_CASE("load_sequence: non-orthonormal pose rejected") {
  testsup::TempDir tmp("seq_pose");
  write_sequence(tmp.path(), 2, 16, 12);
  std::ofstream traj(tmp.path() / "traj.txt");
  traj << "1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n";
  traj << "2 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n";  // scaled rotation
  traj.close();
  REQUIRE_THROWS_WITH(FrameSequence(tmp.path()),
                      Catch::Matchers::ContainsSubstring("orthonormal"));
}

TEST_CASE("backproject: pinhole identity and pure translation") {
  Frame f;
  f.intrinsics = CameraIntrinsics{1.0, 1.0, 0.0, 0.0, 4, 4, 1.0};
  f.color = ImageRgb(4, 4, 50);
  f.depth = ImageDepth16(4, 4, 0);
  f.depth.at(0, 0) = 2;  // 2 m at pixel (0,0)

  Mask m;
  m.width = 4;
  m.height = 4;
  m.bitmap.assign(16, false);
  m.bitmap[0] = true;

  IngestOptions opt;
  opt.min_points = 1;
  const PointCloud c1 = backproject(f, m, opt);
  REQUIRE(c1.size() == 1);
  REQUIRE((c1.points[0] - Vec3(0, 0, 2)).norm() < 1e-12);

  f.pose.translation = Vec3(1, 0, 0);
  const PointCloud c2 = backproject(f, m, opt);
  REQUIRE((c2.points[0] - Vec3(1, 0, 2)).norm() < 1e-12);
}

TEST_CASE("backproject: planar frustum fixture matches per-pixel recomputation") {
  const int w = 24, h = 18;
  Pose pose;
  pose.rotation = Eigen::AngleAxisd(0.3, Vec3(0, 1, 0)).toRotationMatrix();
  pose.translation = Vec3(0.5, -0.2, 0.1);
  Frame f = make_frame(w, h, 2.0, pose);
  Mask m = full_mask(w, h);

  const PointCloud cloud = backproject(f, m);
  REQUIRE(cloud.size() == std::size_t(w) * h);
  // Independent scalar re-derivation per pixel.
  std::size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x, ++i) {
      const double z = 2000 * 0.001;
      const double cx = (x - w / 2.0) / 100.0 * z;
      const double cy = (y - h / 2.0) / 100.0 * z;
      const Vec3 expect = pose.rotation * Vec3(cx, cy, z) + pose.translation;
      REQUIRE((cloud.points[i] - expect).norm() < 1e-9);
    }
}

TEST_CASE("backproject: output count equals masked pixels with valid depth") {
  Frame f = make_frame(20, 20, 2.0);
  f.depth.at(3, 3) = 0;      // hole
  f.depth.at(4, 4) = 60000;  // beyond max_depth (60 m)
  Mask m = full_mask(20, 20);
  const PointCloud cloud = backproject(f, m);
  REQUIRE(cloud.size() == 400 - 2);
}

TEST_CASE("backproject then reproject recovers pixel coordinates") {
  Pose pose;
  pose.rotation = Eigen::AngleAxisd(-0.7, Vec3(1, 1, 0).normalized()).toRotationMatrix();
  pose.translation = Vec3(3, 2, 1);
  Frame f = make_frame(16, 12, 1.5, pose);
  Mask m = full_mask(16, 12);
  const PointCloud cloud = backproject(f, m);
  std::size_t i = 0;
  const auto& k = f.intrinsics;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x, ++i) {
      const Vec3 cam = pose.rotation.transpose() * (cloud.points[i] - pose.translation);
      const double u = cam.x() / cam.z() * k.fx + k.cx;
      const double v = cam.y() / cam.z() * k.fy + k.cy;
      REQUIRE_THAT(u, WithinAbs(double(x), 0.5));
      REQUIRE_THAT(v, WithinAbs(double(y), 0.5));
    }
}

TEST_CASE("backproject: degenerate mask raises") {
  Frame f = make_frame(8, 8, 2.0);
  Mask m;
  m.width = 8;
  m.height = 8;
  m.bitmap.assign(64, false);
  m.bitmap[0] = true;  // 1 pixel < min_points
  REQUIRE_THROWS_AS(backproject(f, m), DegenerateMask);
}

TEST_CASE("extract_local_objects: one object per surviving mask, unit embeddings") {
  Frame f = make_frame(32, 32, 2.0);
  FixedMasks seg;
  Mask a = full_mask(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) a.bitmap[y * 32 + x] = (x < 14);
  Mask b = full_mask(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) b.bitmap[y * 32 + x] = (x >= 18);
  seg.masks = {a, b};
  ConstantEmbedding emb;

  const auto objects = extract_local_objects(f, seg, emb);
  REQUIRE(objects.size() == 2);
  for (const LocalObject& o : objects) {
    REQUIRE_THAT(o.embedding.norm(), WithinAbs(1.0, 1e-5));
    REQUIRE(!o.cloud.empty());
    REQUIRE(o.camera_position == Vec3(0, 0, 0));
    REQUIRE(o.crop.width > 0);
  }
}

TEST_CASE("extract_local_objects: all-degenerate masks give an empty list") {
  Frame f = make_frame(32, 32, 2.0);
  FixedMasks seg;
  Mask tiny = full_mask(32, 32);
  tiny.bitmap.assign(32 * 32, false);
  for (int i = 0; i < 4; ++i) tiny.bitmap[i] = true;  // erodes to nothing
  seg.masks = {tiny, tiny};
  ConstantEmbedding emb;
  REQUIRE(extract_local_objects(f, seg, emb).empty());
}

TEST_CASE("extract_local_objects: clouds partition the masked depth pixels") {
  Frame f = make_frame(40, 30, 2.0);
  f.depth.at(5, 5) = 0;
  FixedMasks seg;
  Mask left = full_mask(40, 30), right = full_mask(40, 30);
  std::size_t masked_valid = 0;
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x) {
      left.bitmap[y * 40 + x] = (x < 20);
      right.bitmap[y * 40 + x] = (x >= 20);
      if (f.depth.at(x, y) > 0) ++masked_valid;
    }
  seg.masks = {left, right};
  ConstantEmbedding emb;
  IngestOptions opt;
  opt.erode_masks = false;  // keep the pixel partition exact
  const auto objects = extract_local_objects(f, seg, emb, opt);
  REQUIRE(objects.size() == 2);
  REQUIRE(objects[0].cloud.size() + objects[1].cloud.size() == masked_valid);
}
