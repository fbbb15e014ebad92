// sgmapper - incremental cross-image object fusion. Each frame's local
// objects are matched against the global list with a combined
// semantic + spatial similarity and either fused or inserted.

#pragma once

#include <sgmapper/geometry.hpp>
#include <sgmapper/ingest.hpp>
#include <sgmapper/ply.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace sgmapper {

struct ViewRecord {
  int frame_index = 0;
  double confidence = 0.0;
  std::string crop_reference;
  Vec3 camera_position{0, 0, 0};
};

/// Fused cross-image representation of one physical object.
///
/// `embedding_mean` is the exact running mean of all fused local embeddings;
/// `embedding` is its unit-normalized copy (the matching formula assumes
/// unit vectors while a mean of unit vectors is not unit).
struct GlobalObject {
  int id = 0;
  Eigen::VectorXd embedding;       // unit
  Eigen::VectorXd embedding_mean;  // raw running mean
  PointCloud cloud;
  int mapping_count = 0;  // n: number of locals fused in
  std::vector<ViewRecord> views;
  Vec3 camera_position_sum{0, 0, 0};

  Vec3 average_camera_position() const {
    return camera_position_sum / static_cast<double>(mapping_count);
  }
};

struct FusionOptions {
  // Re-downsample the union at the merged object's dynamic voxel size.
  // The literal union grows clouds unboundedly across overlapping views.
  bool refilter_union = true;
  // Optional gate: only accept matches with nonzero spatial overlap.
  bool require_overlap = false;
  // When set, the refilter uses this fixed voxel size instead of the
  // dynamic one (the fixed-strategy benchmark baseline).
  std::optional<double> fixed_voxel;
};

struct ObjectMap {
  std::vector<GlobalObject> objects;
  double base_voxel = 0.01;
  double sim_threshold = 0.45;
  FusionOptions options;

  void validate() const {
    if (base_voxel <= 0.0) throw std::invalid_argument("base_voxel must be positive");
    if (sim_threshold <= 0.0 || sim_threshold >= 2.0)
      throw std::invalid_argument("sim_threshold must lie in (0, 2)");
  }
};

// ============================================================================
// Similarity terms
// ============================================================================

/// Cosine mapped to [0,1]: dot/2 + 1/2. Both inputs must be unit vectors.
/// The dot product accumulates in index order so results are reproducible
/// bit for bit across builds.
inline double semantic_similarity(const Eigen::VectorXd& f_local, const Eigen::VectorXd& f_global) {
  if (f_local.size() != f_global.size())
    throw std::invalid_argument("embedding dimension mismatch");
  double dot = 0.0;
  for (Eigen::Index i = 0; i < f_local.size(); ++i) dot += f_local[i] * f_global[i];
  return dot / 2.0 + 0.5;
}

/// Dynamic nearest-neighbor ratio of the local cloud against the global
/// one, with the size-adaptive threshold.
inline double spatial_similarity(const PointCloud& p_local, const PointCloud& p_global, double base) {
  return nn_ratio(p_local, p_global, dynamic_nn_threshold(p_local, p_global, base));
}

inline double fusion_similarity(const LocalObject& local, const GlobalObject& global, double base) {
  return semantic_similarity(local.embedding, global.embedding) +
         spatial_similarity(local.cloud, global.cloud, base);
}

// ============================================================================
// Matching and fusion
// ============================================================================

/// Highest-similarity global above the threshold, or nullopt. Ties break
/// toward the lowest global id.
inline std::optional<int> match_object(const LocalObject& local, const ObjectMap& map) {
  std::optional<int> best;
  double best_theta = map.sim_threshold;
  for (const GlobalObject& g : map.objects) {
    const double spatial = spatial_similarity(local.cloud, g.cloud, map.base_voxel);
    if (map.options.require_overlap && spatial <= 0.0) continue;
    const double theta = semantic_similarity(local.embedding, g.embedding) + spatial;
    if (theta > best_theta) {
      best_theta = theta;
      best = g.id;
    }
  }
  return best;
}

/// Fuse a matched local into a global: running-mean embedding update,
/// cloud union (re-downsampled at the merged dynamic voxel size unless
/// disabled), n increment, view record append.
inline void fuse(const LocalObject& local, GlobalObject& global, double base_voxel,
                 const FusionOptions& options = {}) {
  const double n = static_cast<double>(global.mapping_count);
  global.embedding_mean = (n * global.embedding_mean + local.embedding) / (n + 1.0);
  global.embedding = unit_normalize(global.embedding_mean);
  global.mapping_count += 1;

  const bool both_colored = global.cloud.has_colors() && local.cloud.has_colors();
  global.cloud.points.insert(global.cloud.points.end(), local.cloud.points.begin(),
                             local.cloud.points.end());
  if (both_colored)
    global.cloud.colors.insert(global.cloud.colors.end(), local.cloud.colors.begin(),
                               local.cloud.colors.end());
  else
    global.cloud.colors.clear();
  if (options.refilter_union) {
    const double voxel =
        options.fixed_voxel ? *options.fixed_voxel : dynamic_voxel_size(global.cloud, base_voxel);
    global.cloud = voxel_downsample(global.cloud, voxel);
  }

  global.views.push_back(ViewRecord{local.frame_index, local.mask.confidence,
                                    local.crop_reference, local.camera_position});
  global.camera_position_sum += local.camera_position;
}

inline GlobalObject make_global(const LocalObject& local, int id) {
  GlobalObject g;
  g.id = id;
  g.embedding_mean = local.embedding;
  g.embedding = unit_normalize(local.embedding);
  g.cloud = local.cloud;
  g.mapping_count = 1;
  g.views.push_back(ViewRecord{local.frame_index, local.mask.confidence, local.crop_reference,
                               local.camera_position});
  g.camera_position_sum = local.camera_position;
  return g;
}

/// Integrate one frame's locals. Matching is decided against the map state
/// at frame start (every similarity evaluated before any fusion of this
/// frame's locals), then fusions and insertions apply in local order.
/// Locals are expected to be dynamically downsampled already.
inline void integrate_frame(ObjectMap& map, const std::vector<LocalObject>& locals) {
  map.validate();
  const std::size_t snapshot_size = map.objects.size();

  struct Snapshot {
    const GlobalObject* global;
    SpatialIndex index;
    Aabb box;
    double sqrt_diag;
  };
  std::vector<Snapshot> snapshot;
  snapshot.reserve(snapshot_size);
  for (std::size_t j = 0; j < snapshot_size; ++j) {
    const GlobalObject& g = map.objects[j];
    Aabb box = bbox(g.cloud);
    snapshot.push_back(Snapshot{&g, SpatialIndex(g.cloud), box, std::sqrt(bbox_diagonal(box))});
  }

  std::vector<std::optional<std::size_t>> matches(locals.size());
  for (std::size_t i = 0; i < locals.size(); ++i) {
    const LocalObject& local = locals[i];
    const Aabb local_box = bbox(local.cloud);
    const double local_sqrt_diag = std::sqrt(bbox_diagonal(local_box));
    double best_theta = map.sim_threshold;
    for (std::size_t j = 0; j < snapshot.size(); ++j) {
      const double threshold =
          map.base_voxel * (local_sqrt_diag + snapshot[j].sqrt_diag) / 2.0;
      double spatial = 0.0;
      // Clouds whose boxes are farther apart than the threshold cannot
      // contain any neighbor pair within it.
      if (bbox_gap(local_box, snapshot[j].box) <= threshold)
        spatial = nn_ratio(local.cloud, snapshot[j].index, threshold);
      if (map.options.require_overlap && spatial <= 0.0) continue;
      const double theta = semantic_similarity(local.embedding, snapshot[j].global->embedding) + spatial;
      if (theta > best_theta) {
        best_theta = theta;
        matches[i] = j;
      }
    }
  }

  for (std::size_t i = 0; i < locals.size(); ++i) {
    if (matches[i])
      fuse(locals[i], map.objects[*matches[i]], map.base_voxel, map.options);
    else
      map.objects.push_back(make_global(locals[i], static_cast<int>(map.objects.size())));
  }
}

// ============================================================================
// Checkpoint serialization: objects.json + one PLY per object cloud
// ============================================================================

namespace detail {

inline nlohmann::json vec3_json(const Vec3& v) { return nlohmann::json{v.x(), v.y(), v.z()}; }
inline Vec3 vec3_from_json(const nlohmann::json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }

inline nlohmann::json vecxd_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vecxd_from_json(const nlohmann::json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
  return v;
}

}  // namespace detail

inline void save_object_map(const ObjectMap& map, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "clouds");
  nlohmann::json j;
  j["base_voxel"] = map.base_voxel;
  j["sim_threshold"] = map.sim_threshold;
  nlohmann::json objs = nlohmann::json::array();
  for (const GlobalObject& g : map.objects) {
    const std::string cloud_rel = "clouds/" + std::to_string(g.id) + ".ply";
    write_ply((dir / cloud_rel).string(), g.cloud);
    nlohmann::json views = nlohmann::json::array();
    for (const ViewRecord& v : g.views)
      views.push_back({{"frame", v.frame_index},
                       {"confidence", v.confidence},
                       {"crop", v.crop_reference},
                       {"camera_position", detail::vec3_json(v.camera_position)}});
    objs.push_back({{"id", g.id},
                    {"n", g.mapping_count},
                    {"embedding", detail::vecxd_json(g.embedding)},
                    {"embedding_mean", detail::vecxd_json(g.embedding_mean)},
                    {"camera_position_sum", detail::vec3_json(g.camera_position_sum)},
                    {"cloud", cloud_rel},
                    {"views", views}});
  }
  j["objects"] = objs;
  std::ofstream out(dir / "objects.json");
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("failed writing objects.json to " + dir.string());
}

inline ObjectMap load_object_map(const std::filesystem::path& dir) {
  std::ifstream in(dir / "objects.json");
  if (!in) throw std::runtime_error("missing objects.json in " + dir.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  ObjectMap map;
  map.base_voxel = j.at("base_voxel").get<double>();
  map.sim_threshold = j.at("sim_threshold").get<double>();
  for (const auto& o : j.at("objects")) {
    GlobalObject g;
    g.id = o.at("id").get<int>();
    g.mapping_count = o.at("n").get<int>();
    g.embedding = detail::vecxd_from_json(o.at("embedding"));
    g.embedding_mean = detail::vecxd_from_json(o.at("embedding_mean"));
    g.camera_position_sum = detail::vec3_from_json(o.at("camera_position_sum"));
    g.cloud = read_ply_cloud((dir / o.at("cloud").get<std::string>()).string());
    for (const auto& v : o.at("views")) {
      ViewRecord rec;
      rec.frame_index = v.at("frame").get<int>();
      rec.confidence = v.at("confidence").get<double>();
      rec.crop_reference = v.at("crop").get<std::string>();
      rec.camera_position = detail::vec3_from_json(v.at("camera_position"));
      g.views.push_back(rec);
    }
    map.objects.push_back(std::move(g));
  }
  return map;
}

}  // namespace sgmapper
