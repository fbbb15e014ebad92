// sgmapper - final scene graph assembly: proximity candidates under the
// dynamic NN-ratio threshold, maximum-score spanning forest pruning,
// 8-way relation labeling through the reasoning provider, and
// deterministic JSON serialization.

#pragma once

#include <sgmapper/fusion.hpp>
#include <sgmapper/geometry.hpp>
#include <sgmapper/providers.hpp>

#include <nlohmann/json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace sgmapper {

// ============================================================================
// Relation labels
// ============================================================================

inline const std::array<std::string, 8>& relation_labels() {
  static const std::array<std::string, 8> labels = {
      "a on b", "b on a", "a in b", "b in a", "a part of b", "b part of a", "near",
      "none of these"};
  return labels;
}

/// Strict parse: surrounding whitespace is tolerated, anything else is not.
inline std::optional<std::string> parse_relation(const std::string& raw) {
  const std::size_t begin = raw.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return std::nullopt;
  const std::size_t end = raw.find_last_not_of(" \t\r\n");
  const std::string trimmed = raw.substr(begin, end - begin + 1);
  for (const std::string& label : relation_labels())
    if (trimmed == label) return trimmed;
  return std::nullopt;
}

// ============================================================================
// Graph types
// ============================================================================

struct EdgeCandidate {
  int a = 0, b = 0;  // a < b
  double score = 0.0;
};

struct SceneEdge {
  int a = 0, b = 0;  // a < b
  std::string relation;
  double score = 0.0;
  bool parse_fallback = false;
};

struct SceneNode {
  int id = 0;
  std::string caption;
  double uncertainty = 0.0;
  Vec3 centroid{0, 0, 0};
  Aabb box;
  std::vector<std::string> flags;
  std::optional<Eigen::VectorXd> embedding;
};

struct SceneGraph {
  std::vector<SceneNode> nodes;
  std::vector<SceneEdge> edges;
};

// ============================================================================
// Candidate edges
// ============================================================================

/// Pairs whose directed NN ratios reach `min_ratio` under the dynamic
/// threshold. Pairs with a bounding-box gap beyond 4x that threshold are
/// skipped without computing ratios; the gap bound guarantees they cannot
/// contain any neighbor pair within the threshold.
inline std::vector<EdgeCandidate> candidate_edges(const std::vector<GlobalObject>& objects,
                                                  double base, double min_ratio) {
  if (objects.size() < 2) return {};
  struct Prep {
    const GlobalObject* obj;
    Aabb box;
    double sqrt_diag;
    std::optional<SpatialIndex> index;
  };
  std::vector<Prep> prep;
  prep.reserve(objects.size());
  for (const GlobalObject& g : objects)
    prep.push_back(Prep{&g, bbox(g.cloud), std::sqrt(bbox_diagonal(bbox(g.cloud))), std::nullopt});
  auto index_of = [&](std::size_t i) -> const SpatialIndex& {
    if (!prep[i].index) prep[i].index.emplace(prep[i].obj->cloud);
    return *prep[i].index;
  };

  std::vector<EdgeCandidate> out;
  for (std::size_t i = 0; i < prep.size(); ++i) {
    for (std::size_t j = i + 1; j < prep.size(); ++j) {
      const double threshold = base * (prep[i].sqrt_diag + prep[j].sqrt_diag) / 2.0;
      if (min_ratio > 0.0 && bbox_gap(prep[i].box, prep[j].box) > 4.0 * threshold) continue;
      const double forward = nn_ratio(prep[i].obj->cloud, index_of(j), threshold);
      const double backward = nn_ratio(prep[j].obj->cloud, index_of(i), threshold);
      const double score = std::max(forward, backward);
      if (score >= min_ratio)
        out.push_back(EdgeCandidate{prep[i].obj->id, prep[j].obj->id, score});
    }
  }
  return out;
}

// ============================================================================
// Spanning-forest pruning
// ============================================================================

/// Maximum-score spanning forest (MST under weight 1 - score) per
/// connected component, deterministic through the (a, b) tie-break.
inline std::vector<EdgeCandidate> prune_mst(std::vector<EdgeCandidate> candidates) {
  std::sort(candidates.begin(), candidates.end(), [](const EdgeCandidate& x, const EdgeCandidate& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  std::map<int, int> parent;
  std::function<int(int)> find = [&](int v) {
    auto it = parent.find(v);
    if (it == parent.end() || it->second == v) return v;
    return it->second = find(it->second);
  };
  std::vector<EdgeCandidate> kept;
  for (const EdgeCandidate& e : candidates) {
    const int ra = find(e.a), rb = find(e.b);
    if (ra == rb) continue;
    parent[std::max(ra, rb)] = std::min(ra, rb);
    parent.try_emplace(std::min(ra, rb), std::min(ra, rb));
    kept.push_back(e);
  }
  return kept;
}

// ============================================================================
// Relation labeling
// ============================================================================

namespace detail {

inline std::string format_vec(const Vec3& v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "(%.2f, %.2f, %.2f)", v.x(), v.y(), v.z());
  return buf;
}

inline std::string format_extent(const Aabb& box) {
  const Vec3 s = box.size();
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f x %.2f x %.2f", s.x(), s.y(), s.z());
  return buf;
}

}  // namespace detail

/// One prompt per kept pair; the lower-id node always plays "a". Replies
/// parse strictly against the 8-way label set: one retry with a format
/// reminder, then a flagged "near" fallback. "none of these" drops the
/// edge entirely.
inline std::vector<SceneEdge> label_relations(const std::vector<EdgeCandidate>& pairs,
                                              const std::vector<SceneNode>& nodes,
                                              const PromptLibrary& prompts,
                                              ReasonProvider& provider) {
  auto node_by_id = [&](int id) -> const SceneNode& {
    for (const SceneNode& n : nodes)
      if (n.id == id) return n;
    throw std::invalid_argument("edge references unknown node id " + std::to_string(id));
  };

  std::vector<SceneEdge> edges;
  for (const EdgeCandidate& pair : pairs) {
    const SceneNode& a = node_by_id(std::min(pair.a, pair.b));
    const SceneNode& b = node_by_id(std::max(pair.a, pair.b));
    const std::string prompt =
        prompts.render("relations", {{"caption_a", a.caption},
                                     {"caption_b", b.caption},
                                     {"centroid_a", detail::format_vec(a.centroid)},
                                     {"centroid_b", detail::format_vec(b.centroid)},
                                     {"extent_a", detail::format_extent(a.box)},
                                     {"extent_b", detail::format_extent(b.box)}});

    std::optional<std::string> label;
    bool fallback = false;
    try {
      label = parse_relation(provider.complete(prompt));
      if (!label)
        label = parse_relation(
            provider.complete(prompt + "\n\n" + prompts.get("relation_format_reminder")));
    } catch (const ProviderError&) {
      label = std::nullopt;
    }
    if (!label) {
      label = "near";
      fallback = true;
    }
    if (*label == "none of these") continue;
    edges.push_back(SceneEdge{a.id, b.id, *label, pair.score, fallback});
  }
  return edges;
}

// ============================================================================
// Serialization
// ============================================================================

inline nlohmann::json scene_graph_json(const SceneGraph& graph) {
  SceneGraph sorted = graph;
  std::sort(sorted.nodes.begin(), sorted.nodes.end(),
            [](const SceneNode& a, const SceneNode& b) { return a.id < b.id; });
  std::sort(sorted.edges.begin(), sorted.edges.end(), [](const SceneEdge& a, const SceneEdge& b) {
    if (a.a != b.a) return a.a < b.a;
    return a.b < b.b;
  });
  nlohmann::json nodes = nlohmann::json::array();
  for (const SceneNode& n : sorted.nodes) {
    nlohmann::json jn{{"id", n.id},
                      {"caption", n.caption},
                      {"uncertainty", n.uncertainty},
                      {"centroid", detail::vec3_json(n.centroid)},
                      {"bbox", {{"min", detail::vec3_json(n.box.min)}, {"max", detail::vec3_json(n.box.max)}}}};
    std::vector<std::string> flags = n.flags;
    std::sort(flags.begin(), flags.end());
    jn["flags"] = flags;
    if (n.embedding) jn["embedding"] = detail::vecxd_json(*n.embedding);
    nodes.push_back(jn);
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const SceneEdge& e : sorted.edges) {
    nlohmann::json je{{"a", e.a}, {"b", e.b}, {"relation", e.relation}, {"score", e.score}};
    if (e.parse_fallback) je["parse_fallback"] = true;
    edges.push_back(je);
  }
  return nlohmann::json{{"nodes", nodes}, {"edges", edges}};
}

inline void save_scene_graph(const SceneGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scene graph: " + path.string());
  out << scene_graph_json(graph).dump(2) << "\n";
  if (!out) throw std::runtime_error("scene graph write failed: " + path.string());
}

inline SceneGraph load_scene_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read scene graph: " + path.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  SceneGraph graph;
  for (const auto& jn : j.at("nodes")) {
    SceneNode n;
    n.id = jn.at("id").get<int>();
    n.caption = jn.at("caption").get<std::string>();
    n.uncertainty = jn.at("uncertainty").get<double>();
    n.centroid = detail::vec3_from_json(jn.at("centroid"));
    n.box.min = detail::vec3_from_json(jn.at("bbox").at("min"));
    n.box.max = detail::vec3_from_json(jn.at("bbox").at("max"));
    for (const auto& f : jn.at("flags")) n.flags.push_back(f.get<std::string>());
    if (jn.contains("embedding")) n.embedding = detail::vecxd_from_json(jn["embedding"]);
    graph.nodes.push_back(std::move(n));
  }
  for (const auto& je : j.at("edges")) {
    SceneEdge e;
    e.a = je.at("a").get<int>();
    e.b = je.at("b").get<int>();
    e.relation = je.at("relation").get<std::string>();
    e.score = je.at("score").get<double>();
    e.parse_fallback = je.value("parse_fallback", false);
    graph.edges.push_back(std::move(e));
  }
  return graph;
}

}  // namespace sgmapper
