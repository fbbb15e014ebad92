// sgmapper - pipeline configuration: a TOML-style key = value file with
// [section] headers, strict unknown-key rejection, and exhaustive
// constraint reporting. Defaults reproduce the reference hyperparameters
// (sim threshold 0.45, base voxel 0.01 m, alpha = beta = 0.2, top-k 5).

#pragma once

#include <sgmapper/providers.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sgmapper {

struct ConfigError : std::runtime_error {
  std::vector<std::string> issues;
  explicit ConfigError(std::vector<std::string> list)
      : std::runtime_error(join(list)), issues(std::move(list)) {}

  static std::string join(const std::vector<std::string>& list) {
    std::string s = "invalid configuration:";
    for (const auto& issue : list) s += "\n  - " + issue;
    return s;
  }
};

struct ProviderChoice {
  std::string kind = "mock";  // "mock" or "remote"
  ProviderConfig remote;      // used when kind == "remote"
  int dim = 512;              // embedding provider only
};

struct PipelineConfig {
  std::string dataset;
  std::string output = "out";
  double base_voxel = 0.01;
  double sim_threshold = 0.45;
  int top_k = 5;
  double alpha = 0.2;
  double beta = 0.2;
  int candidates = 64;
  double min_ratio = 0.1;
  std::uint64_t seed = 1;
  int jobs = 4;
  std::string prompt_dir = "prompts";
  std::string gt_ply;
  std::string gt_classes;
  std::string eval_assigner = "embedding";  // or "caption"

  struct {
    bool map = true, reshot = true, caption = true, refine = true, edges = true, eval = true;
  } stages;

  struct {
    bool refilter = true;
    bool require_overlap = false;
  } fusion;

  struct {
    int min_points = 16;
    double max_depth = 10.0;
    bool erode_masks = true;
  } ingest;

  struct {
    int image_size = 256;
    double fov_deg = 60.0;
    int splat_radius = 2;
    double hemisphere_scale = 1.5;
    int ranks = 4;
    double hpr_gamma = 100.0;
  } reshot;

  struct {
    int passes = 1;
    bool filter_after_split = false;
    bool append_refined = true;
  } rag;

  struct {
    bool mst = true;
  } graph;

  ProviderChoice segmentation, embedding, caption, reason;

  struct {
    std::string dir = ".cache/providers";
    bool enabled = false;
  } cache;
};

namespace detail {

struct RawConfig {
  std::map<std::string, std::string> values;  // dotted key -> raw value text
  std::vector<std::string> issues;
};

inline std::string strip(const std::string& s) {
  const std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline RawConfig parse_raw(const std::string& text) {
  RawConfig raw;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    // Strip the first # that is not inside a quoted string.
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quotes = !in_quotes;
      if (line[i] == '#' && !in_quotes) {
        line.resize(i);
        break;
      }
    }
    const std::string t = strip(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        raw.issues.push_back("line " + std::to_string(line_no) + ": malformed section header");
        continue;
      }
      section = strip(t.substr(1, t.size() - 2));
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      raw.issues.push_back("line " + std::to_string(line_no) + ": expected key = value");
      continue;
    }
    const std::string key = strip(t.substr(0, eq));
    std::string value = strip(t.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    const std::string full = section.empty() ? key : section + "." + key;
    if (raw.values.count(full))
      raw.issues.push_back("duplicate key: " + full);
    else
      raw.values[full] = value;
  }
  return raw;
}

class ConfigReader {
 public:
  explicit ConfigReader(RawConfig raw) : raw_(std::move(raw)) { issues_ = raw_.issues; }

  void read(const std::string& key, std::string& out) {
    if (const auto v = take(key)) out = *v;
  }
  void read(const std::string& key, double& out) {
    if (const auto v = take(key)) {
      try {
        std::size_t used = 0;
        out = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("");
      } catch (...) {
        issues_.push_back(key + ": expected a number, got \"" + *v + "\"");
      }
    }
  }
  void read(const std::string& key, int& out) {
    if (const auto v = take(key)) {
      try {
        std::size_t used = 0;
        out = std::stoi(*v, &used);
        if (used != v->size()) throw std::invalid_argument("");
      } catch (...) {
        issues_.push_back(key + ": expected an integer, got \"" + *v + "\"");
      }
    }
  }
  void read(const std::string& key, std::uint64_t& out) {
    if (const auto v = take(key)) {
      try {
        std::size_t used = 0;
        out = std::stoull(*v, &used);
        if (used != v->size()) throw std::invalid_argument("");
      } catch (...) {
        issues_.push_back(key + ": expected an unsigned integer, got \"" + *v + "\"");
      }
    }
  }
  void read(const std::string& key, bool& out) {
    if (const auto v = take(key)) {
      if (*v == "true")
        out = true;
      else if (*v == "false")
        out = false;
      else
        issues_.push_back(key + ": expected true or false, got \"" + *v + "\"");
    }
  }

  void require(bool condition, const std::string& message) {
    if (!condition) issues_.push_back(message);
  }

  /// Everything not consumed by a read() is an unknown key (strict mode).
  void finish() {
    for (const auto& [key, value] : raw_.values)
      if (!consumed_.count(key)) issues_.push_back("unknown key: " + key);
    if (!issues_.empty()) throw ConfigError(issues_);
  }

 private:
  std::optional<std::string> take(const std::string& key) {
    consumed_.insert(key);
    const auto it = raw_.values.find(key);
    if (it == raw_.values.end()) return std::nullopt;
    return it->second;
  }

  RawConfig raw_;
  std::set<std::string> consumed_;
  std::vector<std::string> issues_;
};

inline void read_provider(ConfigReader& reader, const std::string& section, ProviderChoice& out,
                          bool with_dim) {
  reader.read(section + ".kind", out.kind);
  reader.read(section + ".endpoint", out.remote.endpoint);
  reader.read(section + ".model", out.remote.model);
  reader.read(section + ".api_key_env", out.remote.api_key_env);
  reader.read(section + ".timeout", out.remote.timeout_seconds);
  reader.read(section + ".retries", out.remote.max_retries);
  reader.read(section + ".concurrency", out.remote.max_concurrency);
  if (with_dim) reader.read(section + ".dim", out.dim);

  reader.require(out.kind == "mock" || out.kind == "remote",
                 section + ".kind must be \"mock\" or \"remote\"");
  if (out.kind == "remote") {
    reader.require(!out.remote.endpoint.empty(), section + ".endpoint is required for remote");
    reader.require(!out.remote.model.empty(), section + ".model is required for remote");
  }
  reader.require(out.remote.timeout_seconds > 0, section + ".timeout must be positive");
  reader.require(out.remote.max_retries >= 0, section + ".retries must be >= 0");
  reader.require(out.remote.max_concurrency >= 1, section + ".concurrency must be >= 1");
}

}  // namespace detail

/// Parse and validate configuration text. Reports every violation, not
/// just the first, and rejects unknown keys outright.
inline PipelineConfig parse_config_text(const std::string& text) {
  detail::ConfigReader reader(detail::parse_raw(text));
  PipelineConfig c;

  reader.read("dataset", c.dataset);
  reader.read("output", c.output);
  reader.read("base_voxel", c.base_voxel);
  reader.read("sim_threshold", c.sim_threshold);
  reader.read("top_k", c.top_k);
  reader.read("alpha", c.alpha);
  reader.read("beta", c.beta);
  reader.read("candidates", c.candidates);
  reader.read("min_ratio", c.min_ratio);
  reader.read("seed", c.seed);
  reader.read("jobs", c.jobs);
  reader.read("prompt_dir", c.prompt_dir);
  reader.read("gt_ply", c.gt_ply);
  reader.read("gt_classes", c.gt_classes);
  reader.read("eval_assigner", c.eval_assigner);

  reader.read("stages.map", c.stages.map);
  reader.read("stages.reshot", c.stages.reshot);
  reader.read("stages.caption", c.stages.caption);
  reader.read("stages.refine", c.stages.refine);
  reader.read("stages.edges", c.stages.edges);
  reader.read("stages.eval", c.stages.eval);

  reader.read("fusion.refilter", c.fusion.refilter);
  reader.read("fusion.require_overlap", c.fusion.require_overlap);

  reader.read("ingest.min_points", c.ingest.min_points);
  reader.read("ingest.max_depth", c.ingest.max_depth);
  reader.read("ingest.erode_masks", c.ingest.erode_masks);

  reader.read("reshot.image_size", c.reshot.image_size);
  reader.read("reshot.fov_deg", c.reshot.fov_deg);
  reader.read("reshot.splat_radius", c.reshot.splat_radius);
  reader.read("reshot.hemisphere_scale", c.reshot.hemisphere_scale);
  reader.read("reshot.ranks", c.reshot.ranks);
  reader.read("reshot.hpr_gamma", c.reshot.hpr_gamma);

  reader.read("rag.passes", c.rag.passes);
  reader.read("rag.filter_after_split", c.rag.filter_after_split);
  reader.read("rag.append_refined", c.rag.append_refined);

  reader.read("graph.mst", c.graph.mst);

  detail::read_provider(reader, "providers.segmentation", c.segmentation, false);
  detail::read_provider(reader, "providers.embedding", c.embedding, true);
  detail::read_provider(reader, "providers.caption", c.caption, false);
  detail::read_provider(reader, "providers.reason", c.reason, false);

  reader.read("cache.dir", c.cache.dir);
  reader.read("cache.enabled", c.cache.enabled);

  reader.require(c.base_voxel > 0, "base_voxel must be positive");
  reader.require(c.sim_threshold > 0 && c.sim_threshold < 2,
                 "sim_threshold must lie in (0, 2)");
  reader.require(c.top_k >= 1, "top_k must be >= 1");
  reader.require(c.alpha >= 0 && c.beta >= 0, "alpha and beta must be >= 0");
  reader.require(c.alpha + c.beta < 1, "alpha+beta must be < 1");
  reader.require(c.candidates >= 1, "candidates must be >= 1");
  reader.require(c.min_ratio >= 0 && c.min_ratio <= 1, "min_ratio must lie in [0, 1]");
  reader.require(c.jobs >= 1, "jobs must be >= 1");
  reader.require(c.reshot.image_size >= 8, "reshot.image_size must be >= 8");
  reader.require(c.reshot.splat_radius >= 0, "reshot.splat_radius must be >= 0");
  reader.require(c.reshot.hemisphere_scale > 0, "reshot.hemisphere_scale must be positive");
  reader.require(c.reshot.ranks >= 1, "reshot.ranks must be >= 1");
  reader.require(c.reshot.hpr_gamma > 1, "reshot.hpr_gamma must be > 1");
  reader.require(c.rag.passes >= 1, "rag.passes must be >= 1");
  reader.require(c.ingest.min_points >= 1, "ingest.min_points must be >= 1");
  reader.require(c.ingest.max_depth > 0, "ingest.max_depth must be positive");
  reader.require(c.eval_assigner == "embedding" || c.eval_assigner == "caption",
                 "eval_assigner must be \"embedding\" or \"caption\"");
  reader.require(c.gt_ply.empty() == c.gt_classes.empty(),
                 "gt_ply and gt_classes must be provided together");

  reader.finish();
  return c;
}

inline PipelineConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file: " + path.string()});
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

}  // namespace sgmapper
