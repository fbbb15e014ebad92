// sgmapper - deterministic offline providers. Each mock is a pure function
// of its inputs plus a manifest/seed, so two pipeline runs over the same
// fixture produce identical results end to end.

#pragma once

#include <sgmapper/providers.hpp>
#include <sgmapper/sha256.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sgmapper {

/// Deterministic pseudo-random unit vector seeded by a text key.
inline Eigen::VectorXd hash_unit_vector(const std::string& key, int dim, std::uint64_t seed) {
  Sha256 h;
  h.update(std::to_string(seed));
  h.update("|");
  h.update(key);
  const auto digest = h.digest();
  std::uint64_t s = 0;
  for (int i = 0; i < 8; ++i) s = (s << 8) | digest[i];
  std::mt19937_64 rng(s);
  Eigen::VectorXd v(dim);
  // Explicit Box-Muller keeps the draw independent of the standard
  // library's distribution implementation.
  for (int i = 0; i < dim; i += 2) {
    const double u1 = (rng() >> 11) * 0x1.0p-53 + 0x1.0p-54;
    const double u2 = (rng() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = r * std::cos(2.0 * M_PI * u2);
    if (i + 1 < dim) v[i + 1] = r * std::sin(2.0 * M_PI * u2);
  }
  return v.normalized();
}

/// One scene object as the mocks know it: a flat color identifying it in
/// renders, a class name, the caption the mock VLM reports, and whether
/// the background filter should reject it.
struct MockObjectInfo {
  int id = 0;
  std::array<int, 3> color{0, 0, 0};
  std::string class_name;
  std::string caption;
  bool background = false;
};

struct MockSynonym {
  std::string a, b;
  double cosine = 1.0;
};

/// Shared manifest knowledge behind the four mocks.
struct MockWorld {
  std::uint64_t seed = 1;
  int embedding_dim = 512;
  std::array<int, 3> background_color{30, 30, 30};
  std::vector<MockObjectInfo> objects;
  std::vector<MockSynonym> synonyms;
  std::map<std::string, std::string> relations;  // "caption_a|caption_b" -> label

  static MockWorld load(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open mock manifest: " + manifest_path.string());
    const nlohmann::json j = nlohmann::json::parse(in);
    MockWorld w;
    w.seed = j.value("seed", std::uint64_t{1});
    w.embedding_dim = j.value("embedding_dim", 512);
    if (j.contains("background_color"))
      for (int i = 0; i < 3; ++i) w.background_color[i] = j["background_color"][i].get<int>();
    for (const auto& o : j.at("objects")) {
      MockObjectInfo info;
      info.id = o.at("id").get<int>();
      for (int i = 0; i < 3; ++i) info.color[i] = o.at("color")[i].get<int>();
      info.class_name = o.at("class").get<std::string>();
      info.caption = o.at("caption").get<std::string>();
      info.background = o.value("background", false);
      w.objects.push_back(info);
    }
    if (j.contains("synonyms"))
      for (const auto& s : j["synonyms"])
        w.synonyms.push_back({s.at("a").get<std::string>(), s.at("b").get<std::string>(),
                              s.at("cos").get<double>()});
    if (j.contains("relations"))
      for (const auto& [key, value] : j["relations"].items())
        w.relations[key] = value.get<std::string>();
    return w;
  }

  /// Object whose palette color dominates the image. Pixels in the central
  /// half of the frame count 4x, mirroring "the central object". Returns
  /// nullptr when no palette color appears.
  const MockObjectInfo* dominant_object(const ImageRgb& img) const {
    std::vector<long long> votes(objects.size(), 0);
    const int cx0 = img.width / 4, cx1 = 3 * img.width / 4;
    const int cy0 = img.height / 4, cy1 = 3 * img.height / 4;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const std::uint8_t* p = img.px(x, y);
        for (std::size_t k = 0; k < objects.size(); ++k) {
          const auto& c = objects[k].color;
          if (std::abs(p[0] - c[0]) <= 12 && std::abs(p[1] - c[1]) <= 12 &&
              std::abs(p[2] - c[2]) <= 12) {
            const bool central = x >= cx0 && x < cx1 && y >= cy0 && y < cy1;
            votes[k] += central ? 4 : 1;
            break;
          }
        }
      }
    long long best = 0;
    const MockObjectInfo* winner = nullptr;
    for (std::size_t k = 0; k < objects.size(); ++k)
      if (votes[k] > best) {
        best = votes[k];
        winner = &objects[k];
      }
    return winner;
  }

  const MockObjectInfo* by_class(const std::string& name) const {
    for (const auto& o : objects)
      if (o.class_name == name) return &o;
    return nullptr;
  }
};

using MockWorldPtr = std::shared_ptr<const MockWorld>;

// ============================================================================
// Segmentation
// ============================================================================

/// Replays masks from a manifest: either programmatically registered
/// per-frame masks, or an id-image directory (masks/%06d.png, pixel value =
/// object id + 1, 0 = background). Frames absent from the manifest yield
/// an empty list.
class MockSegmentationProvider : public SegmentationProvider {
 public:
  MockSegmentationProvider() = default;
  explicit MockSegmentationProvider(std::filesystem::path mask_dir)
      : mask_dir_(std::move(mask_dir)) {}

  void set_masks(int frame_index, std::vector<Mask> masks) {
    by_frame_[frame_index] = std::move(masks);
  }

  std::vector<Mask> segment(const ImageRgb&, int frame_index) override {
    if (const auto it = by_frame_.find(frame_index); it != by_frame_.end()) return it->second;
    if (mask_dir_.empty()) return {};
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", frame_index);
    const std::filesystem::path path = mask_dir_ / name;
    if (!std::filesystem::exists(path)) return {};
    const ImageGray8 ids = read_png_gray8(path.string());

    std::map<std::uint8_t, std::size_t> areas;
    for (std::uint8_t v : ids.data)
      if (v > 0) ++areas[v];
    std::vector<Mask> masks;
    for (const auto& [id_plus_one, area] : areas) {
      Mask m;
      m.width = ids.width;
      m.height = ids.height;
      m.bitmap.assign(ids.data.size(), false);
      for (std::size_t i = 0; i < ids.data.size(); ++i) m.bitmap[i] = (ids.data[i] == id_plus_one);
      // Larger masks rank as better views; any deterministic map to (0,1) works.
      m.confidence = double(area) / (double(area) + 500.0);
      masks.push_back(std::move(m));
    }
    return masks;
  }

 private:
  std::filesystem::path mask_dir_;
  std::map<int, std::vector<Mask>> by_frame_;
};

// ============================================================================
// Embedding
// ============================================================================

/// Hash-seeded unit vectors. Identical text always embeds identically;
/// a synonym table lets configured caption pairs land at a chosen cosine;
/// masked image regions embed as their dominant object's class vector.
class MockEmbeddingProvider : public EmbeddingProvider {
 public:
  explicit MockEmbeddingProvider(MockWorldPtr world) : world_(std::move(world)) {}
  MockEmbeddingProvider(int dim, std::uint64_t seed) {
    auto w = std::make_shared<MockWorld>();
    w->embedding_dim = dim;
    w->seed = seed;
    world_ = std::move(w);
  }

  Eigen::VectorXd embed_text(const std::string& text) override {
    for (const MockSynonym& s : world_->synonyms) {
      if (s.b != text) continue;
      const Eigen::VectorXd base = embed_text(s.a);
      Eigen::VectorXd other = hash_unit_vector("syn:" + text, world_->embedding_dim, world_->seed);
      Eigen::VectorXd ortho = (other - other.dot(base) * base).normalized();
      const double c = std::clamp(s.cosine, -1.0, 1.0);
      return (c * base + std::sqrt(1.0 - c * c) * ortho).normalized();
    }
    return hash_unit_vector(text, world_->embedding_dim, world_->seed);
  }

  Eigen::VectorXd embed_image_region(const ImageRgb& image, const Mask& mask) override {
    // Vote over masked pixels only.
    ImageRgb masked(image.width, image.height, 0);
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        if (mask.at(x, y)) std::copy_n(image.px(x, y), 3, masked.px(x, y));
    if (const MockObjectInfo* obj = world_->dominant_object(masked))
      return embed_text(obj->class_name);
    return hash_unit_vector("region:unknown", world_->embedding_dim, world_->seed);
  }

  int dimension() const override { return world_->embedding_dim; }

 private:
  MockWorldPtr world_;
};

// ============================================================================
// Captioning
// ============================================================================

/// Captions by dominant palette color; answers the background-filter
/// prompt from the manifest's background flag. Tests can inject overrides
/// and failures.
class MockCaptionProvider : public CaptionProvider {
 public:
  explicit MockCaptionProvider(MockWorldPtr world) : world_(std::move(world)) {}

  using Intercept = std::function<std::optional<std::string>(const ImageRgb&, const std::string&)>;
  void set_intercept(Intercept fn) { intercept_ = std::move(fn); }
  void fail_next(int times) { fail_remaining_ = times; }

  const std::vector<std::string>& prompt_log() const { return prompt_log_; }

  std::string caption(const ImageRgb& image, const std::string& prompt) override {
    prompt_log_.push_back(prompt);
    if (fail_remaining_ > 0) {
      --fail_remaining_;
      throw ProviderError("mock caption provider failure (injected)");
    }
    if (intercept_)
      if (auto forced = intercept_(image, prompt)) return *forced;

    const MockObjectInfo* obj = world_->dominant_object(image);
    if (prompt.find("foreground or background") != std::string::npos)
      return obj && obj->background ? "background" : "foreground";
    return obj ? obj->caption : "an object";
  }

 private:
  MockWorldPtr world_;
  Intercept intercept_;
  int fail_remaining_ = 0;
  std::vector<std::string> prompt_log_;
};

// ============================================================================
// Reasoning
// ============================================================================

namespace detail {

inline std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

inline std::vector<std::string> quoted_strings(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = text.find('"', pos)) != std::string::npos) {
    const std::size_t end = text.find('"', pos + 1);
    if (end == std::string::npos) break;
    out.push_back(text.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return out;
}

}  // namespace detail

/// Answers the pipeline's text prompts deterministically:
///  - caption aggregation: majority vote over the quoted caption list
///  - relation labeling: manifest lookup by caption pair, default "near"
///  - class assignment: first candidate whose caption mentions the class
class MockReasonProvider : public ReasonProvider {
 public:
  explicit MockReasonProvider(MockWorldPtr world) : world_(std::move(world)) {}
  MockReasonProvider() : world_(std::make_shared<MockWorld>()) {}

  using Intercept = std::function<std::optional<std::string>(const std::string&)>;
  void set_intercept(Intercept fn) { intercept_ = std::move(fn); }
  void fail_next(int times) { fail_remaining_ = times; }
  const std::vector<std::string>& prompt_log() const { return prompt_log_; }

  std::string complete(const std::string& prompt) override {
    prompt_log_.push_back(prompt);
    if (fail_remaining_ > 0) {
      --fail_remaining_;
      throw ProviderError("mock reason provider failure (injected)");
    }
    if (intercept_)
      if (auto forced = intercept_(prompt)) return *forced;

    if (prompt.find("Reply with one concise caption") != std::string::npos)
      return aggregate(prompt);
    if (prompt.find("Answer with exactly one of") != std::string::npos) return relation(prompt);
    if (prompt.find("Candidate nodes:") != std::string::npos) return assign(prompt);
    return "ok";
  }

 private:
  std::string aggregate(const std::string& prompt) const {
    const auto captions = detail::quoted_strings(prompt);
    if (captions.empty()) return "an object";
    std::map<std::string, int> counts;
    for (const auto& c : captions) ++counts[c];
    // Majority, ties toward the earliest listed caption.
    std::string best = captions.front();
    for (const auto& c : captions)
      if (counts[c] > counts[best]) best = c;
    return best;
  }

  std::string relation(const std::string& prompt) const {
    // Captions of the query pair are the last two quoted strings.
    const auto quoted = detail::quoted_strings(prompt);
    const std::size_t n = quoted.size();
    if (n >= 2) {
      const auto it = world_->relations.find(quoted[n - 2] + "|" + quoted[n - 1]);
      if (it != world_->relations.end()) return it->second;
    }
    return "near";
  }

  std::string assign(const std::string& prompt) const {
    std::string cls;
    if (const std::size_t p = prompt.find("class \""); p != std::string::npos) {
      const std::size_t end = prompt.find('"', p + 7);
      if (end != std::string::npos) cls = prompt.substr(p + 7, end - p - 7);
    }
    const std::string cls_lower = detail::lowercase(cls);
    std::istringstream lines(prompt.substr(prompt.find("Candidate nodes:")));
    std::string line;
    while (std::getline(lines, line)) {
      const std::size_t colon = line.find(": ");
      if (colon == std::string::npos || colon == 0) continue;
      const std::string id_part = line.substr(0, colon);
      if (id_part.find_first_not_of("0123456789") != std::string::npos) continue;
      if (!cls_lower.empty() &&
          detail::lowercase(line.substr(colon + 2)).find(cls_lower) != std::string::npos)
        return id_part;
    }
    return "none";
  }

  MockWorldPtr world_;
  Intercept intercept_;
  int fail_remaining_ = 0;
  std::vector<std::string> prompt_log_;
};

/// Wire a full mock provider set from a fixture manifest.
inline ProviderSet make_mock_providers(const std::filesystem::path& dataset_dir) {
  auto world = std::make_shared<MockWorld>(MockWorld::load(dataset_dir / "manifest.json"));
  ProviderSet set;
  set.segmentation = std::make_shared<MockSegmentationProvider>(dataset_dir / "masks");
  set.embedding = std::make_shared<MockEmbeddingProvider>(world);
  set.caption = std::make_shared<MockCaptionProvider>(world);
  set.reason = std::make_shared<MockReasonProvider>(world);
  return set;
}

}  // namespace sgmapper
