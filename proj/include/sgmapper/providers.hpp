// sgmapper - uniform interfaces for the four foundation-model capabilities
// the pipeline consumes: class-agnostic segmentation, image/text embedding,
// vision-language captioning and text reasoning. Deterministic offline
// mocks live in providers_mock.hpp, HTTP-backed ones in providers_remote.hpp.

#pragma once

#include <sgmapper/image.hpp>

#include <Eigen/Core>

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgmapper {

/// 2D object mask over one frame, with the provider's confidence score.
/// Confidence semantics are provider-defined; it is only used for ranking.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<bool> bitmap;  // row-major, size = width*height
  double confidence = 1.0;

  bool at(int x, int y) const { return bitmap[std::size_t(y) * width + x]; }
  std::size_t true_count() const {
    std::size_t n = 0;
    for (bool b : bitmap) n += b;
    return n;
  }
};

struct ProviderError : std::runtime_error {
  explicit ProviderError(const std::string& what) : std::runtime_error(what) {}
};

class SegmentationProvider {
 public:
  virtual ~SegmentationProvider() = default;
  /// Class-agnostic masks for one frame. `frame_index` lets offline
  /// implementations look the frame up in a manifest; remote ones ignore it.
  virtual std::vector<Mask> segment(const ImageRgb& image, int frame_index) = 0;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual Eigen::VectorXd embed_image_region(const ImageRgb& image, const Mask& mask) = 0;
  virtual Eigen::VectorXd embed_text(const std::string& text) = 0;
  virtual int dimension() const = 0;
};

class CaptionProvider {
 public:
  virtual ~CaptionProvider() = default;
  virtual std::string caption(const ImageRgb& image, const std::string& prompt) = 0;
};

class ReasonProvider {
 public:
  virtual ~ReasonProvider() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

/// Connection settings for one remote provider.
struct ProviderConfig {
  std::string endpoint;     // e.g. http://host:port/v1
  std::string model;
  std::string api_key_env;  // name of the env var holding the key
  double timeout_seconds = 30.0;
  int max_retries = 3;
  int max_concurrency = 4;

  void validate() const {
    if (timeout_seconds <= 0.0) throw std::invalid_argument("provider timeout must be positive");
    if (max_retries < 0) throw std::invalid_argument("provider retries must be >= 0");
    if (max_concurrency < 1) throw std::invalid_argument("provider concurrency must be >= 1");
  }
};

/// Renormalize a provider embedding to unit length.
inline Eigen::VectorXd unit_normalize(Eigen::VectorXd v) {
  const double n = v.norm();
  if (n < 1e-12) throw std::invalid_argument("cannot normalize near-zero embedding");
  return v / n;
}

// ============================================================================
// Prompt templates
// ============================================================================

/// All prompts are data: plain text files with {placeholder} substitution,
/// loaded from a directory. A single trailing newline in each file is
/// stripped so templates can be edited with ordinary tools.
class PromptLibrary {
 public:
  /// Loads every *.txt in `dir`. A missing directory yields an empty
  /// library; the first template lookup then fails with a clear message,
  /// so stages that never touch prompts stay usable.
  static PromptLibrary load(const std::filesystem::path& dir) {
    PromptLibrary lib;
    lib.dir_ = dir.string();
    if (!std::filesystem::is_directory(dir)) return lib;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() != ".txt") continue;
      std::ifstream in(entry.path(), std::ios::binary);
      std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      if (!text.empty() && text.back() == '\n') text.pop_back();
      lib.templates_[entry.path().stem().string()] = std::move(text);
    }
    return lib;
  }

  const std::string& get(const std::string& name) const {
    const auto it = templates_.find(name);
    if (it == templates_.end())
      throw std::runtime_error("unknown prompt template \"" + name + "\" (prompt dir: " + dir_ + ")");
    return it->second;
  }

  std::string render(const std::string& name, const std::map<std::string, std::string>& subs) const {
    std::string text = get(name);
    for (const auto& [key, value] : subs) {
      const std::string token = "{" + key + "}";
      std::size_t pos = 0;
      while ((pos = text.find(token, pos)) != std::string::npos) {
        text.replace(pos, token.size(), value);
        pos += value.size();
      }
    }
    return text;
  }

  bool has(const std::string& name) const { return templates_.count(name) > 0; }

 private:
  std::map<std::string, std::string> templates_;
  std::string dir_;
};

/// Bundle of the four providers a pipeline run needs.
struct ProviderSet {
  std::shared_ptr<SegmentationProvider> segmentation;
  std::shared_ptr<EmbeddingProvider> embedding;
  std::shared_ptr<CaptionProvider> caption;
  std::shared_ptr<ReasonProvider> reason;
};

}  // namespace sgmapper
