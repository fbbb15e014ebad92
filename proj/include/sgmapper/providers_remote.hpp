// sgmapper - HTTP-backed providers speaking a chat-completions style JSON
// protocol. Images travel as base64 PNG. Requests retry with exponential
// backoff, respect a per-provider concurrency bound, and successful
// responses are cached on disk keyed by hash(model, prompt, image bytes).

#pragma once

#include <sgmapper/providers.hpp>
#include <sgmapper/sha256.hpp>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

namespace sgmapper {

inline std::string base64_encode(const std::uint8_t* data, std::size_t len) {
  static const char* alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    std::uint32_t chunk = std::uint32_t(data[i]) << 16;
    if (i + 1 < len) chunk |= std::uint32_t(data[i + 1]) << 8;
    if (i + 2 < len) chunk |= std::uint32_t(data[i + 2]);
    out.push_back(alphabet[(chunk >> 18) & 63]);
    out.push_back(alphabet[(chunk >> 12) & 63]);
    out.push_back(i + 1 < len ? alphabet[(chunk >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? alphabet[chunk & 63] : '=');
  }
  return out;
}

inline std::string base64_encode(const std::vector<std::uint8_t>& data) {
  return base64_encode(data.data(), data.size());
}

struct ProviderEvent {
  std::string kind;  // "retry", "cache_hit", "error", ...
  std::string message;
};

/// Content-addressed response cache. Concurrent readers are safe; writers
/// go through a temp file + rename and an in-process mutex.
class ResponseCache {
 public:
  ResponseCache() = default;  // disabled
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  bool enabled() const { return !dir_.empty(); }

  std::optional<std::string> get(const std::string& key) const {
    if (!enabled()) return std::nullopt;
    std::ifstream in(path_for(key), std::ios::binary);
    if (!in) return std::nullopt;
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }

  void put(const std::string& key, const std::string& value) {
    if (!enabled()) return;
    std::lock_guard lock(mutex_);
    const std::filesystem::path final_path = path_for(key);
    std::filesystem::create_directories(final_path.parent_path());
    const std::filesystem::path tmp = final_path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      out << value;
    }
    std::filesystem::rename(tmp, final_path);
  }

 private:
  std::filesystem::path path_for(const std::string& key) const {
    return dir_ / key.substr(0, 2) / (key + ".json");
  }

  std::filesystem::path dir_;
  std::mutex mutex_;
};

namespace detail {

struct EndpointParts {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // possibly empty, no trailing slash
};

inline EndpointParts split_endpoint(const std::string& endpoint) {
  const std::size_t scheme = endpoint.find("://");
  if (scheme == std::string::npos) throw std::invalid_argument("endpoint needs a scheme: " + endpoint);
  const std::size_t path = endpoint.find('/', scheme + 3);
  EndpointParts parts;
  if (path == std::string::npos) {
    parts.origin = endpoint;
  } else {
    parts.origin = endpoint.substr(0, path);
    parts.path_prefix = endpoint.substr(path);
    while (!parts.path_prefix.empty() && parts.path_prefix.back() == '/')
      parts.path_prefix.pop_back();
  }
  return parts;
}

}  // namespace detail

/// Shared request machinery: one POST with JSON in/out, retries with
/// exponential backoff on transport errors and 5xx/429, a global
/// concurrency bound, and event logging.
class RemoteClient {
 public:
  RemoteClient(ProviderConfig config, ResponseCache* cache = nullptr, double backoff_base = 0.25)
      : config_(std::move(config)),
        cache_(cache),
        backoff_base_(backoff_base),
        semaphore_(config_.max_concurrency) {
    config_.validate();
    parts_ = detail::split_endpoint(config_.endpoint);
  }

  const ProviderConfig& config() const { return config_; }

  std::vector<ProviderEvent> events() const {
    std::lock_guard lock(events_mutex_);
    return events_;
  }

  std::size_t count_events(const std::string& kind) const {
    std::lock_guard lock(events_mutex_);
    std::size_t n = 0;
    for (const auto& e : events_)
      if (e.kind == kind) ++n;
    return n;
  }

  /// POST `body` to endpoint/`route`, returning the parsed JSON response.
  /// `cache_key_material` (when non-empty) keys the response cache.
  nlohmann::json post_json(const std::string& route, const nlohmann::json& body,
                           const std::string& cache_key_material) {
    std::string cache_key;
    if (cache_ && cache_->enabled() && !cache_key_material.empty()) {
      cache_key = sha256_hex(cache_key_material);
      if (const auto hit = cache_->get(cache_key)) {
        log("cache_hit", route);
        return nlohmann::json::parse(*hit);
      }
    }

    const std::string request_id = "req-" + std::to_string(next_request_id_++);
    const std::string payload = body.dump();

    semaphore_.acquire();
    struct Release {
      std::counting_semaphore<>& sem;
      ~Release() { sem.release(); }
    } release{semaphore_};

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        log("retry", request_id + " attempt " + std::to_string(attempt) + ": " + last_error);
        const double delay = backoff_base_ * double(1 << (attempt - 1));
        std::this_thread::sleep_for(std::chrono::duration<double>(std::min(delay, 8.0)));
      }
      httplib::Client cli(parts_.origin);
      cli.set_connection_timeout(std::chrono::duration<double>(config_.timeout_seconds));
      cli.set_read_timeout(std::chrono::duration<double>(config_.timeout_seconds));
      cli.set_write_timeout(std::chrono::duration<double>(config_.timeout_seconds));
      httplib::Headers headers;
      if (!config_.api_key_env.empty())
        if (const char* key = std::getenv(config_.api_key_env.c_str()))
          headers.emplace("Authorization", std::string("Bearer ") + key);

      auto res = cli.Post(parts_.path_prefix + route, headers, payload, "application/json");
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500 || res->status == 429) {
        last_error = "http " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        log("error", request_id + " http " + std::to_string(res->status));
        throw ProviderError("provider request " + request_id + " failed with http " +
                            std::to_string(res->status) + ": " + res->body);
      }
      nlohmann::json parsed;
      try {
        parsed = nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        log("error", request_id + " decode: " + e.what());
        throw ProviderError("provider request " + request_id + " returned malformed JSON: " + e.what());
      }
      if (!cache_key.empty()) cache_->put(cache_key, res->body);
      return parsed;
    }
    log("error", request_id + " exhausted retries: " + last_error);
    throw ProviderError("provider request " + request_id + " failed after " +
                        std::to_string(config_.max_retries) + " retries (" + last_error + ")");
  }

 private:
  void log(const std::string& kind, const std::string& message) {
    std::lock_guard lock(events_mutex_);
    events_.push_back(ProviderEvent{kind, message});
  }

  ProviderConfig config_;
  detail::EndpointParts parts_;
  ResponseCache* cache_ = nullptr;
  double backoff_base_;
  std::counting_semaphore<> semaphore_;
  mutable std::mutex events_mutex_;
  std::vector<ProviderEvent> events_;
  std::atomic<std::uint64_t> next_request_id_{1};
};

namespace detail {

inline nlohmann::json chat_request(const std::string& model, const std::string& prompt,
                                   const ImageRgb* image) {
  nlohmann::json content;
  if (image) {
    const std::string data_url =
        "data:image/png;base64," + base64_encode(encode_png(*image));
    content = nlohmann::json::array(
        {{{"type", "text"}, {"text", prompt}},
         {{"type", "image_url"}, {"image_url", {{"url", data_url}}}}});
  } else {
    content = prompt;
  }
  return nlohmann::json{{"model", model},
                        {"temperature", 0},
                        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
}

inline std::string chat_text(const nlohmann::json& response) {
  try {
    return response.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("malformed chat completion response: ") + e.what());
  }
}

}  // namespace detail

class RemoteCaptionProvider : public CaptionProvider {
 public:
  RemoteCaptionProvider(ProviderConfig config, ResponseCache* cache = nullptr,
                        double backoff_base = 0.25)
      : client_(std::move(config), cache, backoff_base) {}

  std::string caption(const ImageRgb& image, const std::string& prompt) override {
    const auto png = encode_png(image);
    const std::string key = client_.config().model + "|" + prompt + "|" +
                            std::string(reinterpret_cast<const char*>(png.data()), png.size());
    const auto response =
        client_.post_json("/chat/completions", detail::chat_request(client_.config().model, prompt, &image), key);
    const std::string text = detail::chat_text(response);
    if (text.empty()) throw ProviderError("provider returned an empty caption");
    return text;
  }

  RemoteClient& client() { return client_; }

 private:
  RemoteClient client_;
};

class RemoteReasonProvider : public ReasonProvider {
 public:
  RemoteReasonProvider(ProviderConfig config, ResponseCache* cache = nullptr,
                       double backoff_base = 0.25)
      : client_(std::move(config), cache, backoff_base) {}

  std::string complete(const std::string& prompt) override {
    const std::string key = client_.config().model + "|" + prompt;
    const auto response =
        client_.post_json("/chat/completions", detail::chat_request(client_.config().model, prompt, nullptr), key);
    const std::string text = detail::chat_text(response);
    if (text.empty()) throw ProviderError("provider returned an empty completion");
    return text;
  }

  RemoteClient& client() { return client_; }

 private:
  RemoteClient client_;
};

/// Embedding endpoint: POST {model, input:{kind,text|image_b64,mask_b64}}
/// answered with {"data":[{"embedding":[...]}]}.
class RemoteEmbeddingProvider : public EmbeddingProvider {
 public:
  RemoteEmbeddingProvider(ProviderConfig config, int dimension, ResponseCache* cache = nullptr,
                          double backoff_base = 0.25)
      : client_(std::move(config), cache, backoff_base), dimension_(dimension) {}

  Eigen::VectorXd embed_text(const std::string& text) override {
    nlohmann::json body{{"model", client_.config().model},
                        {"input", {{"kind", "text"}, {"text", text}}}};
    return parse(client_.post_json("/embeddings", body, client_.config().model + "|text|" + text));
  }

  Eigen::VectorXd embed_image_region(const ImageRgb& image, const Mask& mask) override {
    ImageGray8 mask_img(mask.width, mask.height, 0);
    for (std::size_t i = 0; i < mask.bitmap.size(); ++i) mask_img.data[i] = mask.bitmap[i] ? 255 : 0;
    const auto png = encode_png(image);
    nlohmann::json body{{"model", client_.config().model},
                        {"input",
                         {{"kind", "image_region"},
                          {"image_b64", base64_encode(png)},
                          {"mask_b64", base64_encode(encode_gray_png(mask_img))}}}};
    const std::string key = client_.config().model + "|image|" +
                            std::string(reinterpret_cast<const char*>(png.data()), png.size());
    return parse(client_.post_json("/embeddings", body, key));
  }

  int dimension() const override { return dimension_; }

  RemoteClient& client() { return client_; }

 private:
  static std::vector<std::uint8_t> encode_gray_png(const ImageGray8& img) {
    // Pack into RGB for the shared encoder; the server reads channel 0.
    ImageRgb rgb(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      rgb.data[3 * i] = rgb.data[3 * i + 1] = rgb.data[3 * i + 2] = img.data[i];
    return encode_png(rgb);
  }

  Eigen::VectorXd parse(const nlohmann::json& response) const {
    try {
      const auto& arr = response.at("data").at(0).at("embedding");
      Eigen::VectorXd v(arr.size());
      for (std::size_t i = 0; i < arr.size(); ++i) v[Eigen::Index(i)] = arr.at(i).get<double>();
      if (dimension_ > 0 && v.size() != dimension_)
        throw ProviderError("embedding dimension mismatch: got " + std::to_string(v.size()));
      return v;
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("malformed embedding response: ") + e.what());
    }
  }

  RemoteClient client_;
  int dimension_;
};

/// Segmentation endpoint: POST {model, image_b64} answered with
/// {"masks":[{"png_b64":..., "confidence":...}]}. Mask PNGs are 8-bit
/// grayscale, nonzero = masked.
class RemoteSegmentationProvider : public SegmentationProvider {
 public:
  RemoteSegmentationProvider(ProviderConfig config, ResponseCache* cache = nullptr,
                             double backoff_base = 0.25)
      : client_(std::move(config), cache, backoff_base) {}

  std::vector<Mask> segment(const ImageRgb& image, int) override {
    const auto png = encode_png(image);
    nlohmann::json body{{"model", client_.config().model}, {"image_b64", base64_encode(png)}};
    const std::string key = client_.config().model + "|segment|" +
                            std::string(reinterpret_cast<const char*>(png.data()), png.size());
    const auto response = client_.post_json("/segment", body, key);
    std::vector<Mask> masks;
    try {
      for (const auto& m : response.at("masks")) {
        const std::string png_b64 = m.at("png_b64").get<std::string>();
        Mask mask = decode_mask(png_b64);
        mask.confidence = m.at("confidence").get<double>();
        masks.push_back(std::move(mask));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("malformed segmentation response: ") + e.what());
    }
    return masks;
  }

  RemoteClient& client() { return client_; }

 private:
  static Mask decode_mask(const std::string& b64) {
    static const auto decode_table = [] {
      std::array<int, 256> t{};
      t.fill(-1);
      const char* alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
      for (int i = 0; i < 64; ++i) t[std::uint8_t(alphabet[i])] = i;
      return t;
    }();
    std::vector<std::uint8_t> bytes;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : b64) {
      if (c == '=' || c == '\n' || c == '\r') continue;
      const int v = decode_table[std::uint8_t(c)];
      if (v < 0) throw ProviderError("invalid base64 in segmentation response");
      acc = (acc << 6) | std::uint32_t(v);
      bits += 6;
      if (bits >= 8) {
        bits -= 8;
        bytes.push_back(std::uint8_t(acc >> bits));
      }
    }
    // Decode via a temp file; libpng wants a stream.
    const auto tmp = std::filesystem::temp_directory_path() /
                     ("sgmapper_mask_" + sha256_hex(b64).substr(0, 16) + ".png");
    {
      std::ofstream out(tmp, std::ios::binary);
      out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    }
    const ImageGray8 img = read_png_gray8(tmp.string());
    std::filesystem::remove(tmp);
    Mask mask;
    mask.width = img.width;
    mask.height = img.height;
    mask.bitmap.resize(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) mask.bitmap[i] = img.data[i] != 0;
    return mask;
  }

  RemoteClient client_;
};

}  // namespace sgmapper
