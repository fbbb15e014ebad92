#include <sgmapper/fixture.hpp>
#include <sgmapper/providers_mock.hpp>
#include <sgmapper/providers_remote.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "../support/test_support.hpp"

#include <atomic>
#include <thread>

using namespace sgmapper;
using Catch::Matchers::WithinAbs;

namespace {

struct StubServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  explicit StubServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server.Post("/v1/chat/completions", [handler](const httplib::Request& req, httplib::Response& res) {
      handler(req, res);
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~StubServer() {
    server.stop();
    thread.join();
  }

  ProviderConfig config() const {
    ProviderConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    c.model = "stub-model";
    c.timeout_seconds = 5.0;
    c.max_retries = 3;
    c.max_concurrency = 4;
    return c;
  }
};

std::string chat_body(const std::string& text) {
  return nlohmann::json{{"choices", {{{"message", {{"content", text}}}}}}}.dump();
}

Mask rect_mask(int w, int h, int x0, int y0, int x1, int y1, double conf = 0.8) {
  Mask m;
  m.width = w;
  m.height = h;
  m.bitmap.assign(std::size_t(w) * h, false);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.bitmap[std::size_t(y) * w + x] = true;
  m.confidence = conf;
  return m;
}

}  // namespace

TEST_CASE("mock segmentation: manifest masks verbatim, unlisted frames empty") {
  MockSegmentationProvider seg;
  std::vector<Mask> masks = {rect_mask(8, 8, 0, 0, 2, 2), rect_mask(8, 8, 2, 2, 5, 5),
                             rect_mask(8, 8, 5, 5, 8, 8)};
  seg.set_masks(0, masks);
  const ImageRgb img(8, 8);

  const auto got = seg.segment(img, 0);
  REQUIRE(got.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) REQUIRE(got[i].bitmap == masks[i].bitmap);
  REQUIRE(seg.segment(img, 7).empty());

  const auto again = seg.segment(img, 0);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(again[i].bitmap == got[i].bitmap);
    REQUIRE(again[i].confidence == got[i].confidence);
  }
}

TEST_CASE("mock segmentation: id-image directory splits per object") {
  testsup::TempDir tmp("mockseg");
  const auto objects = generate_fixture(tmp.path(), FixtureOptions{.frames = 2});
  MockSegmentationProvider seg(tmp.path() / "masks");
  const ImageRgb unused(1, 1);
  const auto masks = seg.segment(unused, 0);
  REQUIRE(masks.size() == objects.size());
  for (const Mask& m : masks) {
    REQUIRE(m.true_count() > 0);
    REQUIRE(m.confidence > 0.0);
    REQUIRE(m.confidence < 1.0);
  }
  REQUIRE(seg.segment(unused, 99).empty());
}

TEST_CASE("mock embeddings: deterministic, synonym cosine, concentration") {
  auto world = std::make_shared<MockWorld>();
  world->embedding_dim = 512;
  world->synonyms.push_back({"a ceramic vase", "a white vase", 0.9});
  MockEmbeddingProvider emb(world);

  REQUIRE(emb.embed_text("chair") == emb.embed_text("chair"));
  REQUIRE_THAT(emb.embed_text("chair").norm(), WithinAbs(1.0, 1e-9));

  const double cos_syn = emb.embed_text("a ceramic vase").dot(emb.embed_text("a white vase"));
  REQUIRE_THAT(cos_syn, WithinAbs(0.9, 0.01));

  std::mt19937_64 rng(71);
  for (int i = 0; i < 100; ++i) {
    const std::string a = "text_a_" + std::to_string(rng());
    const std::string b = "text_b_" + std::to_string(rng());
    REQUIRE(std::abs(emb.embed_text(a).dot(emb.embed_text(b))) < 0.3);
  }
}

TEST_CASE("mock caption and reasoning behaviors") {
  auto world = std::make_shared<MockWorld>();
  world->objects.push_back({0, {200, 40, 40}, "chair", "a red chair", false});
  world->objects.push_back({1, {235, 235, 235}, "wall", "a white wall", true});
  world->relations["a red chair|a white wall"] = "near";

  MockCaptionProvider cap(world);
  ImageRgb chair_img(16, 16);
  for (int i = 0; i < 16 * 16; ++i) {
    chair_img.data[3 * i] = 200;
    chair_img.data[3 * i + 1] = 40;
    chair_img.data[3 * i + 2] = 40;
  }
  REQUIRE(cap.caption(chair_img, "briefly describe") == "a red chair");
  REQUIRE(cap.caption(chair_img, "Answer with exactly one word, foreground or background.") ==
          "foreground");

  ImageRgb wall_img(16, 16, 235);
  REQUIRE(cap.caption(wall_img, "Answer with exactly one word, foreground or background.") ==
          "background");

  cap.fail_next(1);
  REQUIRE_THROWS_AS(cap.caption(chair_img, "x"), ProviderError);
  REQUIRE(cap.caption(chair_img, "x") == "a red chair");  // only one failure injected

  MockReasonProvider reason(world);
  REQUIRE(reason.complete("captions: \"a vase\", \"a vase\", \"a bowl\". "
                          "Reply with one concise caption.") == "a vase");
  REQUIRE(reason.complete("Answer with exactly one of: ... a: \"a red chair\" b: \"a white wall\"") ==
          "near");
  REQUIRE(reason.complete("class \"chair\"\nCandidate nodes:\n3: a blue table\n7: a red chair\n") ==
          "7");
  REQUIRE(reason.complete("class \"sofa\"\nCandidate nodes:\n3: a blue table\n") == "none");
}

TEST_CASE("remote caption: echo fixture") {
  StubServer stub([](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    REQUIRE(body.at("model") == "stub-model");
    REQUIRE(body.at("temperature") == 0);
    // Image rides along as a data URL inside the message content.
    const auto& content = body.at("messages").at(0).at("content");
    REQUIRE(content.is_array());
    REQUIRE(content.at(1).at("image_url").at("url").get<std::string>().starts_with(
        "data:image/png;base64,"));
    res.set_content(chat_body("a wooden chair"), "application/json");
  });
  RemoteCaptionProvider provider(stub.config(), nullptr, 0.01);
  REQUIRE(provider.caption(ImageRgb(4, 4, 10), "describe") == "a wooden chair");
}

TEST_CASE("remote caption: two 500s then success, retry events logged") {
  std::atomic<int> calls{0};
  StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    if (++calls <= 2) {
      res.status = 500;
      res.set_content("boom", "text/plain");
    } else {
      res.set_content(chat_body("recovered"), "application/json");
    }
  });
  RemoteCaptionProvider provider(stub.config(), nullptr, 0.01);
  REQUIRE(provider.caption(ImageRgb(2, 2), "x") == "recovered");
  REQUIRE(calls == 3);
  REQUIRE(provider.client().count_events("retry") == 2);
}

TEST_CASE("remote caption: timeout surfaces as provider error") {
  StubServer stub([](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1500));
    res.set_content(chat_body("late"), "application/json");
  });
  ProviderConfig cfg = stub.config();
  cfg.timeout_seconds = 0.2;
  cfg.max_retries = 0;
  RemoteCaptionProvider provider(cfg, nullptr, 0.01);
  REQUIRE_THROWS_AS(provider.caption(ImageRgb(2, 2), "x"), ProviderError);
}

TEST_CASE("remote reason: 4xx fails immediately without retries") {
  std::atomic<int> calls{0};
  StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 400;
    res.set_content("bad request", "text/plain");
  });
  RemoteReasonProvider provider(stub.config(), nullptr, 0.01);
  REQUIRE_THROWS_WITH(provider.complete("x"), Catch::Matchers::ContainsSubstring("http 400"));
  REQUIRE(calls == 1);
}

TEST_CASE("remote providers: concurrency never exceeds the configured bound") {
  std::atomic<int> in_flight{0};
  std::atomic<int> max_in_flight{0};
  StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    const int now = ++in_flight;
    int seen = max_in_flight.load();
    while (now > seen && !max_in_flight.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    --in_flight;
    res.set_content(chat_body("ok"), "application/json");
  });
  ProviderConfig cfg = stub.config();
  cfg.max_concurrency = 3;
  RemoteReasonProvider provider(cfg, nullptr, 0.01);

  std::vector<std::thread> threads;
  for (int i = 0; i < 12; ++i)
    threads.emplace_back([&, i] { provider.complete("prompt " + std::to_string(i)); });
  for (auto& t : threads) t.join();
  REQUIRE(max_in_flight.load() <= 3);
  REQUIRE(max_in_flight.load() >= 2);  // parallelism actually happened
}

TEST_CASE("remote caption: disk cache short-circuits repeat requests") {
  testsup::TempDir tmp("cache");
  std::atomic<int> calls{0};
  StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.set_content(chat_body("cached answer"), "application/json");
  });
  ResponseCache cache(tmp.path() / "providers");
  RemoteCaptionProvider provider(stub.config(), &cache, 0.01);
  const ImageRgb img(3, 3, 42);
  REQUIRE(provider.caption(img, "p") == "cached answer");
  REQUIRE(provider.caption(img, "p") == "cached answer");
  REQUIRE(calls == 1);
  REQUIRE(provider.client().count_events("cache_hit") == 1);
  // Different prompt misses the cache.
  REQUIRE(provider.caption(img, "q") == "cached answer");
  REQUIRE(calls == 2);
}

TEST_CASE("remote embedding and segmentation endpoints") {
  httplib::Server server;
  server.Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    REQUIRE(body.at("input").contains("kind"));
    res.set_content(nlohmann::json{{"data", {{{"embedding", {0.6, 0.8}}}}}}.dump(),
                    "application/json");
  });
  ImageGray8 mask_img(4, 4, 0);
  mask_img.at(1, 1) = 255;
  testsup::TempDir tmp("remoteseg");
  write_png((tmp.path() / "m.png").string(), mask_img);
  std::ifstream mf(tmp.path() / "m.png", std::ios::binary);
  const std::string mask_png((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
  server.Post("/v1/segment", [&](const httplib::Request&, httplib::Response& res) {
    nlohmann::json masks = nlohmann::json::array();
    masks.push_back({{"png_b64", base64_encode(reinterpret_cast<const std::uint8_t*>(mask_png.data()),
                                               mask_png.size())},
                     {"confidence", 0.75}});
    res.set_content(nlohmann::json{{"masks", masks}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ProviderConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.model = "stub";
  RemoteEmbeddingProvider emb(cfg, 2, nullptr, 0.01);
  const Eigen::VectorXd v = emb.embed_text("hello");
  REQUIRE(v.size() == 2);
  REQUIRE_THAT(unit_normalize(v).norm(), WithinAbs(1.0, 1e-9));

  RemoteEmbeddingProvider wrong_dim(cfg, 7, nullptr, 0.01);
  REQUIRE_THROWS_WITH(wrong_dim.embed_text("hello"),
                      Catch::Matchers::ContainsSubstring("dimension mismatch"));

  RemoteSegmentationProvider seg(cfg, nullptr, 0.01);
  const auto masks = seg.segment(ImageRgb(4, 4), 0);
  REQUIRE(masks.size() == 1);
  REQUIRE(masks[0].true_count() == 1);
  REQUIRE(masks[0].at(1, 1));
  REQUIRE_THAT(masks[0].confidence, WithinAbs(0.75, 1e-9));

  server.stop();
  thread.join();
}
