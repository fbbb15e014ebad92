#include <sgmapper/config.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "../support/test_support.hpp"

using namespace sgmapper;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<std::string> issues_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.issues;
  }
  return {};
}

bool has_issue(const std::vector<std::string>& issues, const std::string& needle) {
  for (const auto& i : issues)
    if (i.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST_CASE("config: empty text yields the reference defaults") {
  const PipelineConfig c = parse_config_text("");
  REQUIRE_THAT(c.sim_threshold, WithinAbs(0.45, 1e-12));
  REQUIRE_THAT(c.base_voxel, WithinAbs(0.01, 1e-12));
  REQUIRE_THAT(c.alpha, WithinAbs(0.2, 1e-12));
  REQUIRE_THAT(c.beta, WithinAbs(0.2, 1e-12));
  REQUIRE(c.top_k == 5);
  REQUIRE(c.min_ratio == 0.1);
  REQUIRE(c.segmentation.kind == "mock");
  REQUIRE(c.fusion.refilter);
  REQUIRE(!c.fusion.require_overlap);
  REQUIRE(c.rag.passes == 1);
  REQUIRE(c.graph.mst);
}

TEST_CASE("config: values parse with sections, comments and quotes") {
  const PipelineConfig c = parse_config_text(R"(
# pipeline settings
dataset = "/data/room0"   # inline comment
base_voxel = 0.005
top_k = 3

[stages]
eval = false

[providers.caption]
kind = "remote"
endpoint = "http://localhost:9000/v1"
model = "caption-vlm-mini"
timeout = 12.5

[reshot]
image_size = 128
)");
  REQUIRE(c.dataset == "/data/room0");
  REQUIRE_THAT(c.base_voxel, WithinAbs(0.005, 1e-12));
  REQUIRE(c.top_k == 3);
  REQUIRE(!c.stages.eval);
  REQUIRE(c.caption.kind == "remote");
  REQUIRE(c.caption.remote.endpoint == "http://localhost:9000/v1");
  REQUIRE(c.caption.remote.model == "caption-vlm-mini");
  REQUIRE_THAT(c.caption.remote.timeout_seconds, WithinAbs(12.5, 1e-12));
  REQUIRE(c.reshot.image_size == 128);
}

TEST_CASE("config: alpha+beta constraint") {
  const auto issues = issues_of("alpha = 0.6\nbeta = 0.6\n");
  REQUIRE(has_issue(issues, "alpha+beta must be < 1"));
}

TEST_CASE("config: negative voxel names the field") {
  const auto issues = issues_of("base_voxel = -0.01\n");
  REQUIRE(issues.size() == 1);
  REQUIRE(has_issue(issues, "base_voxel"));
}

TEST_CASE("config: unknown keys rejected in strict mode") {
  REQUIRE(has_issue(issues_of("basevoxel = 0.01\n"), "unknown key: basevoxel"));
  REQUIRE(has_issue(issues_of("[fusion]\ntypo = true\n"), "unknown key: fusion.typo"));
}

TEST_CASE("config: all violations reported together, not first-only") {
  const auto issues = issues_of(R"(
base_voxel = -1
sim_threshold = 3.5
alpha = 0.9
beta = 0.8
mystery = 1
top_k = 0
)");
  REQUIRE(issues.size() >= 5);
  REQUIRE(has_issue(issues, "base_voxel"));
  REQUIRE(has_issue(issues, "sim_threshold"));
  REQUIRE(has_issue(issues, "alpha+beta"));
  REQUIRE(has_issue(issues, "unknown key: mystery"));
  REQUIRE(has_issue(issues, "top_k"));
}

TEST_CASE("config: remote providers need endpoint and model") {
  const auto issues = issues_of("[providers.reason]\nkind = \"remote\"\n");
  REQUIRE(has_issue(issues, "providers.reason.endpoint is required"));
  REQUIRE(has_issue(issues, "providers.reason.model is required"));

  REQUIRE(has_issue(issues_of("[providers.embedding]\nkind = \"local\"\n"),
                    "providers.embedding.kind"));
}

TEST_CASE("config: malformed input diagnostics") {
  REQUIRE(has_issue(issues_of("just a line\n"), "expected key = value"));
  REQUIRE(has_issue(issues_of("top_k = five\n"), "expected an integer"));
  REQUIRE(has_issue(issues_of("alpha = 0.1\nalpha = 0.2\n"), "duplicate key: alpha"));
  REQUIRE(has_issue(issues_of("gt_ply = \"x.ply\"\n"), "together"));
}
