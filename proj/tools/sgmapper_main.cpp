// sgmapper CLI: open-vocabulary 3D scene graph construction from posed
// RGB-D sequences, stage by stage or as one resumable pipeline run.

#include <sgmapper/config.hpp>
#include <sgmapper/eval.hpp>
#include <sgmapper/fixture.hpp>
#include <sgmapper/pipeline.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace {

using namespace sgmapper;

/// Dataset path for stage verbs that operate on an existing map directory.
std::string dataset_from_manifest(const std::string& map_dir) {
  const std::filesystem::path path = std::filesystem::path(map_dir) / "manifest.json";
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("no manifest.json in " + map_dir +
                             "; pass --dataset or run `sgmapper map` first");
  const nlohmann::json j = nlohmann::json::parse(in);
  const std::string dataset = j.value("dataset", std::string());
  if (dataset.empty()) throw std::runtime_error("manifest.json lacks a dataset path");
  return dataset;
}

struct StageArgs {
  std::string map_dir;
  std::string dataset;
  std::string prompt_dir = "prompts";
};

PipelineConfig stage_config(const StageArgs& args) {
  PipelineConfig cfg;
  cfg.output = args.map_dir;
  cfg.dataset = args.dataset.empty() ? dataset_from_manifest(args.map_dir) : args.dataset;
  cfg.prompt_dir = args.prompt_dir;
  return cfg;
}

void add_stage_options(CLI::App* cmd, StageArgs& args) {
  cmd->add_option("map-dir", args.map_dir, "map output directory")->required();
  cmd->add_option("--dataset", args.dataset, "dataset directory (default: from manifest.json)");
  cmd->add_option("--prompts", args.prompt_dir, "prompt template directory");
}

int run_stage(const PipelineConfig& cfg, const std::string& stage) {
  Pipeline pipeline(cfg);
  pipeline.run_single(stage);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sgmapper: open-vocabulary 3D scene graph construction from RGB-D sequences"};
  app.require_subcommand(1);

  // ---- gen-fixture --------------------------------------------------------
  auto* gen = app.add_subcommand("gen-fixture", "generate a synthetic dataset with mock manifest");
  std::string gen_dir;
  FixtureOptions fixture_options;
  gen->add_option("dir", gen_dir, "output dataset directory")->required();
  gen->add_option("--frames", fixture_options.frames, "frame count");
  gen->add_option("--objects", fixture_options.object_count, "object count (1..5)");
  gen->add_option("--width", fixture_options.width, "image width");
  gen->add_option("--height", fixture_options.height, "image height");
  gen->add_option("--focal", fixture_options.focal, "focal length in pixels");
  gen->add_flag("--wall-scene", fixture_options.wall_scene, "benchmark scene: 10 m wall + floor");
  gen->add_option("--seed", fixture_options.seed, "mock embedding seed");
  bool gen_no_gt = false;
  gen->add_flag("--no-gt", gen_no_gt, "skip ground-truth cloud generation");

  // ---- map ------------------------------------------------------------
  auto* map_cmd = app.add_subcommand("map", "fuse a posed RGB-D sequence into a global object map");
  std::string map_dataset, map_out = "out", map_prompts = "prompts";
  double map_base_voxel = 0.01, map_sim_threshold = 0.45;
  bool map_no_refilter = false, map_require_overlap = false;
  map_cmd->add_option("dataset", map_dataset, "dataset directory")->required();
  map_cmd->add_option("-o,--output", map_out, "output directory");
  map_cmd->add_option("--base-voxel", map_base_voxel, "base voxel size in meters");
  map_cmd->add_option("--sim-threshold", map_sim_threshold, "fusion similarity threshold");
  map_cmd->add_flag("--no-refilter", map_no_refilter, "keep the literal cloud union when fusing");
  map_cmd->add_flag("--require-overlap", map_require_overlap,
                    "only fuse objects with nonzero spatial overlap");
  bool map_no_erode = false;
  map_cmd->add_flag("--no-erode", map_no_erode, "skip 1 px mask erosion before back-projection");
  map_cmd->add_option("--prompts", map_prompts, "prompt template directory");

  // ---- reshot ---------------------------------------------------------
  auto* reshot_cmd = app.add_subcommand("reshot", "render best-view re-shot images per object");
  StageArgs reshot_args;
  double reshot_alpha = 0.2, reshot_beta = 0.2;
  int reshot_candidates = 64, reshot_ranks = 4;
  add_stage_options(reshot_cmd, reshot_args);
  reshot_cmd->add_option("--alpha", reshot_alpha, "uprightness weight");
  reshot_cmd->add_option("--beta", reshot_beta, "prior-alignment weight");
  reshot_cmd->add_option("--candidates", reshot_candidates, "hemisphere candidate count");
  reshot_cmd->add_option("--ranks", reshot_ranks, "rendered views per object");

  // ---- caption ----------------------------------------------------------
  auto* caption_cmd = app.add_subcommand("caption", "caption crops and estimate uncertainty");
  StageArgs caption_args;
  int caption_top_k = 5;
  add_stage_options(caption_cmd, caption_args);
  caption_cmd->add_option("--top-k", caption_top_k, "crop views per object");

  // ---- refine -----------------------------------------------------------
  auto* refine_cmd = app.add_subcommand("refine", "retrieval-augmented caption refinement");
  StageArgs refine_args;
  int refine_passes = 1;
  bool refine_filter_after = false;
  add_stage_options(refine_cmd, refine_args);
  refine_cmd->add_option("--passes", refine_passes, "refinement passes");
  refine_cmd->add_flag("--filter-after-split", refine_filter_after,
                       "rank before background filtering (literal ordering)");

  // ---- edges ------------------------------------------------------------
  auto* edges_cmd = app.add_subcommand("edges", "build and label scene graph edges");
  StageArgs edges_args;
  double edges_min_ratio = 0.1;
  bool edges_no_mst = false;
  add_stage_options(edges_cmd, edges_args);
  edges_cmd->add_option("--min-ratio", edges_min_ratio, "candidate NN-ratio cutoff");
  edges_cmd->add_flag("--no-mst", edges_no_mst, "keep the dense candidate graph");

  // ---- eval ------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "1-NN semantic segmentation evaluation");
  StageArgs eval_args;
  std::string eval_gt, eval_classes, eval_assigner = "embedding";
  add_stage_options(eval_cmd, eval_args);
  eval_cmd->add_option("--gt", eval_gt, "ground-truth PLY with per-vertex labels")->required();
  eval_cmd->add_option("--classes", eval_classes, "class names, one per line")->required();
  eval_cmd->add_option("--assigner", eval_assigner, "label assigner: embedding or caption");

  // ---- bench ------------------------------------------------------------
  auto* bench_cmd = app.add_subcommand("bench", "fixed vs dynamic mapping-time benchmark");
  std::string bench_dataset, bench_out = "bench_out", bench_strategy = "both";
  double bench_base_voxel = 0.01;
  bench_cmd->add_option("dataset", bench_dataset, "dataset directory")->required();
  bench_cmd->add_option("-o,--output", bench_out, "output directory for bench.csv");
  bench_cmd->add_option("--strategy", bench_strategy, "fixed, dynamic, or both");
  bench_cmd->add_option("--base-voxel", bench_base_voxel, "base voxel size in meters");

  // ---- run ------------------------------------------------------------
  auto* run_cmd = app.add_subcommand("run", "full pipeline from a configuration file");
  std::string run_config;
  run_cmd->add_option("config", run_config, "pipeline configuration file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int cli_code = app.exit(e);
    return cli_code == 0 ? 0 : 2;  // usage problems are configuration errors
  }

  try {
    if (*gen) {
      fixture_options.write_gt = !gen_no_gt;
      const auto objects = generate_fixture(gen_dir, fixture_options);
      std::cout << "fixture written to " << gen_dir << " (" << objects.size() << " objects, "
                << fixture_options.frames << " frames)\n";
      return 0;
    }
    if (*map_cmd) {
      PipelineConfig cfg;
      cfg.dataset = map_dataset;
      cfg.output = map_out;
      cfg.base_voxel = map_base_voxel;
      cfg.sim_threshold = map_sim_threshold;
      cfg.fusion.refilter = !map_no_refilter;
      cfg.fusion.require_overlap = map_require_overlap;
      cfg.ingest.erode_masks = !map_no_erode;
      cfg.prompt_dir = map_prompts;
      return run_stage(cfg, "map");
    }
    if (*reshot_cmd) {
      PipelineConfig cfg = stage_config(reshot_args);
      cfg.alpha = reshot_alpha;
      cfg.beta = reshot_beta;
      cfg.candidates = reshot_candidates;
      cfg.reshot.ranks = reshot_ranks;
      return run_stage(cfg, "reshot");
    }
    if (*caption_cmd) {
      PipelineConfig cfg = stage_config(caption_args);
      cfg.top_k = caption_top_k;
      return run_stage(cfg, "caption");
    }
    if (*refine_cmd) {
      PipelineConfig cfg = stage_config(refine_args);
      cfg.rag.passes = refine_passes;
      cfg.rag.filter_after_split = refine_filter_after;
      return run_stage(cfg, "refine");
    }
    if (*edges_cmd) {
      PipelineConfig cfg = stage_config(edges_args);
      cfg.min_ratio = edges_min_ratio;
      cfg.graph.mst = !edges_no_mst;
      return run_stage(cfg, "edges");
    }
    if (*eval_cmd) {
      PipelineConfig cfg = stage_config(eval_args);
      cfg.gt_ply = eval_gt;
      cfg.gt_classes = eval_classes;
      cfg.eval_assigner = eval_assigner;
      if (eval_assigner != "embedding" && eval_assigner != "caption")
        throw ConfigError({"--assigner must be embedding or caption"});
      return run_stage(cfg, "eval");
    }
    if (*bench_cmd) {
      if (bench_strategy != "both" && bench_strategy != "fixed" && bench_strategy != "dynamic")
        throw ConfigError({"--strategy must be fixed, dynamic, or both"});
      const FrameSequence sequence(bench_dataset);
      auto providers = make_mock_providers(bench_dataset);
      std::vector<BenchReport> reports;
      for (const DownsampleStrategy strategy :
           {DownsampleStrategy::kFixed, DownsampleStrategy::kDynamic}) {
        if (bench_strategy != "both" && bench_strategy != strategy_name(strategy)) continue;
        reports.push_back(benchmark_mapping(sequence, *providers.segmentation,
                                            *providers.embedding, bench_base_voxel, strategy));
        const BenchReport& r = reports.back();
        std::cout << "strategy=" << strategy_name(strategy) << " mean=" << r.mean_seconds
                  << "s median=" << r.median_seconds
                  << "s largest_object_points=" << r.largest_object_points << "\n";
      }
      std::filesystem::create_directories(bench_out);
      write_bench_csv(reports, (std::filesystem::path(bench_out) / "bench.csv").string());
      if (reports.size() == 2 && reports[1].mean_seconds > 0)
        std::cout << "dynamic/fixed mean ratio: " << reports[1].mean_seconds / reports[0].mean_seconds
                  << "\n";
      return 0;
    }
    if (*run_cmd) {
      const PipelineConfig cfg = parse_config_file(run_config);
      return run_pipeline(cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
