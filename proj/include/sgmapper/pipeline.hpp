// sgmapper - pipeline orchestration: wires providers and prompt templates
// to the stages (map, reshot, caption, refine, edges, eval), with
// content-hash gated stage skipping and a resumable manifest.

#pragma once

#include <sgmapper/caption.hpp>
#include <sgmapper/config.hpp>
#include <sgmapper/eval.hpp>
#include <sgmapper/fixture.hpp>
#include <sgmapper/fusion.hpp>
#include <sgmapper/graph.hpp>
#include <sgmapper/ingest.hpp>
#include <sgmapper/providers_mock.hpp>
#include <sgmapper/providers_remote.hpp>
#include <sgmapper/rag.hpp>
#include <sgmapper/reshot.hpp>
#include <sgmapper/sha256.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace sgmapper {

inline constexpr const char* kVersion = "0.1.0";

namespace detail {

inline std::string combine_hashes(std::vector<std::pair<std::string, std::string>> entries) {
  std::sort(entries.begin(), entries.end());
  Sha256 h;
  for (const auto& [path, digest] : entries) {
    h.update(path);
    h.update(":");
    h.update(digest);
    h.update("\n");
  }
  return h.hex_digest();
}

/// Combined digest over a set of files relative to `root`; nullopt when a
/// file is missing.
inline std::optional<std::string> hash_files(const std::filesystem::path& root,
                                             const std::vector<std::string>& rel_paths) {
  std::vector<std::pair<std::string, std::string>> entries;
  for (const std::string& rel : rel_paths) {
    const std::filesystem::path p = root / rel;
    if (!std::filesystem::is_regular_file(p)) return std::nullopt;
    entries.emplace_back(rel, sha256_file_hex(p.string()));
  }
  return combine_hashes(std::move(entries));
}

inline std::string hash_tree(const std::filesystem::path& root) {
  std::vector<std::pair<std::string, std::string>> entries;
  if (!std::filesystem::exists(root)) return "missing:" + root.string();
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    entries.emplace_back(std::filesystem::relative(entry.path(), root).string(),
                         sha256_file_hex(entry.path().string()));
  }
  return combine_hashes(std::move(entries));
}

}  // namespace detail

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config) : cfg_(std::move(config)), out_(cfg_.output) {
    std::filesystem::create_directories(out_);
    prompts_ = PromptLibrary::load(cfg_.prompt_dir);
    if (cfg_.cache.enabled) cache_ = std::make_unique<ResponseCache>(cfg_.cache.dir);
    load_manifest();
  }

  const PipelineConfig& config() const { return cfg_; }
  const std::filesystem::path& output_dir() const { return out_; }

  // --------------------------------------------------------------------
  // Stage bodies (unconditional execution; `run` adds skip logic)
  // --------------------------------------------------------------------

  std::vector<std::string> stage_map() {
    const FrameSequence sequence(cfg_.dataset);
    ObjectMap map;
    map.base_voxel = cfg_.base_voxel;
    map.sim_threshold = cfg_.sim_threshold;
    map.options.refilter_union = cfg_.fusion.refilter;
    map.options.require_overlap = cfg_.fusion.require_overlap;

    std::vector<std::string> outputs;
    std::filesystem::create_directories(out_ / "crops");
    const IngestOptions ingest = ingest_options();
    for (std::size_t i = 0; i < sequence.size(); ++i) {
      const auto start = std::chrono::steady_clock::now();
      const Frame frame = sequence.load(i);
      std::vector<LocalObject> locals =
          extract_local_objects(frame, segmentation_provider(), embedding_provider(), ingest);
      for (std::size_t k = 0; k < locals.size(); ++k) {
        char name[48];
        std::snprintf(name, sizeof(name), "crops/%06zu_%02zu.png", i, k);
        write_png((out_ / name).string(), locals[k].crop);
        locals[k].crop_reference = name;
        outputs.emplace_back(name);
        locals[k].cloud =
            voxel_downsample(locals[k].cloud, dynamic_voxel_size(locals[k].cloud, cfg_.base_voxel));
      }
      integrate_frame(map, locals);
      log("map", "frame=" + std::to_string(i) + " locals=" + std::to_string(locals.size()) +
                     " globals=" + std::to_string(map.objects.size()) + " seconds=" +
                     std::to_string(elapsed(start)));
    }
    save_object_map(map, out_);
    outputs.emplace_back("objects.json");
    for (const GlobalObject& g : map.objects)
      outputs.emplace_back("clouds/" + std::to_string(g.id) + ".ply");
    return outputs;
  }

  std::vector<std::string> stage_reshot() {
    const ObjectMap map = load_object_map(out_);
    const RenderSettings settings = render_settings();
    std::vector<std::string> outputs;
    for (const GlobalObject& object : map.objects) {
      const auto start = std::chrono::steady_clock::now();
      const std::vector<ViewCandidate> ranked = rank_views(object, settings);
      const std::filesystem::path dir = out_ / "reshots" / std::to_string(object.id);
      std::filesystem::create_directories(dir);
      const int ranks = std::min<int>(cfg_.reshot.ranks, int(ranked.size()));
      for (int k = 0; k < ranks; ++k) {
        const ReshotImage shot = render_point_splat(object.cloud, ranked[k], settings);
        const std::string rel =
            "reshots/" + std::to_string(object.id) + "/rank" + std::to_string(k) + ".png";
        write_png((out_ / rel).string(), shot.pixels);
        outputs.push_back(rel);
      }
      nlohmann::json scores = nlohmann::json::array();
      for (const ViewCandidate& c : ranked)
        scores.push_back({{"index", c.index},
                          {"position", detail::vec3_json(c.camera_position)},
                          {"s_vis", c.s_vis},
                          {"s_up", c.s_up},
                          {"s_prior", c.s_prior},
                          {"s_view", c.s_view}});
      const std::string scores_rel = "reshots/" + std::to_string(object.id) + "/scores.json";
      write_json(out_ / scores_rel, nlohmann::json{{"object", object.id}, {"candidates", scores}});
      outputs.push_back(scores_rel);
      log("reshot", "object=" + std::to_string(object.id) +
                        " candidates=" + std::to_string(ranked.size()) +
                        " best_s_view=" + std::to_string(ranked.front().s_view) +
                        " seconds=" + std::to_string(elapsed(start)));
    }
    return outputs;
  }

  std::vector<std::string> stage_caption() {
    const ObjectMap map = load_object_map(out_);
    const std::string& prompt = prompts_.get("initial_caption");
    nlohmann::json objects = nlohmann::json::array();
    for (const GlobalObject& object : map.objects) {
      UncertaintyRecord record;
      record.object_id = object.id;
      record.crops = top_k_views(object, cfg_.top_k);
      std::vector<ImageRgb> crop_images;
      for (const ViewRecord& view : record.crops)
        crop_images.push_back(read_png_rgb((out_ / view.crop_reference).string()));
      record.crop_captions = initial_captions(crop_images, prompt, caption_provider());

      const std::string reshot_rel = "reshots/" + std::to_string(object.id) + "/rank0.png";
      if (!std::filesystem::exists(out_ / reshot_rel))
        throw std::runtime_error("missing re-shot image " + reshot_rel +
                                 " (run the reshot stage first)");
      record.reshot_caption =
          caption_provider().caption(read_png_rgb((out_ / reshot_rel).string()), prompt);

      std::vector<std::string> surviving;
      std::vector<std::size_t> surviving_slots;
      for (std::size_t s = 0; s < record.crop_captions.size(); ++s)
        if (!record.crop_captions[s].failed) {
          surviving.push_back(record.crop_captions[s].text);
          surviving_slots.push_back(s);
        }
      const std::vector<double> sims =
          caption_similarities(record.reshot_caption, surviving, embedding_provider());
      record.similarities.assign(record.crop_captions.size(), std::nullopt);
      for (std::size_t s = 0; s < surviving_slots.size(); ++s)
        record.similarities[surviving_slots[s]] = sims[s];

      const std::vector<std::size_t> cluster = cluster_top1(sims);
      std::vector<std::string> subset;
      std::vector<double> subset_scores;
      for (std::size_t c : cluster) {
        record.cluster.push_back(surviving_slots[c]);
        subset.push_back(surviving[c]);
        subset_scores.push_back(sims[c]);
      }
      const AggregateResult agg =
          aggregate_captions(subset, subset_scores, prompts_, reason_provider());
      record.aggregated_caption = agg.caption;
      record.s_hat = agg.s_hat;
      record.uncertainty = 1.0 - agg.s_hat;
      record.aggregation_fallback = agg.fallback;

      nlohmann::json crops = nlohmann::json::array();
      for (std::size_t s = 0; s < record.crops.size(); ++s) {
        nlohmann::json c{{"frame", record.crops[s].frame_index},
                         {"confidence", record.crops[s].confidence},
                         {"crop", record.crops[s].crop_reference}};
        c["caption"] = record.crop_captions[s].failed
                           ? nlohmann::json(nullptr)
                           : nlohmann::json(record.crop_captions[s].text);
        c["similarity"] = record.similarities[s] ? nlohmann::json(*record.similarities[s])
                                                 : nlohmann::json(nullptr);
        crops.push_back(c);
      }
      objects.push_back({{"id", record.object_id},
                         {"crops", crops},
                         {"reshot_caption", record.reshot_caption},
                         {"cluster", record.cluster},
                         {"aggregated_caption", record.aggregated_caption},
                         {"s_hat", record.s_hat},
                         {"uncertainty", record.uncertainty},
                         {"aggregation_fallback", record.aggregation_fallback}});
      log("caption", "object=" + std::to_string(object.id) + " s_hat=" +
                         std::to_string(record.s_hat) + " cluster=" +
                         std::to_string(record.cluster.size()) + "/" +
                         std::to_string(record.crops.size()));
    }
    write_json(out_ / "captions.json", nlohmann::json{{"objects", objects}});
    return {"captions.json"};
  }

  std::vector<std::string> stage_refine() {
    const ObjectMap map = load_object_map(out_);
    const nlohmann::json captions = read_json(out_ / "captions.json");

    std::vector<RagObject> rag_objects;
    for (const GlobalObject& object : map.objects) {
      const nlohmann::json* record = nullptr;
      for (const auto& jo : captions.at("objects"))
        if (jo.at("id").get<int>() == object.id) {
          record = &jo;
          break;
        }
      if (!record)
        throw std::runtime_error("captions.json lacks object " + std::to_string(object.id));

      RagObject ro;
      ro.id = object.id;
      ro.aggregated_caption = record->at("aggregated_caption").get<std::string>();
      ro.uncertainty = record->at("uncertainty").get<double>();
      ro.centroid = centroid(object.cloud);
      const auto& crops = record->at("crops");
      if (crops.empty()) throw std::runtime_error("object has no crops");
      ro.best_crop = read_png_rgb((out_ / crops.at(0).at("crop").get<std::string>()).string());
      // Crop with the highest similarity feeds the composite image.
      double best_sim = -2.0;
      std::string best_rel = crops.at(0).at("crop").get<std::string>();
      for (const auto& c : crops) {
        if (c.at("similarity").is_null()) continue;
        const double s = c.at("similarity").get<double>();
        if (s > best_sim) {
          best_sim = s;
          best_rel = c.at("crop").get<std::string>();
        }
      }
      ro.best_similarity_crop = read_png_rgb((out_ / best_rel).string());
      const std::filesystem::path reshot =
          out_ / ("reshots/" + std::to_string(object.id) + "/rank0.png");
      if (std::filesystem::exists(reshot)) ro.reshot = read_png_rgb(reshot.string());
      rag_objects.push_back(std::move(ro));
    }

    const std::vector<BackgroundVerdict> verdicts =
        filter_background(rag_objects, prompts_, caption_provider());
    RefineOptions options;
    options.passes = cfg_.rag.passes;
    options.append_refined = cfg_.rag.append_refined;
    options.filter_after_split = cfg_.rag.filter_after_split;
    const std::vector<FinalCaption> finals =
        refine_objects(rag_objects, verdicts, prompts_, caption_provider(), options);

    nlohmann::json doc_entries = nlohmann::json::array();
    nlohmann::json refinements = nlohmann::json::array();
    for (std::size_t i = 0; i < finals.size(); ++i) {
      const FinalCaption& f = finals[i];
      if (f.source == "document")
        doc_entries.push_back({{"id", f.object_id},
                               {"caption", f.caption},
                               {"centroid", detail::vec3_json(rag_objects[i].centroid)}});
      nlohmann::json jf{{"id", f.object_id},
                        {"caption", f.caption},
                        {"source", f.source},
                        {"background", f.background}};
      if (f.neighbor_id) jf["neighbor_id"] = *f.neighbor_id;
      if (!f.env_caption.empty()) jf["env_caption"] = f.env_caption;
      nlohmann::json flags = nlohmann::json::array();
      if (f.background_filter_flagged) flags.push_back("background_filter_failed");
      if (f.refine_fallback) flags.push_back("refine_fallback");
      if (f.reshot_missing) flags.push_back("reshot_missing");
      if (f.no_context) flags.push_back("no_context");
      jf["flags"] = flags;
      refinements.push_back(jf);
      log("refine", "object=" + std::to_string(f.object_id) + " source=" + f.source);
    }
    write_json(out_ / "document.json", nlohmann::json{{"entries", doc_entries}});
    write_json(out_ / "refinements.json", nlohmann::json{{"objects", refinements}});
    return {"document.json", "refinements.json"};
  }

  std::vector<std::string> stage_edges() {
    const ObjectMap map = load_object_map(out_);
    const nlohmann::json refinements = read_json(out_ / "refinements.json");
    const nlohmann::json captions = read_json(out_ / "captions.json");

    SceneGraph graph;
    for (const GlobalObject& object : map.objects) {
      SceneNode node;
      node.id = object.id;
      node.centroid = centroid(object.cloud);
      node.box = bbox(object.cloud);
      for (const auto& jo : captions.at("objects"))
        if (jo.at("id").get<int>() == object.id) {
          node.uncertainty = jo.at("uncertainty").get<double>();
          if (jo.at("aggregation_fallback").get<bool>()) node.flags.push_back("aggregation_fallback");
        }
      for (const auto& jr : refinements.at("objects"))
        if (jr.at("id").get<int>() == object.id) {
          node.caption = jr.at("caption").get<std::string>();
          if (jr.at("background").get<bool>()) node.flags.push_back("background");
          for (const auto& flag : jr.at("flags")) node.flags.push_back(flag.get<std::string>());
        }
      if (node.caption.empty())
        throw std::runtime_error("no final caption for object " + std::to_string(object.id));
      graph.nodes.push_back(std::move(node));
    }

    std::vector<EdgeCandidate> candidates =
        candidate_edges(map.objects, cfg_.base_voxel, cfg_.min_ratio);
    if (cfg_.graph.mst) candidates = prune_mst(std::move(candidates));
    graph.edges = label_relations(candidates, graph.nodes, prompts_, reason_provider());
    save_scene_graph(graph, out_ / "scene_graph.json");
    log("edges", "nodes=" + std::to_string(graph.nodes.size()) +
                     " edges=" + std::to_string(graph.edges.size()));
    return {"scene_graph.json"};
  }

  std::vector<std::string> stage_eval() {
    const GroundTruthCloud gt = load_ground_truth(cfg_.gt_ply, cfg_.gt_classes);
    const ObjectMap map = load_object_map(out_);

    ClassAssignment assignment;
    if (cfg_.eval_assigner == "caption") {
      const nlohmann::json refinements = read_json(out_ / "refinements.json");
      std::vector<std::pair<int, std::string>> node_captions;
      for (const auto& jr : refinements.at("objects"))
        node_captions.emplace_back(jr.at("id").get<int>(), jr.at("caption").get<std::string>());
      assignment = assign_labels_caption(node_captions, gt.class_names, prompts_, reason_provider());
    } else {
      assignment = assign_labels_embedding(map.objects, gt.class_names, embedding_provider());
    }

    const ConfusionMatrix matrix = nn_confusion(gt, map.objects, assignment, cfg_.jobs);
    const MetricsReport report = metrics(matrix);
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t c = 0; c < gt.class_names.size(); ++c)
      per_class.push_back({{"name", gt.class_names[c]},
                           {"assigned_object", assignment.object_of_class[c]
                                                   ? nlohmann::json(*assignment.object_of_class[c])
                                                   : nlohmann::json(nullptr)},
                           {"support", matrix.row_sum(c)},
                           {"iou", report.iou[c]},
                           {"recall", report.recall[c]},
                           {"precision", report.precision[c]},
                           {"f1", report.f1[c]}});
    write_json(out_ / "metrics.json",
               nlohmann::json{{"m_acc", report.m_acc},
                              {"f_miou", report.f_miou},
                              {"m_f1", report.m_f1},
                              {"assigner", cfg_.eval_assigner},
                              {"classes", per_class}});
    log("eval", "m_acc=" + std::to_string(report.m_acc) + " f_miou=" +
                    std::to_string(report.f_miou) + " m_f1=" + std::to_string(report.m_f1));
    return {"metrics.json"};
  }

  // --------------------------------------------------------------------
  // Orchestration
  // --------------------------------------------------------------------

  /// Run every enabled stage with content-hash gated skipping. Returns 0
  /// on success, 1 on stage failure (partial outputs stay for resume).
  int run() {
    manifest_["version"] = kVersion;
    manifest_["dataset"] = cfg_.dataset;
    manifest_["config_hash"] = config_hash();
    try {
      // Once a stage actually executes, everything downstream re-executes
      // too, even if its regenerated inputs came out byte-identical.
      bool dirty = false;
      std::string upstream = detail::hash_tree(cfg_.dataset);
      if (cfg_.stages.map)
        upstream = process("map", upstream + "|" + stage_config("map"),
                           [this] { return stage_map(); }, dirty);
      if (cfg_.stages.reshot)
        upstream = process("reshot", upstream + "|" + stage_config("reshot"),
                           [this] { return stage_reshot(); }, dirty);
      if (cfg_.stages.caption)
        upstream = process("caption", upstream + "|" + stage_config("caption"),
                           [this] { return stage_caption(); }, dirty);
      if (cfg_.stages.refine)
        upstream = process("refine", upstream + "|" + stage_config("refine"),
                           [this] { return stage_refine(); }, dirty);
      if (cfg_.stages.edges)
        upstream = process("edges", upstream + "|" + stage_config("edges"),
                           [this] { return stage_edges(); }, dirty);
      if (cfg_.stages.eval) {
        if (cfg_.gt_ply.empty()) {
          log("eval", "skipped: no ground truth configured");
        } else {
          const std::string gt_hash = sha256_file_hex(cfg_.gt_ply) + sha256_file_hex(cfg_.gt_classes);
          process("eval", upstream + "|" + gt_hash + "|" + stage_config("eval"),
                  [this] { return stage_eval(); }, dirty);
        }
      }
    } catch (const std::exception& e) {
      log("pipeline", std::string("error: ") + e.what());
      save_manifest();
      return 1;
    }
    save_manifest();
    return 0;
  }

  /// Run one stage unconditionally and record it in the manifest so a
  /// later `run` can skip it.
  void run_single(const std::string& name) {
    const auto body = stage_body(name);
    const auto start = std::chrono::steady_clock::now();
    const std::vector<std::string> outputs = body();
    record_stage(name, sha256_hex(single_stage_fingerprint(name)), outputs, elapsed(start));
    save_manifest();
  }

  std::string single_stage_fingerprint(const std::string& name) {
    // Mirrors the chain `run` builds, so verb-by-verb execution and full
    // runs agree on whether a stage is current.
    std::string upstream = detail::hash_tree(cfg_.dataset);
    for (const char* stage : {"map", "reshot", "caption", "refine", "edges"}) {
      if (name == "eval") break;
      if (name == stage) break;
      upstream = manifest_output_hash(stage).value_or("missing:" + std::string(stage));
    }
    if (name == "eval") {
      upstream = manifest_output_hash("edges").value_or("missing:edges");
      return upstream + "|" + sha256_file_hex(cfg_.gt_ply) + sha256_file_hex(cfg_.gt_classes) + "|" +
             stage_config("eval");
    }
    return upstream + "|" + stage_config(name);
  }

 private:
  using StageFn = std::function<std::vector<std::string>()>;

  StageFn stage_body(const std::string& name) {
    if (name == "map") return [this] { return stage_map(); };
    if (name == "reshot") return [this] { return stage_reshot(); };
    if (name == "caption") return [this] { return stage_caption(); };
    if (name == "refine") return [this] { return stage_refine(); };
    if (name == "edges") return [this] { return stage_edges(); };
    if (name == "eval") return [this] { return stage_eval(); };
    throw std::invalid_argument("unknown stage: " + name);
  }

  IngestOptions ingest_options() const {
    IngestOptions o;
    o.min_points = std::size_t(cfg_.ingest.min_points);
    o.max_depth = cfg_.ingest.max_depth;
    o.erode_masks = cfg_.ingest.erode_masks;
    return o;
  }

  RenderSettings render_settings() const {
    RenderSettings s;
    s.image_size = cfg_.reshot.image_size;
    s.fov_deg = cfg_.reshot.fov_deg;
    s.splat_radius = cfg_.reshot.splat_radius;
    s.hemisphere_scale = cfg_.reshot.hemisphere_scale;
    s.candidate_count = cfg_.candidates;
    s.alpha = cfg_.alpha;
    s.beta = cfg_.beta;
    s.hpr_gamma = cfg_.reshot.hpr_gamma;
    return s;
  }

  // Providers build lazily so a stage only pays for (and validates) the
  // capabilities it actually uses; mock providers share one manifest world.
  MockWorldPtr mock_world() {
    if (!mock_world_) {
      MockWorld world = MockWorld::load(std::filesystem::path(cfg_.dataset) / "manifest.json");
      world.seed = world.seed * 0x9e3779b97f4a7c15ULL + cfg_.seed;
      mock_world_ = std::make_shared<MockWorld>(std::move(world));
    }
    return mock_world_;
  }

  SegmentationProvider& segmentation_provider() {
    if (!providers_.segmentation) {
      if (cfg_.segmentation.kind == "mock")
        providers_.segmentation = std::make_shared<MockSegmentationProvider>(
            std::filesystem::path(cfg_.dataset) / "masks");
      else
        providers_.segmentation =
            std::make_shared<RemoteSegmentationProvider>(cfg_.segmentation.remote, cache_.get());
    }
    return *providers_.segmentation;
  }

  EmbeddingProvider& embedding_provider() {
    if (!providers_.embedding) {
      if (cfg_.embedding.kind == "mock")
        providers_.embedding = std::make_shared<MockEmbeddingProvider>(mock_world());
      else
        providers_.embedding = std::make_shared<RemoteEmbeddingProvider>(
            cfg_.embedding.remote, cfg_.embedding.dim, cache_.get());
    }
    return *providers_.embedding;
  }

  CaptionProvider& caption_provider() {
    if (!providers_.caption) {
      if (cfg_.caption.kind == "mock")
        providers_.caption = std::make_shared<MockCaptionProvider>(mock_world());
      else
        providers_.caption = std::make_shared<RemoteCaptionProvider>(cfg_.caption.remote, cache_.get());
    }
    return *providers_.caption;
  }

  ReasonProvider& reason_provider() {
    if (!providers_.reason) {
      if (cfg_.reason.kind == "mock")
        providers_.reason = std::make_shared<MockReasonProvider>(mock_world());
      else
        providers_.reason = std::make_shared<RemoteReasonProvider>(cfg_.reason.remote, cache_.get());
    }
    return *providers_.reason;
  }

  // ---- stage bookkeeping ------------------------------------------------

  std::string stage_config(const std::string& name) const {
    std::ostringstream s;
    s.precision(17);
    s << kVersion << "|" << name << "|";
    if (name == "map")
      s << cfg_.base_voxel << "," << cfg_.sim_threshold << "," << cfg_.fusion.refilter << ","
        << cfg_.fusion.require_overlap << "," << cfg_.ingest.min_points << ","
        << cfg_.ingest.max_depth << "," << cfg_.ingest.erode_masks << "," << cfg_.seed << ","
        << cfg_.segmentation.kind << "," << cfg_.embedding.kind;
    else if (name == "reshot")
      s << cfg_.candidates << "," << cfg_.alpha << "," << cfg_.beta << ","
        << cfg_.reshot.image_size << "," << cfg_.reshot.fov_deg << "," << cfg_.reshot.splat_radius
        << "," << cfg_.reshot.hemisphere_scale << "," << cfg_.reshot.ranks << ","
        << cfg_.reshot.hpr_gamma;
    else if (name == "caption")
      s << cfg_.top_k << "," << cfg_.caption.kind << "," << cfg_.embedding.kind << ","
        << prompt_hash("initial_caption") << "," << prompt_hash("aggregate_captions");
    else if (name == "refine")
      s << cfg_.rag.passes << "," << cfg_.rag.filter_after_split << "," << cfg_.rag.append_refined
        << "," << cfg_.caption.kind << "," << prompt_hash("background_filter") << ","
        << prompt_hash("refine_caption") << "," << prompt_hash("refine_caption_no_context");
    else if (name == "edges")
      s << cfg_.min_ratio << "," << cfg_.graph.mst << "," << cfg_.reason.kind << ","
        << prompt_hash("relations") << "," << prompt_hash("relation_format_reminder");
    else if (name == "eval")
      s << cfg_.eval_assigner << "," << cfg_.jobs << "," << prompt_hash("assign_class");
    return sha256_hex(s.str());
  }

  std::string prompt_hash(const std::string& name) const {
    return prompts_.has(name) ? sha256_hex(prompts_.get(name)) : "absent:" + name;
  }

  std::string config_hash() const { return sha256_hex(stage_config("map") + stage_config("reshot") +
                                                      stage_config("caption") + stage_config("refine") +
                                                      stage_config("edges") + stage_config("eval")); }

  std::optional<std::string> manifest_output_hash(const std::string& name) const {
    if (!manifest_.contains("stages") || !manifest_["stages"].contains(name)) return std::nullopt;
    return manifest_["stages"][name].value("outputs_hash", std::string());
  }

  /// Skip-or-run one stage; returns the stage's combined output hash and
  /// flips `dirty` whenever the body actually ran.
  std::string process(const std::string& name, const std::string& fingerprint_material,
                      const StageFn& body, bool& dirty) {
    const std::string fingerprint = sha256_hex(fingerprint_material);
    if (!dirty && manifest_.contains("stages") && manifest_["stages"].contains(name)) {
      const auto& record = manifest_["stages"][name];
      if (record.value("fingerprint", std::string()) == fingerprint) {
        std::vector<std::string> outputs;
        for (const auto& o : record.at("outputs")) outputs.push_back(o.get<std::string>());
        const auto current = detail::hash_files(out_, outputs);
        if (current && *current == record.value("outputs_hash", std::string())) {
          log(name, "skipped (outputs current)");
          return *current;
        }
      }
    }
    dirty = true;
    const auto start = std::chrono::steady_clock::now();
    const std::vector<std::string> outputs = body();
    const double seconds = elapsed(start);
    const std::string outputs_hash = record_stage(name, fingerprint, outputs, seconds);
    save_manifest();
    log(name, "done seconds=" + std::to_string(seconds));
    return outputs_hash;
  }

  std::string record_stage(const std::string& name, const std::string& fingerprint,
                           const std::vector<std::string>& outputs, double seconds) {
    const auto hash = detail::hash_files(out_, outputs);
    if (!hash) throw std::runtime_error("stage " + name + " declared a missing output file");
    manifest_["stages"][name] = {{"fingerprint", fingerprint},
                                 {"outputs", outputs},
                                 {"outputs_hash", *hash},
                                 {"seconds", seconds}};
    return *hash;
  }

  void load_manifest() {
    const std::filesystem::path path = out_ / "manifest.json";
    if (std::filesystem::exists(path))
      manifest_ = read_json(path);
    else
      manifest_ = nlohmann::json::object();
    // A stale manifest written by another dataset or config must not gate
    // skipping; fingerprints embed both, so records stay safe to keep.
    manifest_["version"] = kVersion;
    manifest_["dataset"] = cfg_.dataset;
    manifest_["config_hash"] = config_hash();
  }

  void save_manifest() const { write_json(out_ / "manifest.json", manifest_); }

  static nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return nlohmann::json::parse(in);
  }

  static void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing " + path.string());
  }

  static double elapsed(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }

  void log(const std::string& stage, const std::string& message) const {
    std::cout << "stage=" << stage << " " << message << "\n";
  }

  PipelineConfig cfg_;
  std::filesystem::path out_;
  PromptLibrary prompts_;
  ProviderSet providers_;
  MockWorldPtr mock_world_;
  std::unique_ptr<ResponseCache> cache_;
  nlohmann::json manifest_;
};

/// Full-pipeline entry point used by the CLI `run` verb.
inline int run_pipeline(const PipelineConfig& config) { return Pipeline(config).run(); }

}  // namespace sgmapper
