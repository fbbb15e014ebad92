// sgmapper - object-level retrieval-augmented caption refinement: filter
// background objects, split the rest by uncertainty, build the document
// from the reliable half, and refine the uncertain half with a
// nearest-neighbor context caption and a composite re-shot + crop image.

#pragma once

#include <sgmapper/geometry.hpp>
#include <sgmapper/image.hpp>
#include <sgmapper/providers.hpp>

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace sgmapper {

/// The refinement stage's view of one scene object.
struct RagObject {
  int id = 0;
  std::string aggregated_caption;  // c-hat from the caption stage
  double uncertainty = 0.0;        // u = 1 - s-hat
  Vec3 centroid{0, 0, 0};
  ImageRgb best_crop;              // highest-confidence crop (background filter)
  ImageRgb best_similarity_crop;   // crop with the highest similarity score
  ImageRgb reshot;                 // empty when the re-shot is unavailable
};

struct BackgroundVerdict {
  bool background = false;
  bool flagged = false;  // provider failed; kept fail-open
};

/// Yes/no background filtering on each object's best crop. Provider
/// failures keep the object (fail-open) with a flag.
inline std::vector<BackgroundVerdict> filter_background(const std::vector<RagObject>& objects,
                                                        const PromptLibrary& prompts,
                                                        CaptionProvider& provider) {
  const std::string& prompt = prompts.get("background_filter");
  std::vector<BackgroundVerdict> out(objects.size());
  for (std::size_t i = 0; i < objects.size(); ++i) {
    try {
      const std::string verdict = provider.caption(objects[i].best_crop, prompt);
      out[i].background = verdict.find("background") != std::string::npos;
    } catch (const ProviderError&) {
      out[i].flagged = true;
    }
  }
  return out;
}

/// Ascending-uncertainty split: the first ceil(N/2) positions are the low
/// half. Ties break by ascending object id.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_uncertainty(
    const std::vector<RagObject>& objects) {
  std::vector<std::size_t> order(objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (objects[a].uncertainty != objects[b].uncertainty)
      return objects[a].uncertainty < objects[b].uncertainty;
    return objects[a].id < objects[b].id;
  });
  const std::size_t low_count = (order.size() + 1) / 2;
  return {std::vector<std::size_t>(order.begin(), order.begin() + low_count),
          std::vector<std::size_t>(order.begin() + low_count, order.end())};
}

struct DocumentEntry {
  int object_id = 0;
  std::string caption;
  Vec3 centroid{0, 0, 0};
};

/// Retrieval corpus of reliable objects: caption c = c-hat plus the cloud
/// centroid, under an exact spatial index.
class ObjectDocument {
 public:
  ObjectDocument() = default;
  explicit ObjectDocument(std::vector<DocumentEntry> entries) : entries_(std::move(entries)) {
    std::sort(entries_.begin(), entries_.end(),
              [](const DocumentEntry& a, const DocumentEntry& b) { return a.object_id < b.object_id; });
    if (!entries_.empty()) {
      PointCloud centroids;
      for (const DocumentEntry& e : entries_) centroids.points.push_back(e.centroid);
      index_.emplace(centroids);
    }
  }

  const std::vector<DocumentEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  /// Entry with the nearest centroid, excluding `exclude_id`; equal
  /// distances resolve to the lower object id.
  const DocumentEntry& retrieve_nearest(const Vec3& position, int exclude_id) const {
    if (entries_.empty()) throw std::runtime_error("no context available: document is empty");
    const auto [idx, d2] = index_->nearest(position);
    if (entries_[idx].object_id != exclude_id) return entries_[idx];
    // The excluded object was the winner: scan the remainder.
    std::optional<std::size_t> best;
    double best_d2 = 0;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].object_id == exclude_id) continue;
      const double d = (entries_[i].centroid - position).squaredNorm();
      if (!best || d < best_d2) {
        best = i;
        best_d2 = d;
      }
    }
    if (!best) throw std::runtime_error("no context available: document is empty after exclusion");
    return entries_[*best];
  }

 private:
  std::vector<DocumentEntry> entries_;
  std::optional<SpatialIndex> index_;
};

inline ObjectDocument build_document(const std::vector<RagObject>& objects,
                                     const std::vector<std::size_t>& low_positions) {
  std::vector<DocumentEntry> entries;
  entries.reserve(low_positions.size());
  for (std::size_t pos : low_positions)
    entries.push_back(DocumentEntry{objects[pos].id, objects[pos].aggregated_caption,
                                    objects[pos].centroid});
  return ObjectDocument(std::move(entries));
}

struct CompositeImage {
  ImageRgb image;
  bool reshot_missing = false;
};

/// Re-shot on the left, best crop on the right scaled to matching height.
/// A missing re-shot degrades to the crop alone, flagged.
inline CompositeImage compose_refinement_image(const ImageRgb& reshot, const ImageRgb& crop) {
  if (crop.empty()) throw std::invalid_argument("refinement crop is empty");
  if (reshot.empty()) return CompositeImage{crop, true};
  return CompositeImage{hconcat_scaled(reshot, crop), false};
}

/// Outcome of the refinement stage for one object.
struct FinalCaption {
  int object_id = 0;
  std::string caption;
  std::string source;  // "document", "refined", "background"
  bool background = false;
  bool background_filter_flagged = false;
  bool refine_fallback = false;   // provider failed; c-hat kept
  bool reshot_missing = false;    // composite degraded to the crop alone
  bool no_context = false;        // empty document; prompt had no neighbor
  std::optional<int> neighbor_id;
  std::string env_caption;
};

struct RefineOptions {
  int passes = 1;
  bool append_refined = true;     // feed refined captions into later passes
  bool filter_after_split = false;  // rank everything first, filter only the document
};

/// Full refinement pass(es): background objects keep c-hat and are excluded
/// from the document; the low-uncertainty half anchors the document with
/// c = c-hat; the high half is refined with retrieved context. With
/// `filter_after_split` the 50% split ranks background objects too (the
/// literal ordering), but they still never enter the document nor refine.
inline std::vector<FinalCaption> refine_objects(const std::vector<RagObject>& objects,
                                                const std::vector<BackgroundVerdict>& verdicts,
                                                const PromptLibrary& prompts,
                                                CaptionProvider& provider,
                                                const RefineOptions& options = {}) {
  if (objects.size() != verdicts.size())
    throw std::invalid_argument("verdicts must align with objects");
  if (options.passes < 1) throw std::invalid_argument("passes must be >= 1");

  std::vector<FinalCaption> out(objects.size());
  std::vector<std::size_t> pool;  // positions taking part in the 50% split
  for (std::size_t i = 0; i < objects.size(); ++i) {
    out[i].object_id = objects[i].id;
    out[i].caption = objects[i].aggregated_caption;
    out[i].background_filter_flagged = verdicts[i].flagged;
    if (verdicts[i].background) {
      out[i].background = true;
      out[i].source = "background";
    }
    if (!verdicts[i].background || options.filter_after_split) pool.push_back(i);
  }

  std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
    if (objects[a].uncertainty != objects[b].uncertainty)
      return objects[a].uncertainty < objects[b].uncertainty;
    return objects[a].id < objects[b].id;
  });
  const std::size_t low_count = (pool.size() + 1) / 2;

  std::vector<DocumentEntry> entries;
  std::vector<std::size_t> pending;
  for (std::size_t rank = 0; rank < pool.size(); ++rank) {
    const std::size_t i = pool[rank];
    if (out[i].background) continue;  // ranked under filter_after_split, never used
    if (rank < low_count) {
      out[i].source = "document";
      entries.push_back(DocumentEntry{objects[i].id, objects[i].aggregated_caption,
                                      objects[i].centroid});
    } else {
      pending.push_back(i);
    }
  }

  ObjectDocument document(std::move(entries));
  for (int pass = 0; pass < options.passes; ++pass) {
    std::vector<DocumentEntry> refined_entries;
    for (std::size_t pos : pending) {
      const RagObject& obj = objects[pos];
      FinalCaption& fc = out[pos];
      fc.source = "refined";

      std::string prompt;
      if (!document.empty()) {
        const DocumentEntry& neighbor = document.retrieve_nearest(obj.centroid, obj.id);
        fc.neighbor_id = neighbor.object_id;
        fc.env_caption = neighbor.caption;
        prompt = prompts.render("refine_caption", {{"c_env", neighbor.caption}});
      } else {
        fc.no_context = true;
        prompt = prompts.get("refine_caption_no_context");
      }

      const CompositeImage composite = compose_refinement_image(obj.reshot, obj.best_similarity_crop);
      fc.reshot_missing = composite.reshot_missing;
      try {
        fc.caption = provider.caption(composite.image, prompt);
        if (fc.caption.empty()) throw ProviderError("empty refined caption");
        fc.refine_fallback = false;
      } catch (const ProviderError&) {
        fc.caption = obj.aggregated_caption;
        fc.refine_fallback = true;
      }
      if (options.append_refined)
        refined_entries.push_back(DocumentEntry{obj.id, fc.caption, obj.centroid});
    }
    if (pass + 1 < options.passes && options.append_refined) {
      std::vector<DocumentEntry> merged = document.entries();
      merged.insert(merged.end(), refined_entries.begin(), refined_entries.end());
      document = ObjectDocument(std::move(merged));
    }
  }
  return out;
}

}  // namespace sgmapper
