// sgmapper - node caption machinery: top-k crop selection, initial crop
// captions, re-shot caption similarities, top-1 score clustering and LLM
// aggregation into the final <caption, agreement> pair.

#pragma once

#include <sgmapper/fusion.hpp>
#include <sgmapper/providers.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace sgmapper {

/// Up to k view records sorted by descending mask confidence, ties broken
/// by ascending frame index (then crop path for stability).
inline std::vector<ViewRecord> top_k_views(const GlobalObject& object, int k) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  std::vector<ViewRecord> views = object.views;
  std::stable_sort(views.begin(), views.end(), [](const ViewRecord& a, const ViewRecord& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.frame_index != b.frame_index) return a.frame_index < b.frame_index;
    return a.crop_reference < b.crop_reference;
  });
  if (views.size() > std::size_t(k)) views.resize(std::size_t(k));
  return views;
}

struct CaptionSlot {
  std::string text;
  bool failed = false;
};

/// One caption per crop using exactly the given prompt. Per-crop provider
/// failures mark the slot failed; only a full wipeout is fatal.
inline std::vector<CaptionSlot> initial_captions(const std::vector<ImageRgb>& crops,
                                                 const std::string& prompt,
                                                 CaptionProvider& provider) {
  std::vector<CaptionSlot> out;
  out.reserve(crops.size());
  std::size_t failures = 0;
  for (const ImageRgb& crop : crops) {
    CaptionSlot slot;
    try {
      slot.text = provider.caption(crop, prompt);
    } catch (const ProviderError&) {
      slot.failed = true;
      ++failures;
    }
    out.push_back(std::move(slot));
  }
  if (!crops.empty() && failures == crops.size())
    throw ProviderError("caption provider failed for every crop");
  return out;
}

/// Cosine similarity between the re-shot caption embedding and each crop
/// caption embedding. Computed as dot/sqrt(|a|^2 |b|^2) so identical texts
/// score exactly 1.
inline std::vector<double> caption_similarities(const std::string& reshot_caption,
                                                const std::vector<std::string>& captions,
                                                EmbeddingProvider& emb) {
  if (reshot_caption.empty()) throw std::invalid_argument("empty re-shot caption");
  const Eigen::VectorXd ref = emb.embed_text(reshot_caption);
  const double ref_sq = ref.dot(ref);
  if (ref_sq < 1e-24) throw std::invalid_argument("zero re-shot caption embedding");
  std::vector<double> out;
  out.reserve(captions.size());
  for (const std::string& c : captions) {
    if (c.empty()) throw std::invalid_argument("empty crop caption");
    const Eigen::VectorXd v = emb.embed_text(c);
    const double v_sq = v.dot(v);
    if (v_sq < 1e-24) throw std::invalid_argument("zero caption embedding");
    out.push_back(ref.dot(v) / std::sqrt(ref_sq * v_sq));
  }
  return out;
}

/// Indices of the top-1 cluster from 1-D 2-means over the scores
/// (deterministic min/max seeding, at most 50 iterations). Score ranges
/// tighter than `epsilon` collapse into a single cluster, as does a
/// singleton input.
inline std::vector<std::size_t> cluster_top1(const std::vector<double>& scores,
                                             double epsilon = 0.05) {
  if (scores.empty()) throw std::invalid_argument("no scores to cluster");
  std::vector<std::size_t> all(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) all[i] = i;
  if (scores.size() == 1) return all;

  const auto [min_it, max_it] = std::minmax_element(scores.begin(), scores.end());
  if (*max_it - *min_it < epsilon) return all;

  double lo_center = *min_it, hi_center = *max_it;
  std::vector<char> in_hi(scores.size(), 0);
  for (int iter = 0; iter < 50; ++iter) {
    std::vector<char> next(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
      next[i] = std::abs(scores[i] - hi_center) < std::abs(scores[i] - lo_center) ||
                (std::abs(scores[i] - hi_center) == std::abs(scores[i] - lo_center) &&
                 hi_center > lo_center);
    double lo_sum = 0, hi_sum = 0;
    std::size_t lo_n = 0, hi_n = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (next[i]) {
        hi_sum += scores[i];
        ++hi_n;
      } else {
        lo_sum += scores[i];
        ++lo_n;
      }
    }
    if (lo_n == 0 || hi_n == 0) break;  // cannot happen with min/max seeds
    lo_center = lo_sum / double(lo_n);
    hi_center = hi_sum / double(hi_n);
    if (next == in_hi) break;
    in_hi = std::move(next);
  }
  std::vector<std::size_t> top;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (in_hi[i]) top.push_back(i);
  return top;
}

struct AggregateResult {
  std::string caption;   // c-hat
  double s_hat = 0.0;    // mean similarity of the aggregated subset
  bool fallback = false; // provider failed; highest-score caption used
};

/// Aggregate the top-cluster captions into one caption via the reasoning
/// provider; the cluster's scores average into s_hat. On provider failure
/// the highest-score caption is kept and flagged.
inline AggregateResult aggregate_captions(const std::vector<std::string>& subset_captions,
                                          const std::vector<double>& subset_scores,
                                          const PromptLibrary& prompts, ReasonProvider& provider) {
  if (subset_captions.empty() || subset_captions.size() != subset_scores.size())
    throw std::invalid_argument("aggregate needs matching non-empty captions and scores");
  AggregateResult result;
  double sum = 0;
  for (double s : subset_scores) sum += s;
  result.s_hat = sum / double(subset_scores.size());

  std::string joined;
  for (std::size_t i = 0; i < subset_captions.size(); ++i) {
    if (i) joined += ", ";
    joined += "\"" + subset_captions[i] + "\"";
  }
  try {
    result.caption = provider.complete(prompts.render("aggregate_captions", {{"captions", joined}}));
    if (result.caption.empty()) throw ProviderError("empty aggregation");
  } catch (const ProviderError&) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < subset_scores.size(); ++i)
      if (subset_scores[i] > subset_scores[best]) best = i;
    result.caption = subset_captions[best];
    result.fallback = true;
  }
  return result;
}

/// Final caption-uncertainty state of one object.
struct UncertaintyRecord {
  int object_id = 0;
  std::vector<ViewRecord> crops;               // top-k, ranked
  std::vector<CaptionSlot> crop_captions;      // aligned with crops
  std::vector<std::optional<double>> similarities;  // aligned; nullopt for failed slots
  std::string reshot_caption;
  std::vector<std::size_t> cluster;  // indices into crops of the top-1 cluster
  std::string aggregated_caption;    // c-hat
  double s_hat = 0.0;
  double uncertainty = 0.0;  // 1 - s_hat
  bool aggregation_fallback = false;
};

}  // namespace sgmapper
