// sgmapper - evaluation machinery: class-to-object label assignment from
// fused embeddings or node captions, a 1-NN confusion matrix against
// ground-truth clouds, mAcc / f-mIoU / mF1, and the fixed-vs-dynamic
// mapping-time benchmark.

#pragma once

#include <sgmapper/fusion.hpp>
#include <sgmapper/geometry.hpp>
#include <sgmapper/ingest.hpp>
#include <sgmapper/ply.hpp>
#include <sgmapper/providers.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace sgmapper {

struct GroundTruthCloud {
  PointCloud points;
  std::vector<std::int32_t> labels;       // per-point class index
  std::vector<std::string> class_names;   // index = class id

  void validate() const {
    if (labels.size() != points.size())
      throw std::invalid_argument("ground truth labels must match point count");
    for (std::int32_t l : labels)
      if (l < 0 || std::size_t(l) >= class_names.size())
        throw std::invalid_argument("ground truth label out of range");
  }
};

inline GroundTruthCloud load_ground_truth(const std::string& ply_path,
                                          const std::string& classes_path) {
  GroundTruthCloud gt;
  LabeledCloud data = read_ply(ply_path);
  if (!data.has_labels()) throw std::runtime_error("ground truth ply has no label property");
  gt.points = std::move(data.cloud);
  gt.labels = std::move(data.labels);
  std::ifstream in(classes_path);
  if (!in) throw std::runtime_error("cannot open classes file: " + classes_path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) gt.class_names.push_back(line);
  }
  gt.validate();
  return gt;
}

// ============================================================================
// Label assignment
// ============================================================================

/// class index -> predicted object, with the strength used to resolve
/// inverse (object -> class) conflicts.
struct ClassAssignment {
  std::vector<std::optional<int>> object_of_class;
  std::vector<double> strength;  // cosine for the embedding route, 1.0 otherwise
};

/// For each class, the object whose fused embedding is most similar to the
/// class-name text embedding. Ties break to the lower object id;
/// many-to-one assignments are allowed.
inline ClassAssignment assign_labels_embedding(const std::vector<GlobalObject>& objects,
                                               const std::vector<std::string>& class_names,
                                               EmbeddingProvider& emb) {
  if (class_names.empty()) throw std::invalid_argument("no class names");
  ClassAssignment out;
  out.object_of_class.resize(class_names.size());
  out.strength.assign(class_names.size(), 0.0);
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    if (objects.empty()) continue;
    const Eigen::VectorXd text = unit_normalize(emb.embed_text(class_names[c]));
    double best = -2.0;
    for (const GlobalObject& g : objects) {
      const double cosine = text.dot(g.embedding);
      if (cosine > best ||
          (cosine == best && out.object_of_class[c] && g.id < *out.object_of_class[c])) {
        best = cosine;
        out.object_of_class[c] = g.id;
      }
    }
    out.strength[c] = best;
  }
  return out;
}

/// Caption-based variant: the reasoning provider picks one node id per
/// class from an enumerated caption list. Unparseable or out-of-range
/// replies leave the class unmatched.
inline ClassAssignment assign_labels_caption(const std::vector<std::pair<int, std::string>>& node_captions,
                                             const std::vector<std::string>& class_names,
                                             const PromptLibrary& prompts,
                                             ReasonProvider& provider) {
  if (class_names.empty()) throw std::invalid_argument("no class names");
  ClassAssignment out;
  out.object_of_class.resize(class_names.size());
  out.strength.assign(class_names.size(), 1.0);

  std::string listing;
  for (const auto& [id, caption] : node_captions)
    listing += std::to_string(id) + ": " + caption + "\n";
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    if (node_captions.empty()) continue;
    std::string reply;
    try {
      reply = provider.complete(
          prompts.render("assign_class", {{"class", class_names[c]}, {"nodes", listing}}));
    } catch (const ProviderError&) {
      continue;  // unmatched, flagged by the caller's report
    }
    const std::size_t begin = reply.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) continue;
    const std::size_t end = reply.find_last_not_of(" \t\r\n");
    const std::string token = reply.substr(begin, end - begin + 1);
    if (token.find_first_not_of("0123456789") != std::string::npos) continue;
    const int id = std::stoi(token);
    for (const auto& [node_id, caption] : node_captions)
      if (node_id == id) {
        out.object_of_class[c] = id;
        break;
      }
  }
  return out;
}

// ============================================================================
// Confusion matrix
// ============================================================================

/// C x (C+1) count matrix; the final column collects GT points whose 1-NN
/// object carries no assigned class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes)
      : classes_(classes), counts_(classes * (classes + 1), 0) {}

  std::size_t classes() const { return classes_; }
  std::int64_t& at(std::size_t gt, std::size_t pred) { return counts_[gt * (classes_ + 1) + pred]; }
  std::int64_t at(std::size_t gt, std::size_t pred) const {
    return counts_[gt * (classes_ + 1) + pred];
  }
  std::size_t unmatched_column() const { return classes_; }

  std::int64_t row_sum(std::size_t gt) const {
    std::int64_t s = 0;
    for (std::size_t p = 0; p <= classes_; ++p) s += at(gt, p);
    return s;
  }
  std::int64_t col_sum(std::size_t pred) const {
    std::int64_t s = 0;
    for (std::size_t g = 0; g < classes_; ++g) s += at(g, pred);
    return s;
  }
  std::int64_t total() const {
    std::int64_t s = 0;
    for (std::int64_t v : counts_) s += v;
    return s;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

 private:
  std::size_t classes_;
  std::vector<std::int64_t> counts_;
};

/// 1-NN transfer of predicted classes onto the GT cloud. Every GT point
/// finds its nearest predicted point over the union of object clouds; the
/// owning object's assigned class (inverse of `assignment`, conflicts to
/// the strongest class) becomes the prediction.
inline ConfusionMatrix nn_confusion(const GroundTruthCloud& gt,
                                    const std::vector<GlobalObject>& objects,
                                    const ClassAssignment& assignment, int jobs = 4) {
  gt.validate();
  const std::size_t classes = gt.class_names.size();
  ConfusionMatrix matrix(classes);

  PointCloud united;
  std::vector<int> owner;  // union point -> object position
  for (std::size_t k = 0; k < objects.size(); ++k) {
    united.points.insert(united.points.end(), objects[k].cloud.points.begin(),
                         objects[k].cloud.points.end());
    owner.insert(owner.end(), objects[k].cloud.size(), static_cast<int>(k));
  }
  if (united.empty()) {
    for (std::size_t i = 0; i < gt.points.size(); ++i)
      ++matrix.at(std::size_t(gt.labels[i]), matrix.unmatched_column());
    return matrix;
  }

  // Invert class -> object; an object claimed by several classes keeps the
  // strongest (then lowest class index).
  std::vector<std::optional<std::size_t>> class_of_object(objects.size());
  std::vector<double> strength_of_object(objects.size(), -3.0);
  for (std::size_t c = 0; c < assignment.object_of_class.size(); ++c) {
    if (!assignment.object_of_class[c]) continue;
    for (std::size_t k = 0; k < objects.size(); ++k) {
      if (objects[k].id != *assignment.object_of_class[c]) continue;
      if (assignment.strength[c] > strength_of_object[k]) {
        strength_of_object[k] = assignment.strength[c];
        class_of_object[k] = c;
      }
      break;
    }
  }

  const SpatialIndex index(united);
  const std::size_t n = gt.points.size();
  const int threads = std::max(1, std::min<int>(jobs, int(std::thread::hardware_concurrency())));
  std::vector<ConfusionMatrix> partial(threads, ConfusionMatrix(classes));
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      for (std::size_t i = begin; i < end; ++i) {
        const auto [nearest_idx, d2] = index.nearest(gt.points.points[i]);
        const int object_pos = owner[nearest_idx];
        const auto cls = class_of_object[object_pos];
        const std::size_t col = cls ? *cls : matrix.unmatched_column();
        ++partial[t].at(std::size_t(gt.labels[i]), col);
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& p : partial) matrix += p;
  return matrix;
}

// ============================================================================
// Metrics
// ============================================================================

struct MetricsReport {
  double m_acc = 0.0;   // class-mean recall over classes with support
  double f_miou = 0.0;  // frequency-weighted mean IoU
  double m_f1 = 0.0;    // class-mean F1 over classes with support
  std::vector<double> iou, recall, precision, f1;  // per class; NaN without support
};

inline MetricsReport metrics(const ConfusionMatrix& matrix) {
  if (matrix.total() == 0) throw std::invalid_argument("confusion matrix is empty");
  const std::size_t classes = matrix.classes();
  MetricsReport report;
  report.iou.assign(classes, std::numeric_limits<double>::quiet_NaN());
  report.recall.assign(classes, std::numeric_limits<double>::quiet_NaN());
  report.precision.assign(classes, std::numeric_limits<double>::quiet_NaN());
  report.f1.assign(classes, std::numeric_limits<double>::quiet_NaN());

  double recall_sum = 0, f1_sum = 0, fmiou_sum = 0;
  std::size_t supported = 0;
  const double total = double(matrix.total());
  for (std::size_t c = 0; c < classes; ++c) {
    const double row = double(matrix.row_sum(c));
    const double col = double(matrix.col_sum(c));
    const double diag = double(matrix.at(c, c));
    if (col > 0) report.precision[c] = diag / col;
    if (row == 0) continue;  // classes without GT support stay out of the means
    ++supported;
    report.recall[c] = diag / row;
    report.iou[c] = row + col - diag > 0 ? diag / (row + col - diag) : 0.0;
    report.f1[c] = row + col > 0 ? 2.0 * diag / (row + col) : 0.0;
    recall_sum += report.recall[c];
    f1_sum += report.f1[c];
    fmiou_sum += (row / total) * report.iou[c];
  }
  if (supported == 0) throw std::invalid_argument("confusion matrix has no supported class");
  report.m_acc = recall_sum / double(supported);
  report.m_f1 = f1_sum / double(supported);
  report.f_miou = fmiou_sum;
  return report;
}

// ============================================================================
// Mapping-time benchmark
// ============================================================================

enum class DownsampleStrategy { kFixed, kDynamic };

inline const char* strategy_name(DownsampleStrategy s) {
  return s == DownsampleStrategy::kFixed ? "fixed" : "dynamic";
}

struct BenchIteration {
  int frame = 0;
  double seconds = 0.0;          // downsample + integrate, provider time excluded
  std::size_t points_in = 0;     // raw back-projected points this frame
  std::size_t points_kept = 0;   // after downsampling
};

struct BenchReport {
  DownsampleStrategy strategy = DownsampleStrategy::kDynamic;
  std::vector<BenchIteration> iterations;
  double mean_seconds = 0.0;
  double median_seconds = 0.0;
  std::size_t largest_object_points = 0;   // final size of the biggest cloud
  std::vector<GlobalObject> final_objects; // end-of-run global list

  bool empty() const { return iterations.empty(); }
};

/// Times the mapping iteration (local downsample + integrate_frame) over a
/// sequence, with provider work excluded from the clock. The fixed
/// strategy uses `base` for every object and for the union refilter; the
/// dynamic strategy uses the size-adaptive voxel.
inline BenchReport benchmark_mapping(const FrameSequence& sequence, SegmentationProvider& seg,
                                     EmbeddingProvider& emb, double base,
                                     DownsampleStrategy strategy,
                                     const IngestOptions& ingest_options = {}) {
  BenchReport report;
  report.strategy = strategy;
  ObjectMap map;
  map.base_voxel = base;
  if (strategy == DownsampleStrategy::kFixed) map.options.fixed_voxel = base;

  for (std::size_t i = 0; i < sequence.size(); ++i) {
    const Frame frame = sequence.load(i);
    std::vector<LocalObject> locals = extract_local_objects(frame, seg, emb, ingest_options);

    BenchIteration iteration;
    iteration.frame = static_cast<int>(i);
    const auto start = std::chrono::steady_clock::now();
    for (LocalObject& local : locals) {
      iteration.points_in += local.cloud.size();
      const double voxel =
          strategy == DownsampleStrategy::kFixed ? base : dynamic_voxel_size(local.cloud, base);
      local.cloud = voxel_downsample(local.cloud, voxel);
      iteration.points_kept += local.cloud.size();
    }
    integrate_frame(map, locals);
    iteration.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.iterations.push_back(iteration);
  }

  if (!report.iterations.empty()) {
    std::vector<double> times;
    for (const auto& it : report.iterations) {
      report.mean_seconds += it.seconds;
      times.push_back(it.seconds);
    }
    report.mean_seconds /= double(report.iterations.size());
    std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
    report.median_seconds = times[times.size() / 2];
  }
  for (const GlobalObject& g : map.objects)
    report.largest_object_points = std::max(report.largest_object_points, g.cloud.size());
  report.final_objects = std::move(map.objects);
  return report;
}

inline void write_bench_csv(const std::vector<BenchReport>& reports, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write bench csv: " + path);
  out << "iteration,strategy,seconds,points_in,points_kept\n";
  for (const BenchReport& report : reports)
    for (const BenchIteration& it : report.iterations)
      out << it.frame << "," << strategy_name(report.strategy) << "," << it.seconds << ","
          << it.points_in << "," << it.points_kept << "\n";
}

}  // namespace sgmapper
