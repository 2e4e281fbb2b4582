#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "zstal/bundle.hpp"
#include "zstal/config.hpp"

namespace zstal {

// A predicted (start, end, class, confidence) interval.
struct Proposal {
  std::string video_id;
  double t_start = 0.0;
  double t_end = 0.0;
  std::string label;
  double score = 0.0;

  friend bool operator==(const Proposal&, const Proposal&) = default;
};

// A ground-truth interval.
struct Segment {
  std::string video_id;
  double t_start = 0.0;
  double t_end = 0.0;
  std::string label;
};

struct Interval {
  double start = 0.0;
  double end = 0.0;
};

// Temporal IoU. Throws kInvalidArgument on zero-length or inverted intervals.
double tiou(Interval a, Interval b);

// Interpolated average precision for one class at one tIoU threshold.
// Predictions are matched only against ground truths of the same video.
// Returns nullopt when there is nothing to score (no gts and no preds).
std::optional<double> average_precision(const std::vector<Proposal>& preds,
                                        const std::vector<Segment>& gts, double threshold);

// Per-video ranked class ids, used for Top-1/Top-5 accuracy.
using VideoRankings = std::map<std::string, std::vector<std::string>>;

struct ClassRow {
  std::string label;
  std::vector<double> ap;  // one per threshold
  double average = 0.0;
};

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<ClassRow> classes;  // classes present in gts after filtering, sorted
  std::vector<double> map;        // one per threshold
  double average_map = 0.0;
  std::optional<double> top1;
  std::optional<double> top5;
};

// Throws kInvalidArgument when a predicted label is unknown to both the
// ground truth and the filter.
EvalReport map_report(const std::vector<Proposal>& preds, const std::vector<Segment>& gts,
                      const std::vector<double>& thresholds,
                      const std::optional<std::set<std::string>>& class_filter = std::nullopt,
                      const std::optional<VideoRankings>& rankings = std::nullopt);

std::vector<double> thresholds_preset(const std::string& name);

enum class FrameGroup { kForeground, kTransition, kBackground };
enum class AnalysisMode { kImageToClass, kCaptionToClass, kTripletToClass };

const char* to_string(FrameGroup group);
const char* to_string(AnalysisMode mode);

struct AnalysisRow {
  std::string class_label;
  FrameGroup group = FrameGroup::kBackground;
  AnalysisMode mode = AnalysisMode::kImageToClass;
  double mean_cosine = 0.0;
  std::size_t frame_count = 0;    // frames that contributed
  std::size_t skipped_frames = 0; // frames without caption/triplet text
};

// Groups every frame relative to each annotated class: foreground inside a
// closed segment, transition within `transition_seconds` of one, background
// otherwise.
std::vector<FrameGroup> group_frames(const std::vector<double>& frame_times,
                                     const std::vector<Annotation>& segments,
                                     double transition_seconds);

// Mean cosine per (class, group, mode). Triplet mode clusters the bundle's
// triplets with cfg.s_clusters / cfg.seed and uses each frame's cluster
// representative. Throws kInvalidArgument without annotations.
std::vector<AnalysisRow> similarity_analysis(const VideoBundle& bundle, const RunConfig& cfg,
                                             double transition_seconds = 2.0);

}  // namespace zstal
