#include "zstal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "zstal/error.hpp"
#include "zstal/localizer.hpp"
#include "zstal/math.hpp"

namespace zstal {

double tiou(Interval a, Interval b) {
  if (!(a.end > a.start) || !(b.end > b.start)) {
    throw Error(ErrorCode::kInvalidArgument, "tiou: degenerate interval");
  }
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  return inter / uni;
}

std::optional<double> average_precision(const std::vector<Proposal>& preds,
                                        const std::vector<Segment>& gts, double threshold) {
  if (gts.empty()) {
    if (preds.empty()) return std::nullopt;
    return 0.0;
  }
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Proposal& pa = preds[a];
    const Proposal& pb = preds[b];
    if (pa.score != pb.score) return pa.score > pb.score;
    return pa.t_start < pb.t_start;
  });

  std::vector<bool> matched(gts.size(), false);
  std::vector<double> precision;
  std::vector<double> recall;
  precision.reserve(preds.size());
  recall.reserve(preds.size());
  std::size_t tp = 0;
  const double total = static_cast<double>(gts.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const Proposal& p = preds[order[rank]];
    std::size_t best = gts.size();
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (matched[g] || gts[g].video_id != p.video_id) continue;
      const double iou = tiou({p.t_start, p.t_end}, {gts[g].t_start, gts[g].t_end});
      if (iou > best_iou || (iou == best_iou && gts[g].t_start < gts[best].t_start)) {
        best_iou = iou;
        best = g;
      }
    }
    if (best < gts.size() && best_iou >= threshold) {
      matched[best] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
    recall.push_back(static_cast<double>(tp) / total);
  }

  // Interpolated precision: running max from the right.
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

EvalReport map_report(const std::vector<Proposal>& preds, const std::vector<Segment>& gts,
                      const std::vector<double>& thresholds,
                      const std::optional<std::set<std::string>>& class_filter,
                      const std::optional<VideoRankings>& rankings) {
  std::set<std::string> known;
  for (const Segment& g : gts) known.insert(g.label);
  if (class_filter) known.insert(class_filter->begin(), class_filter->end());
  for (const Proposal& p : preds) {
    if (!known.count(p.label)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "map_report: prediction label '" + p.label + "' is unknown");
    }
  }
  auto admitted = [&](const std::string& label) {
    return !class_filter || class_filter->count(label) > 0;
  };

  std::map<std::string, std::vector<Segment>> gts_by_class;
  for (const Segment& g : gts) {
    if (admitted(g.label)) gts_by_class[g.label].push_back(g);
  }
  std::map<std::string, std::vector<Proposal>> preds_by_class;
  for (const Proposal& p : preds) {
    if (gts_by_class.count(p.label)) preds_by_class[p.label].push_back(p);
  }

  EvalReport report;
  report.thresholds = thresholds;
  report.map.assign(thresholds.size(), 0.0);
  for (const auto& [label, class_gts] : gts_by_class) {
    ClassRow row;
    row.label = label;
    const auto& class_preds = preds_by_class[label];
    for (double t : thresholds) row.ap.push_back(*average_precision(class_preds, class_gts, t));
    if (!row.ap.empty()) {
      row.average = std::accumulate(row.ap.begin(), row.ap.end(), 0.0) /
                    static_cast<double>(row.ap.size());
    }
    report.classes.push_back(std::move(row));
  }
  if (!report.classes.empty()) {
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      double acc = 0.0;
      for (const ClassRow& row : report.classes) acc += row.ap[t];
      report.map[t] = acc / static_cast<double>(report.classes.size());
    }
  }
  if (!thresholds.empty()) {
    report.average_map = std::accumulate(report.map.begin(), report.map.end(), 0.0) /
                         static_cast<double>(thresholds.size());
  }

  if (rankings) {
    std::map<std::string, std::set<std::string>> video_labels;
    for (const Segment& g : gts) {
      if (admitted(g.label)) video_labels[g.video_id].insert(g.label);
    }
    std::size_t counted = 0, top1 = 0, top5 = 0;
    for (const auto& [video, labels] : video_labels) {
      auto it = rankings->find(video);
      if (it == rankings->end() || it->second.empty()) continue;
      ++counted;
      if (labels.count(it->second.front())) ++top1;
      const std::size_t depth = std::min<std::size_t>(5, it->second.size());
      for (std::size_t i = 0; i < depth; ++i) {
        if (labels.count(it->second[i])) {
          ++top5;
          break;
        }
      }
    }
    if (counted > 0) {
      report.top1 = static_cast<double>(top1) / static_cast<double>(counted);
      report.top5 = static_cast<double>(top5) / static_cast<double>(counted);
    }
  }
  return report;
}

std::vector<double> thresholds_preset(const std::string& name) {
  if (name == "thumos") return {0.3, 0.4, 0.5, 0.6, 0.7};
  if (name == "anet") return {0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
  throw Error(ErrorCode::kInvalidArgument, "unknown threshold preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Diagnostics

const char* to_string(FrameGroup group) {
  switch (group) {
    case FrameGroup::kForeground: return "foreground";
    case FrameGroup::kTransition: return "transition";
    case FrameGroup::kBackground: return "background";
  }
  return "background";
}

const char* to_string(AnalysisMode mode) {
  switch (mode) {
    case AnalysisMode::kImageToClass: return "image_to_class";
    case AnalysisMode::kCaptionToClass: return "caption_to_class";
    case AnalysisMode::kTripletToClass: return "triplet_to_class";
  }
  return "image_to_class";
}

std::vector<FrameGroup> group_frames(const std::vector<double>& frame_times,
                                     const std::vector<Annotation>& segments,
                                     double transition_seconds) {
  std::vector<FrameGroup> groups(frame_times.size(), FrameGroup::kBackground);
  for (std::size_t i = 0; i < frame_times.size(); ++i) {
    const double t = frame_times[i];
    bool fg = false, tr = false;
    for (const Annotation& a : segments) {
      if (t >= a.t_start && t <= a.t_end) {
        fg = true;
      } else if ((t >= a.t_start - transition_seconds && t < a.t_start) ||
                 (t > a.t_end && t <= a.t_end + transition_seconds)) {
        tr = true;
      }
    }
    if (fg) {
      groups[i] = FrameGroup::kForeground;
    } else if (tr) {
      groups[i] = FrameGroup::kTransition;
    }
  }
  return groups;
}

std::vector<AnalysisRow> similarity_analysis(const VideoBundle& bundle, const RunConfig& cfg,
                                             double transition_seconds) {
  if (!bundle.annotations) {
    throw Error(ErrorCode::kInvalidArgument,
                bundle.video_id + ": similarity analysis needs annotations");
  }
  const std::size_t n = bundle.frame_count();
  const Tensor frames = embed(bundle.head_v, bundle.frame_pre_head);

  // Per-frame lists of caption / representative-triplet sentence embeddings.
  std::vector<std::vector<const Tensor*>> captions(n), triplets(n);
  for (const TextItem* c : bundle.items(TextRole::kCaption)) {
    if (c->sentence_embedding) captions[*c->frame_ref].push_back(&*c->sentence_embedding);
  }
  if (const auto summary = summarize_triplets(bundle, cfg)) {
    const auto items = bundle.items(TextRole::kTriplet);
    std::vector<std::size_t> rep_of_cluster(summary->centroids.rows(), items.size());
    for (std::size_t r : summary->representative_rows) {
      rep_of_cluster[summary->assignment[r]] = r;
    }
    for (std::size_t r = 0; r < items.size(); ++r) {
      const std::size_t rep = rep_of_cluster[summary->assignment[r]];
      triplets[*items[r]->frame_ref].push_back(&*items[rep]->sentence_embedding);
    }
  }

  std::set<std::string> labels;
  for (const Annotation& a : *bundle.annotations) labels.insert(a.class_label);

  std::vector<AnalysisRow> rows;
  for (const std::string& label : labels) {
    const TextItem* cls = bundle.find(label);
    std::vector<Annotation> segments;
    for (const Annotation& a : *bundle.annotations) {
      if (a.class_label == label) segments.push_back(a);
    }
    const auto groups = group_frames(bundle.frame_times, segments, transition_seconds);
    const Tensor class_text = embed(bundle.head_t, Tensor({1, cls->pre_head->size()},
                                                          cls->pre_head->values()));
    const Tensor& class_sentence = *cls->sentence_embedding;
    const double class_sentence_norm = norm2(class_sentence.values());

    auto text_cos = [&](const Tensor& e) {
      return dot(e.values(), class_sentence.values()) /
             (norm2(e.values()) * class_sentence_norm);
    };
    auto per_frame = [&](AnalysisMode mode, std::size_t i) -> std::optional<double> {
      switch (mode) {
        case AnalysisMode::kImageToClass:
          return dot(frames.row(i), class_text.row(0));
        case AnalysisMode::kCaptionToClass:
        case AnalysisMode::kTripletToClass: {
          const auto& list = mode == AnalysisMode::kCaptionToClass ? captions[i] : triplets[i];
          if (list.empty()) return std::nullopt;
          double acc = 0.0;
          for (const Tensor* e : list) acc += text_cos(*e);
          return acc / static_cast<double>(list.size());
        }
      }
      return std::nullopt;
    };

    for (AnalysisMode mode : {AnalysisMode::kImageToClass, AnalysisMode::kCaptionToClass,
                              AnalysisMode::kTripletToClass}) {
      for (FrameGroup group :
           {FrameGroup::kForeground, FrameGroup::kTransition, FrameGroup::kBackground}) {
        AnalysisRow row;
        row.class_label = label;
        row.group = group;
        row.mode = mode;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (groups[i] != group) continue;
          if (auto v = per_frame(mode, i)) {
            acc += *v;
            ++row.frame_count;
          } else {
            ++row.skipped_frames;
          }
        }
        if (row.frame_count == 0) continue;
        row.mean_cosine = acc / static_cast<double>(row.frame_count);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

}  // namespace zstal
