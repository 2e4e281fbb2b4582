#pragma once

// Reference implementations used only by tests. Each one is written the
// plain way, without sharing code with the library it checks.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "zstal/head.hpp"
#include "zstal/localizer.hpp"
#include "zstal/metrics.hpp"
#include "zstal/rng.hpp"

namespace zstal::oracle {

inline double act(ActivationKind k, double x) {
  switch (k) {
    case ActivationKind::kIdentity:
      return x;
    case ActivationKind::kRelu:
      return x > 0.0 ? x : 0.0;
    case ActivationKind::kTanh:
      return std::tanh(x);
    case ActivationKind::kGeluTanh: {
      const double c = std::sqrt(2.0 / M_PI);
      return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
    }
  }
  return x;
}

// Straight-line forward pass over a single row.
inline std::vector<double> forward_row(const HeadSpec& head, std::vector<double> x) {
  for (const Layer& layer : head.layers) {
    if (const auto* a = std::get_if<Affine>(&layer)) {
      const std::size_t out = a->weight.rows();
      std::vector<double> y(out);
      for (std::size_t o = 0; o < out; ++o) {
        double acc = a->bias[o];
        for (std::size_t i = 0; i < x.size(); ++i) acc += a->weight.at(o, i) * x[i];
        y[o] = acc;
      }
      x = std::move(y);
    } else if (const auto* f = std::get_if<Activation>(&layer)) {
      for (double& v : x) v = act(f->kind, v);
    } else {
      const auto& ln = std::get<LayerNorm>(layer);
      double mean = 0.0;
      for (double v : x) mean += v;
      mean /= static_cast<double>(x.size());
      double var = 0.0;
      for (double v : x) var += (v - mean) * (v - mean);
      var /= static_cast<double>(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = (x[i] - mean) / std::sqrt(var + ln.epsilon) * ln.gamma[i] + ln.beta[i];
      }
    }
  }
  return x;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline double pi(const std::vector<double>& x, const std::vector<double>& t, double scale,
                 double bias) {
  return 1.0 / (1.0 + std::exp(-(scale * cosine(x, t) + bias)));
}

inline std::vector<double> row_of(const Tensor& t, std::size_t r) {
  const auto s = t.row(r);
  return {s.begin(), s.end()};
}

// Per-frame mean alignment against a set of pre-head text rows.
inline std::vector<double> mean_pi(const VideoBundle& b, const Tensor& texts,
                                   const HeadSpec& hv, const HeadSpec& ht) {
  std::vector<double> out(b.frame_count(), 0.0);
  for (std::size_t i = 0; i < b.frame_count(); ++i) {
    const auto e = forward_row(hv, row_of(b.frame_pre_head, i));
    double acc = 0.0;
    for (std::size_t j = 0; j < texts.rows(); ++j) {
      acc += pi(e, forward_row(ht, row_of(texts, j)), b.logit_scale, b.logit_bias);
    }
    out[i] = acc / static_cast<double>(texts.rows());
  }
  return out;
}

struct TpFlags {
  std::vector<bool> tp;  // in ranked order
  std::size_t gts = 0;
};

inline double interval_iou(double a0, double a1, double b0, double b1) {
  const double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  const double uni = (a1 - a0) + (b1 - b0) - inter;
  return inter / uni;
}

// Exhaustive AP: enumerate every rank as a PR point; each true positive adds
// 1/G times the best precision at that rank or any later one.
inline double average_precision(const std::vector<Proposal>& preds,
                                const std::vector<Segment>& gts, double thr) {
  if (gts.empty()) return 0.0;
  std::vector<Proposal> ranked = preds;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Proposal& a, const Proposal& b) {
    return a.score != b.score ? a.score > b.score : a.t_start < b.t_start;
  });
  std::vector<bool> used(gts.size(), false);
  std::vector<bool> tp(ranked.size(), false);
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].video_id != ranked[r].video_id) continue;
      const double iou =
          interval_iou(ranked[r].t_start, ranked[r].t_end, gts[g].t_start, gts[g].t_end);
      const bool better = iou > best_iou ||
                          (iou == best_iou && best >= 0 && gts[g].t_start < gts[best].t_start);
      if (better) {
        best = static_cast<int>(g);
        best_iou = iou;
      }
    }
    if (best >= 0 && best_iou >= thr) {
      used[best] = true;
      tp[r] = true;
    }
  }
  double ap = 0.0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    if (!tp[r]) continue;
    double best_prec = 0.0;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < ranked.size(); ++j) {
      if (tp[j]) ++hits;
      if (j >= r) best_prec = std::max(best_prec, double(hits) / double(j + 1));
    }
    ap += best_prec / static_cast<double>(gts.size());
  }
  return ap;
}

struct Run {
  std::size_t first;
  std::size_t last;
};

// Frame-by-frame scan for maximal runs strictly above the mean.
inline std::vector<Run> runs_above_mean(const std::vector<double>& s) {
  double mean = 0.0;
  for (double v : s) mean += v;
  mean /= static_cast<double>(s.size());
  std::vector<Run> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool above = s[i] > mean;
    const bool prev_above = i > 0 && s[i - 1] > mean;
    if (above && !prev_above) out.push_back({i, i});
    if (above) out.back().last = i;
  }
  return out;
}

// Greedy suppression written as repeated "pick the best remaining, drop its
// overlaps" over the whole pool.
inline std::vector<Proposal> greedy_nms(std::vector<Proposal> pool, double thr) {
  std::vector<Proposal> kept;
  while (!pool.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
      const bool higher = pool[i].score > pool[best].score ||
                          (pool[i].score == pool[best].score &&
                           pool[i].t_start < pool[best].t_start);
      if (higher) best = i;
    }
    const Proposal p = pool[best];
    kept.push_back(p);
    std::vector<Proposal> rest;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (i == best) continue;
      const bool same = pool[i].label == p.label && pool[i].video_id == p.video_id;
      if (same && interval_iou(p.t_start, p.t_end, pool[i].t_start, pool[i].t_end) > thr) continue;
      rest.push_back(pool[i]);
    }
    pool = std::move(rest);
  }
  return kept;
}

// Plain Lloyd: assign, recompute means, stop when assignments repeat.
inline double plain_lloyd_inertia(const Tensor& points, Tensor centroids, int max_iter = 100) {
  const std::size_t m = points.rows(), k = centroids.rows(), d = points.cols();
  std::vector<std::size_t> assign(m, k);
  double inertia = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    std::vector<std::size_t> next(m);
    inertia = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        double dist = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = points.at(i, j) - centroids.at(c, j);
          dist += diff * diff;
        }
        if (dist < best) {
          best = dist;
          next[i] = c;
        }
      }
      inertia += best;
    }
    if (next == assign) break;
    assign = next;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> sum(d, 0.0);
      std::size_t n = 0;
      for (std::size_t i = 0; i < m; ++i) {
        if (assign[i] != c) continue;
        ++n;
        for (std::size_t j = 0; j < d; ++j) sum[j] += points.at(i, j);
      }
      if (n == 0) continue;
      for (std::size_t j = 0; j < d; ++j) centroids.at(c, j) = sum[j] / double(n);
    }
  }
  return inertia;
}

// Pseudo-labels by a full sort of (score, index) pairs.
inline PseudoLabels pos_neg(const std::vector<double>& s, double p) {
  const std::size_t n = s.size();
  std::size_t c = static_cast<std::size_t>(std::ceil(p * double(n) / 100.0));
  c = std::max<std::size_t>(1, std::min(c, n / 2));
  std::vector<std::pair<double, std::size_t>> desc, asc;
  for (std::size_t i = 0; i < n; ++i) {
    desc.push_back({-s[i], i});
    asc.push_back({s[i], i});
  }
  std::sort(desc.begin(), desc.end());
  std::sort(asc.begin(), asc.end());
  PseudoLabels out;
  for (std::size_t i = 0; i < c; ++i) out.positives.push_back(desc[i].second);
  for (const auto& [v, i] : asc) {
    if (out.negatives.size() == c) break;
    if (std::find(out.positives.begin(), out.positives.end(), i) == out.positives.end()) {
      out.negatives.push_back(i);
    }
  }
  return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("zstal_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace zstal::oracle
