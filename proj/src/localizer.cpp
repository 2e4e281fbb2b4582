#include "zstal/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "zstal/error.hpp"
#include "zstal/math.hpp"
#include "zstal/optim.hpp"

namespace zstal {

namespace {

Tensor stack_pre_heads(const std::vector<const TextItem*>& items, std::size_t width) {
  Tensor out = Tensor::matrix(items.size(), width);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i]->pre_head) {
      throw Error(ErrorCode::kInvalidArgument,
                  "text item '" + items[i]->id + "' has no pre_head activation");
    }
    const auto& v = items[i]->pre_head->values();
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

// FNV-1a, mixes the video id into the clustering seed.
std::uint64_t hash_id(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

double pseudo_label_margin(const std::vector<double>& s, const PseudoLabels& labels) {
  double min_p = std::numeric_limits<double>::infinity();
  double max_n = -std::numeric_limits<double>::infinity();
  for (std::size_t i : labels.positives) min_p = std::min(min_p, s[i]);
  for (std::size_t i : labels.negatives) max_n = std::max(max_n, s[i]);
  return min_p - max_n;
}

std::vector<Tensor> concat(std::vector<Tensor> a, std::vector<Tensor> b) {
  a.insert(a.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
  return a;
}

Error with_context(const std::string& video_id, const Error& e) {
  return Error(e.code(), video_id + ": " + e.what());
}

}  // namespace

Tensor embed(const HeadSpec& head, const Tensor& pre_head) {
  return l2_normalize_rows(head_forward(head, pre_head).output);
}

std::vector<double> mean_alignment(const Tensor& frame_emb, const Tensor& text_emb,
                                   double logit_scale, double logit_bias) {
  const std::size_t m = text_emb.rows();
  std::vector<double> out(frame_emb.rows(), 0.0);
  for (std::size_t i = 0; i < frame_emb.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      acc += pi_align(frame_emb.row(i), text_emb.row(j), logit_scale, logit_bias);
    }
    out[i] = acc / static_cast<double>(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step 1

ClassRanking classify_video(const VideoBundle& bundle, const RunConfig& cfg) {
  return classify_video(bundle, cfg, bundle.head_v, bundle.head_t);
}

ClassRanking classify_video(const VideoBundle& bundle, const RunConfig& cfg,
                            const HeadSpec& head_v, const HeadSpec& head_t) {
  const auto classes = bundle.classes();
  if (classes.empty()) {
    throw Error(ErrorCode::kInvalidArgument, bundle.video_id + ": bundle has no classes");
  }
  const Tensor frames = embed(head_v, bundle.frame_pre_head);
  std::vector<double> mean(frames.cols(), 0.0);
  for (std::size_t i = 0; i < frames.rows(); ++i) {
    for (std::size_t j = 0; j < frames.cols(); ++j) mean[j] += frames.at(i, j);
  }
  for (double& v : mean) v /= static_cast<double>(frames.rows());
  const double mean_norm = norm2(mean);
  if (!(mean_norm > 0.0)) {
    throw Error(ErrorCode::kNumerical, bundle.video_id + ": mean frame embedding is zero");
  }
  const Tensor text = embed(head_t, stack_pre_heads(classes, head_t.input_dim()));

  ClassRanking r;
  const std::size_t z = classes.size();
  for (const TextItem* c : classes) r.class_ids.push_back(c->id);
  r.similarity.resize(z);
  for (std::size_t c = 0; c < z; ++c) r.similarity[c] = dot(mean, text.row(c)) / mean_norm;

  const double top = *std::max_element(r.similarity.begin(), r.similarity.end());
  r.confidence.resize(z);
  double total = 0.0;
  for (std::size_t c = 0; c < z; ++c) {
    r.confidence[c] = std::exp((r.similarity[c] - top) / cfg.class_temperature);
    total += r.confidence[c];
  }
  for (double& p : r.confidence) p /= total;

  r.ranked.resize(z);
  std::iota(r.ranked.begin(), r.ranked.end(), std::size_t{0});
  std::stable_sort(r.ranked.begin(), r.ranked.end(), [&](std::size_t a, std::size_t b) {
    return r.similarity[a] > r.similarity[b];
  });
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg.k_actions, 0)), z);
  r.selected.assign(r.ranked.begin(), r.ranked.begin() + static_cast<std::ptrdiff_t>(k));
  return r;
}

// ---------------------------------------------------------------------------
// Step 3

ScoringTexts scoring_texts(const VideoBundle& bundle, const std::string& class_id,
                           const GuidanceSplit* split, const RunConfig& cfg) {
  const std::size_t width = bundle.head_t.input_dim();
  ScoringTexts texts;
  if (cfg.use_descriptors) {
    const auto desc = bundle.descriptors(class_id);
    if (desc.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "class '" + class_id + "' has no descriptors");
    }
    texts.descriptors = stack_pre_heads(desc, width);
  } else {
    const TextItem* cls = bundle.find(class_id);
    if (cls == nullptr || cls->role != TextRole::kClassName) {
      throw Error(ErrorCode::kInvalidArgument, "unknown class '" + class_id + "'");
    }
    texts.descriptors = stack_pre_heads({cls}, width);
  }

  auto lookup = [&](const std::vector<std::string>& ids) {
    std::vector<const TextItem*> items;
    for (const std::string& id : ids) {
      const TextItem* t = bundle.find(id);
      if (t == nullptr) throw Error(ErrorCode::kDanglingReference, "unknown triplet '" + id + "'");
      items.push_back(t);
    }
    return stack_pre_heads(items, width);
  };
  if (split != nullptr && cfg.use_triplets && !split->affine_ids.empty() &&
      !split->distractor_ids.empty()) {
    texts.affine = lookup(split->affine_ids);
    texts.distractor = lookup(split->distractor_ids);
  } else {
    texts.affine = Tensor::matrix(0, width);
    texts.distractor = Tensor::matrix(0, width);
  }
  return texts;
}

std::vector<double> descriptor_scores(const VideoBundle& bundle, const Tensor& descriptors,
                                      const HeadSpec& head_v, const HeadSpec& head_t) {
  if (descriptors.rows() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "descriptor_scores: class has no descriptors");
  }
  const Tensor frames = embed(head_v, bundle.frame_pre_head);
  const Tensor text = embed(head_t, descriptors);
  return mean_alignment(frames, text, bundle.logit_scale, bundle.logit_bias);
}

std::vector<double> refine_scores(const std::vector<double>& base, const VideoBundle& bundle,
                                  const ScoringTexts& texts, double alpha,
                                  const HeadSpec& head_v, const HeadSpec& head_t) {
  if (!texts.has_triplets()) return base;
  const Tensor frames = embed(head_v, bundle.frame_pre_head);
  const auto affine = mean_alignment(frames, embed(head_t, texts.affine), bundle.logit_scale,
                                     bundle.logit_bias);
  const auto distractor = mean_alignment(frames, embed(head_t, texts.distractor),
                                         bundle.logit_scale, bundle.logit_bias);
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    out[i] = base[i] + alpha * (affine[i] - distractor[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step 4

PseudoLabels select_pos_neg(const std::vector<double>& scores, double percentile_p) {
  const std::size_t n = scores.size();
  PseudoLabels out;
  if (n < 2) return out;
  auto count = static_cast<std::size_t>(std::ceil(percentile_p * static_cast<double>(n) / 100.0));
  count = std::clamp<std::size_t>(count, 1, n / 2);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  out.positives.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));

  std::vector<bool> is_positive(n, false);
  for (std::size_t i : out.positives) is_positive[i] = true;
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  for (std::size_t i : order) {
    if (out.negatives.size() == count) break;
    if (!is_positive[i]) out.negatives.push_back(i);
  }
  return out;
}

LossValue margin_loss(const std::vector<double>& scores, const PseudoLabels& labels,
                      double gamma) {
  LossValue out;
  out.grad.assign(scores.size(), 0.0);
  if (labels.positives.empty() || labels.negatives.empty()) return out;
  std::size_t arg_min = labels.positives.front();
  for (std::size_t i : labels.positives) {
    if (scores[i] < scores[arg_min] || (scores[i] == scores[arg_min] && i < arg_min)) arg_min = i;
  }
  std::size_t arg_max = labels.negatives.front();
  for (std::size_t i : labels.negatives) {
    if (scores[i] > scores[arg_max] || (scores[i] == scores[arg_max] && i < arg_max)) arg_max = i;
  }
  const double hinge = gamma - scores[arg_min] + scores[arg_max];
  if (hinge > 0.0) {
    out.value = hinge;
    out.grad[arg_min] -= 1.0;
    out.grad[arg_max] += 1.0;
  }
  return out;
}

LossValue byol_style_loss(const std::vector<double>& scores, const PseudoLabels& labels) {
  LossValue out;
  out.grad.assign(scores.size(), 0.0);
  if (labels.positives.empty() || labels.negatives.empty()) return out;
  const double np = static_cast<double>(labels.positives.size());
  const double nn = static_cast<double>(labels.negatives.size());
  for (std::size_t i : labels.positives) {
    const double d = scores[i] - 1.0;
    out.value += d * d / np;
    out.grad[i] += 2.0 * d / np;
  }
  for (std::size_t i : labels.negatives) {
    out.value += scores[i] * scores[i] / nn;
    out.grad[i] += 2.0 * scores[i] / nn;
  }
  return out;
}

LossValue smoothness_loss(const std::vector<double>& scores) {
  LossValue out;
  const std::size_t n = scores.size();
  out.grad.assign(n, 0.0);
  if (n < 2) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 1; i < n; ++i) {
    const double d = scores[i] - scores[i - 1];
    out.value += std::abs(d);
    const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    out.grad[i] += sign * inv_n;
    out.grad[i - 1] -= sign * inv_n;
  }
  out.value *= inv_n;
  return out;
}

ObjectiveResult evaluate_objective(const HeadSpec& head_v, const HeadSpec& head_t,
                                   const ObjectiveInputs& in, const PseudoLabels& labels,
                                   bool with_gradient) {
  const ScoringTexts& texts = *in.texts;
  const std::size_t nd = texts.descriptors.rows();
  const bool triplets = texts.has_triplets();
  const std::size_t na = triplets ? texts.affine.rows() : 0;
  const std::size_t nr = triplets ? texts.distractor.rows() : 0;
  if (nd == 0) throw Error(ErrorCode::kInvalidArgument, "objective: no descriptors");

  // Frames and all text rows go through their heads once.
  std::vector<const Tensor*> blocks{&texts.descriptors};
  if (triplets) {
    blocks.push_back(&texts.affine);
    blocks.push_back(&texts.distractor);
  }
  Tensor text_in = Tensor::matrix(nd + na + nr, texts.descriptors.cols());
  {
    std::size_t r = 0;
    for (const Tensor* b : blocks) {
      for (std::size_t i = 0; i < b->rows(); ++i, ++r) {
        std::copy(b->row(i).begin(), b->row(i).end(), text_in.row(r).begin());
      }
    }
  }
  const ForwardResult fv = head_forward(head_v, *in.frames);
  const ForwardResult ft = head_forward(head_t, text_in);
  const Tensor ex = l2_normalize_rows(fv.output);
  const Tensor et = l2_normalize_rows(ft.output);
  const std::size_t n = ex.rows();
  const std::size_t m = et.rows();

  Tensor pi = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      pi.at(i, j) = pi_align(ex.row(i), et.row(j), in.logit_scale, in.logit_bias);
    }
  }

  // Column means, summed in the same order as mean_alignment.
  auto column_mean = [&](std::size_t i, std::size_t begin, std::size_t count) {
    double acc = 0.0;
    for (std::size_t j = begin; j < begin + count; ++j) acc += pi.at(i, j);
    return acc / static_cast<double>(count);
  };

  ObjectiveResult out;
  out.base.resize(n);
  out.refined.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.base[i] = column_mean(i, 0, nd);
    out.refined[i] = triplets ? out.base[i] + in.alpha * (column_mean(i, nd, na) -
                                                          column_mean(i, nd + na, nr))
                              : out.base[i];
  }

  const LossValue ranking = in.loss == LossKind::kMargin
                                ? margin_loss(out.refined, labels, in.gamma)
                                : byol_style_loss(out.refined, labels);
  const bool smooth_base = in.smooth_target == SmoothTarget::kBase;
  const LossValue smooth = smoothness_loss(smooth_base ? out.base : out.refined);
  out.ranking_term = ranking.value;
  out.smooth_term = smooth.value;
  out.loss = ranking.value + in.lambda_tmp * smooth.value;
  if (!with_gradient) return out;

  std::vector<double> g_refined(n), g_base(n);
  for (std::size_t i = 0; i < n; ++i) {
    g_refined[i] = ranking.grad[i] + (smooth_base ? 0.0 : in.lambda_tmp * smooth.grad[i]);
    g_base[i] = g_refined[i] + (smooth_base ? in.lambda_tmp * smooth.grad[i] : 0.0);
  }

  // dL/dcos = dL/dpi * pi (1 - pi) * scale
  Tensor dcos = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double w;
      if (j < nd) {
        w = g_base[i] / static_cast<double>(nd);
      } else if (j < nd + na) {
        w = g_refined[i] * in.alpha / static_cast<double>(na);
      } else {
        w = -g_refined[i] * in.alpha / static_cast<double>(nr);
      }
      const double p = pi.at(i, j);
      dcos.at(i, j) = w * p * (1.0 - p) * in.logit_scale;
    }
  }
  const Tensor d_ex = matmul(dcos, et);     // n x d
  const Tensor d_et = matmul_at(dcos, ex);  // m x d
  const Tensor d_yv = l2_normalize_rows_backward(fv.output, ex, d_ex);
  const Tensor d_yt = l2_normalize_rows_backward(ft.output, et, d_et);
  out.grad_v = head_backward(fv.tape, d_yv).param_grads;
  out.grad_t = head_backward(ft.tape, d_yt).param_grads;
  return out;
}

AdaptResult adapt(const VideoBundle& bundle, const std::string& class_id,
                  const ScoringTexts& texts, const RunConfig& cfg, HeadSpec head_v,
                  HeadSpec head_t) {
  AdaptResult result;
  ScoreTrace& trace = result.trace;
  trace.video_id = bundle.video_id;
  trace.class_id = class_id;
  trace.base_scores = descriptor_scores(bundle, texts.descriptors, head_v, head_t);
  trace.refined_scores =
      refine_scores(trace.base_scores, bundle, texts, cfg.alpha, head_v, head_t);
  trace.labels = select_pos_neg(trace.refined_scores, cfg.percentile_p);

  ObjectiveInputs inputs;
  inputs.frames = &bundle.frame_pre_head;
  inputs.texts = &texts;
  inputs.logit_scale = bundle.logit_scale;
  inputs.logit_bias = bundle.logit_bias;
  inputs.alpha = cfg.alpha;
  inputs.gamma = cfg.gamma;
  inputs.lambda_tmp = cfg.lambda_tmp;
  inputs.loss = cfg.loss;
  inputs.smooth_target = cfg.smooth_target;

  const bool can_adapt = !trace.labels.positives.empty();
  if (can_adapt && cfg.steps_T > 0) {
    std::vector<Tensor*> params = parameters(head_v);
    for (Tensor* p : parameters(head_t)) params.push_back(p);
    std::vector<const Tensor*> const_params(params.begin(), params.end());
    OptState state = OptState::zeros_like(const_params);
    AdamWOptions opt;
    opt.learning_rate = cfg.learning_rate;
    opt.weight_decay = cfg.weight_decay;

    PseudoLabels labels = trace.labels;
    for (int step = 0; step < cfg.steps_T; ++step) {
      ObjectiveResult obj = evaluate_objective(head_v, head_t, inputs, labels);
      if (cfg.recompute_pseudo_labels && step > 0) {
        labels = select_pos_neg(obj.refined, cfg.percentile_p);
        obj = evaluate_objective(head_v, head_t, inputs, labels);
      }
      if (!std::isfinite(obj.loss)) {
        throw Error(ErrorCode::kNumerical, "adapt: non-finite loss at step " +
                                               std::to_string(step) + " for class '" +
                                               class_id + "'");
      }
      trace.step_loss.push_back(obj.loss);
      trace.step_margin.push_back(pseudo_label_margin(obj.refined, labels));
      const std::vector<Tensor> grads = concat(std::move(obj.grad_v), std::move(obj.grad_t));
      adamw_step(params, grads, state, opt);
    }
  }

  trace.final_scores = descriptor_scores(bundle, texts.descriptors, head_v, head_t);
  trace.final_refined =
      refine_scores(trace.final_scores, bundle, texts, cfg.alpha, head_v, head_t);
  if (can_adapt) trace.final_margin = pseudo_label_margin(trace.final_refined, trace.labels);
  result.head_v = std::move(head_v);
  result.head_t = std::move(head_t);
  return result;
}

std::vector<Proposal> extract_proposals(const std::vector<double>& scores,
                                        const std::vector<double>& frame_times, double fps,
                                        const std::string& video_id, const std::string& label,
                                        double class_confidence) {
  std::vector<Proposal> out;
  const std::size_t n = scores.size();
  if (n == 0) return out;
  const double threshold = std::accumulate(scores.begin(), scores.end(), 0.0) /
                           static_cast<double>(n);
  const double frame_span = 1.0 / fps;
  std::size_t i = 0;
  while (i < n) {
    if (!(scores[i] > threshold)) {
      ++i;
      continue;
    }
    const std::size_t first = i;
    double sum = 0.0;
    while (i < n && scores[i] > threshold) sum += scores[i++];
    const std::size_t last = i - 1;
    const double mean = sum / static_cast<double>(last - first + 1);
    out.push_back({video_id, frame_times[first], frame_times[last] + frame_span, label,
                   mean * class_confidence});
  }
  return out;
}

std::vector<Proposal> nms(std::vector<Proposal> proposals, double tiou_threshold) {
  std::stable_sort(proposals.begin(), proposals.end(),
                   [](const Proposal& a, const Proposal& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.t_start < b.t_start;
                   });
  std::vector<Proposal> kept;
  for (Proposal& p : proposals) {
    bool keep = true;
    for (const Proposal& k : kept) {
      if (k.label != p.label || k.video_id != p.video_id) continue;
      if (tiou({p.t_start, p.t_end}, {k.t_start, k.t_end}) > tiou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(std::move(p));
  }
  return kept;
}

std::optional<TripletSummary> summarize_triplets(const VideoBundle& bundle,
                                                 const RunConfig& cfg) {
  const auto triplets = bundle.items(TextRole::kTriplet);
  if (triplets.empty()) return std::nullopt;
  const std::size_t d = triplets.front()->sentence_embedding->size();
  Tensor emb = Tensor::matrix(triplets.size(), d);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& v = triplets[i]->sentence_embedding->values();
    std::copy(v.begin(), v.end(), emb.row(i).begin());
    ids.push_back(triplets[i]->id);
  }
  return cluster_triplets(emb, ids, cfg.s_clusters, cfg.seed ^ hash_id(bundle.video_id));
}

LocalizeResult localize(const VideoBundle& bundle, const RunConfig& cfg) {
  try {
    LocalizeResult result;
    result.ranking = classify_video(bundle, cfg);
    const ClassRanking& ranking = result.ranking;

    std::vector<std::size_t> targets = ranking.selected;
    const std::size_t top = ranking.ranked.front();
    if (ranking.confidence[top] > cfg.top1_confidence) targets = {top};

    std::optional<TripletSummary> summary;
    Tensor rep_embeddings;
    if (cfg.use_triplets) {
      summary = summarize_triplets(bundle, cfg);
      if (summary) {
        const auto triplets = bundle.items(TextRole::kTriplet);
        std::vector<const Tensor*> rows;
        for (std::size_t r : summary->representative_rows) {
          rows.push_back(&*triplets[r]->sentence_embedding);
        }
        rep_embeddings = stack_rows(rows);
      }
    }

    HeadSpec head_v = bundle.head_v;
    HeadSpec head_t = bundle.head_t;
    std::vector<Proposal> pooled;
    for (std::size_t c : targets) {
      const std::string& class_id = ranking.class_ids[c];
      std::optional<GuidanceSplit> split;
      if (summary) {
        const int k = std::min<int>(cfg.k_triplets,
                                    static_cast<int>(summary->representative_ids.size() / 2));
        if (k >= 1) {
          const TextItem* cls = bundle.find(class_id);
          split = split_affine_distractor(*summary, rep_embeddings,
                                          *cls->sentence_embedding, k);
        }
      }
      const ScoringTexts texts =
          scoring_texts(bundle, class_id, split ? &*split : nullptr, cfg);
      if (cfg.reinit == ReinitPolicy::kPerClass) {
        head_v = bundle.head_v;
        head_t = bundle.head_t;
      }
      AdaptResult adapted = adapt(bundle, class_id, texts, cfg, std::move(head_v),
                                  std::move(head_t));
      head_v = std::move(adapted.head_v);
      head_t = std::move(adapted.head_t);
      auto props = extract_proposals(adapted.trace.final_scores, bundle.frame_times, bundle.fps,
                                     bundle.video_id, class_id, ranking.confidence[c]);
      pooled.insert(pooled.end(), props.begin(), props.end());
      result.traces.push_back(std::move(adapted.trace));
    }
    result.proposals = nms(std::move(pooled), cfg.nms_tiou);
    return result;
  } catch (const Error& e) {
    if (std::string(e.what()).rfind(bundle.video_id + ":", 0) == 0) throw;
    throw with_context(bundle.video_id, e);
  }
}

}  // namespace zstal
