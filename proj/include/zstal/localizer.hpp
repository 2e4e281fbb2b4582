#pragma once

#include <optional>
#include <string>
#include <vector>

#include "zstal/bundle.hpp"
#include "zstal/config.hpp"
#include "zstal/guidance.hpp"
#include "zstal/head.hpp"
#include "zstal/metrics.hpp"

namespace zstal {

// Video-level classification over all class_name items.
struct ClassRanking {
  std::vector<std::string> class_ids;  // class index order (sorted by id)
  std::vector<double> similarity;      // cosine of mean frame embedding vs class
  std::vector<double> confidence;      // softmax(similarity / temperature)
  std::vector<std::size_t> ranked;     // class indices, descending similarity
  std::vector<std::size_t> selected;   // first min(k_actions, Z) of ranked
};

ClassRanking classify_video(const VideoBundle& bundle, const RunConfig& cfg);
ClassRanking classify_video(const VideoBundle& bundle, const RunConfig& cfg,
                            const HeadSpec& head_v, const HeadSpec& head_t);

// Unit embeddings of `pre_head` rows through `head`.
Tensor embed(const HeadSpec& head, const Tensor& pre_head);

// Mean alignment probability of each frame against a set of texts.
std::vector<double> mean_alignment(const Tensor& frame_emb, const Tensor& text_emb,
                                   double logit_scale, double logit_bias);

// Text rows that define the per-class scores.
struct ScoringTexts {
  Tensor descriptors;  // |D| x d_t pre-head activations
  Tensor affine;       // |T^a| x d_t, zero rows when unused
  Tensor distractor;   // |T^d| x d_t, zero rows when unused

  bool has_triplets() const { return affine.rows() > 0 && distractor.rows() > 0; }
};

// Descriptor rows for a class (or the class-name row when descriptors are
// disabled), plus the triplet rows named by `split`.
ScoringTexts scoring_texts(const VideoBundle& bundle, const std::string& class_id,
                           const GuidanceSplit* split, const RunConfig& cfg);

// s_i = mean over descriptors of pi(frame_i, d).
std::vector<double> descriptor_scores(const VideoBundle& bundle, const Tensor& descriptors,
                                      const HeadSpec& head_v, const HeadSpec& head_t);

// s-bar_i = s_i + alpha * (mean_a pi(frame_i, a) - mean_d pi(frame_i, d)).
std::vector<double> refine_scores(const std::vector<double>& base, const VideoBundle& bundle,
                                  const ScoringTexts& texts, double alpha,
                                  const HeadSpec& head_v, const HeadSpec& head_t);

struct PseudoLabels {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
};

// ceil(p/100 * N) highest and lowest frames; ties by lowest frame index; the
// two sets are disjoint.
PseudoLabels select_pos_neg(const std::vector<double>& scores, double percentile_p);

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;  // d value / d score, one per frame
};

LossValue margin_loss(const std::vector<double>& scores, const PseudoLabels& labels,
                      double gamma);
// Squared-error pull of positives to 1 and negatives to 0 (loss ablation).
LossValue byol_style_loss(const std::vector<double>& scores, const PseudoLabels& labels);
// (1/N) sum_{i>=1} |s_i - s_{i-1}|; subgradient 0 at equal neighbours.
LossValue smoothness_loss(const std::vector<double>& scores);

// Everything the adaptation objective depends on besides the heads.
struct ObjectiveInputs {
  const Tensor* frames = nullptr;  // N x d_v pre-head activations
  const ScoringTexts* texts = nullptr;
  double logit_scale = 1.0;
  double logit_bias = 0.0;
  double alpha = 0.5;
  double gamma = 5.0;
  double lambda_tmp = 1e-2;
  LossKind loss = LossKind::kMargin;
  SmoothTarget smooth_target = SmoothTarget::kRefined;
};

struct ObjectiveResult {
  double loss = 0.0;
  double ranking_term = 0.0;
  double smooth_term = 0.0;
  std::vector<double> base;     // s
  std::vector<double> refined;  // s-bar
  std::vector<Tensor> grad_v;   // aligned with parameters(head_v)
  std::vector<Tensor> grad_t;   // aligned with parameters(head_t)
};

// L = ranking loss(s-bar) + lambda * L_tmp, with exact gradients through the
// alignment probabilities, the embedding normalisation and both heads.
ObjectiveResult evaluate_objective(const HeadSpec& head_v, const HeadSpec& head_t,
                                   const ObjectiveInputs& inputs, const PseudoLabels& labels,
                                   bool with_gradient = true);

struct ScoreTrace {
  std::string video_id;
  std::string class_id;
  std::vector<double> base_scores;     // s before adaptation
  std::vector<double> refined_scores;  // s-bar before adaptation
  PseudoLabels labels;
  std::vector<double> step_loss;       // objective at each step, pre-update
  std::vector<double> step_margin;     // min_P s-bar - max_N s-bar, pre-update
  std::vector<double> final_scores;    // s with adapted heads
  std::vector<double> final_refined;   // s-bar with adapted heads
  double final_margin = 0.0;
};

struct AdaptResult {
  HeadSpec head_v;
  HeadSpec head_t;
  ScoreTrace trace;
};

// T AdamW steps on both heads starting from the given parameters.
AdaptResult adapt(const VideoBundle& bundle, const std::string& class_id,
                  const ScoringTexts& texts, const RunConfig& cfg, HeadSpec head_v,
                  HeadSpec head_t);

// Runs of frames scoring strictly above the mean score.
std::vector<Proposal> extract_proposals(const std::vector<double>& scores,
                                        const std::vector<double>& frame_times, double fps,
                                        const std::string& video_id, const std::string& label,
                                        double class_confidence);

// Greedy class-wise suppression.
std::vector<Proposal> nms(std::vector<Proposal> proposals, double tiou_threshold);

struct LocalizeResult {
  std::vector<Proposal> proposals;
  ClassRanking ranking;
  std::vector<ScoreTrace> traces;
};

LocalizeResult localize(const VideoBundle& bundle, const RunConfig& cfg);

// Triplet summary used by localize and the diagnostics; nullopt when the
// bundle has no triplets.
std::optional<TripletSummary> summarize_triplets(const VideoBundle& bundle,
                                                 const RunConfig& cfg);

}  // namespace zstal
