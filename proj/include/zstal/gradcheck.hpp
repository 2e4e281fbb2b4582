#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "zstal/head.hpp"
#include "zstal/localizer.hpp"
#include "zstal/rng.hpp"

namespace zstal {

// A random adaptation problem: two heads, frames, descriptor/triplet rows and
// frozen pseudo-labels.
struct ObjectiveInstance {
  HeadSpec head_v;
  HeadSpec head_t;
  Tensor frames;
  ScoringTexts texts;
  ObjectiveInputs inputs;  // frames/texts pointers refer to this instance
  PseudoLabels labels;

  ObjectiveInstance() = default;
  ObjectiveInstance(const ObjectiveInstance&) = delete;
  ObjectiveInstance& operator=(const ObjectiveInstance&) = delete;
};

struct InstanceShape {
  std::size_t min_frames = 5;
  std::size_t max_frames = 40;
  std::size_t max_layers = 3;
  std::size_t max_descriptors = 4;
  std::size_t max_triplets = 3;
};

// Heads of 1..max_layers layers mixing Affine, Activation and LayerNorm.
HeadSpec random_head(Rng& rng, std::size_t in_dim, std::size_t out_dim, std::size_t max_layers);

// Draws instances until one is away from every non-differentiable point
// (min/max ties in the pseudo-label sets, equal neighbours in the smoothed
// sequence, relu inputs within 1e-4 of zero). `rejected` counts redraws.
std::unique_ptr<ObjectiveInstance> random_objective_instance(Rng& rng, const InstanceShape& shape,
                                                             std::size_t* rejected = nullptr);

// Flattened parameters of both heads, v first.
std::vector<double> flatten_parameters(const HeadSpec& head_v, const HeadSpec& head_t);
void assign_parameters(HeadSpec& head_v, HeadSpec& head_t, std::span<const double> flat);
std::vector<double> flatten(const std::vector<Tensor>& tensors);

// Scale-aware relative error: max_i |a_i - b_i| / max(||a||_inf, ||b||_inf).
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

struct GradCheckResult {
  std::string name;
  std::size_t instances = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::size_t instances = 50;
  double step = 1e-6;
  double tolerance = 1e-6;
  // Test hook: scales the analytic gradient of the named check by 1.001.
  std::string corrupt;
};

// Checks: head_backward, margin_loss, smoothness_loss, objective.
std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& options);

}  // namespace zstal
