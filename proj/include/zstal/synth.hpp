#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "zstal/bundle.hpp"

namespace zstal {

struct SynthSegment {
  double t_start = 0.0;  // seconds
  double t_end = 0.0;
  std::size_t class_index = 0;
};

// Scenario for a synthetic bundle. Foreground frames sit on their class's
// primary descriptor direction plus isotropic Gaussian noise; background
// frames sit on directions orthogonal to every class.
struct SynthSpec {
  std::string video_id = "synth";
  std::size_t frames = 200;
  double fps = 1.0;
  std::size_t classes = 4;
  std::vector<SynthSegment> segments;
  double noise = 0.1;  // per-coordinate standard deviation

  std::size_t dim = 32;           // pre-head and embedding width
  std::size_t sentence_dim = 16;  // uni-modal sentence embedding width
  std::size_t descriptors_per_class = 2;
  std::size_t background_directions = 3;
  std::size_t scene_length = 25;  // background frames per distractor scene
  bool captions = true;
  bool triplets = true;
  double logit_scale = 1.0;
  double logit_bias = 0.0;
  double head_jitter = 0.01;  // heads are I + jitter * N(0, 1/d)
  std::string prompt_template = "A video of action {}";
};

// Deterministic in (seed, spec). Tensors are stored at 32-bit precision so the
// result survives a save/load round trip bit-exactly. Throws
// kInvalidArgument on an inconsistent spec.
VideoBundle synth_bundle(std::uint64_t seed, const SynthSpec& spec);

// Class id used by synthetic bundles for class index `c`.
std::string synth_class_id(std::size_t c);

// A random scenario: one action class per video with 1-2 segments of
// 20-60 frames.
SynthSpec random_scenario(std::uint64_t seed, std::size_t frames, std::size_t classes,
                          double noise, const std::string& video_id);

}  // namespace zstal
