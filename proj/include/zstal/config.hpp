#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace zstal {

enum class LossKind { kMargin, kByol };
enum class SmoothTarget { kRefined, kBase };
enum class ReinitPolicy { kPerClass, kPerVideo };

struct RunConfig {
  int k_actions = 2;
  double alpha = 0.5;
  double gamma = 5.0;
  double lambda_tmp = 1e-2;
  int steps_T = 10;
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  int s_clusters = 20;
  int k_triplets = 5;
  double percentile_p = 10.0;
  double nms_tiou = 0.5;
  double top1_confidence = 0.6;
  std::string prompt_template = "A video of action {}";
  std::uint64_t seed = 0;

  // Softmax temperature applied to the class cosines before the top-1
  // confidence test.
  double class_temperature = 0.01;
  LossKind loss = LossKind::kMargin;
  SmoothTarget smooth_target = SmoothTarget::kRefined;
  ReinitPolicy reinit = ReinitPolicy::kPerClass;
  bool recompute_pseudo_labels = false;
  // Ablation switches: without descriptors the class-name text stands in for
  // the descriptor set; without triplets the refinement term is dropped.
  bool use_descriptors = true;
  bool use_triplets = true;

  // Throws zstal::Error(kInvalidArgument) on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  // Returns human-readable invariant violations; empty when valid.
  std::vector<std::string> check() const;
  // Flat key=value rendering, one line per field, in a fixed order.
  std::string to_text() const;

  static const std::vector<std::string>& keys();
};

// Parses `key = value` lines; '#' starts a comment; blank lines ignored.
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});

// Applies "key=value" overrides in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

}  // namespace zstal
