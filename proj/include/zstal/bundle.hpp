#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "zstal/head.hpp"
#include "zstal/tensor.hpp"

namespace zstal {

enum class TextRole {
  kClassName,
  kDescriptorAction,
  kDescriptorObject,
  kTriplet,
  kCaption,
};

const char* to_string(TextRole role);
TextRole parse_text_role(const std::string& name);

// A piece of text attached to a video. For class_name items the id doubles
// as the class label used by annotations, descriptors and proposals.
struct TextItem {
  std::string id;
  TextRole role = TextRole::kClassName;
  std::optional<std::string> class_ref;
  std::string text;
  std::optional<Tensor> pre_head;            // enters the text head
  std::optional<Tensor> sentence_embedding;  // frozen uni-modal embedding
  std::optional<std::size_t> frame_ref;
};

struct Annotation {
  double t_start = 0.0;
  double t_end = 0.0;
  std::string class_label;
};

struct VideoBundle {
  std::string video_id;
  double fps = 1.0;
  std::vector<double> frame_times;
  Tensor frame_pre_head;  // N x d_v
  HeadSpec head_v;
  HeadSpec head_t;
  double logit_scale = 1.0;
  double logit_bias = 0.0;
  std::vector<TextItem> texts;
  std::optional<std::vector<Annotation>> annotations;

  std::size_t frame_count() const { return frame_times.size(); }

  // Items of one role, in bundle order.
  std::vector<const TextItem*> items(TextRole role) const;
  // class_name items sorted by id; the position is the class index.
  std::vector<const TextItem*> classes() const;
  // Descriptor items (action and object) whose class_ref is `class_id`.
  std::vector<const TextItem*> descriptors(const std::string& class_id) const;
  const TextItem* find(const std::string& id) const;
};

enum class ViolationKind { kMissing, kDimension, kDangling, kRule };

struct Violation {
  ViolationKind kind = ViolationKind::kRule;
  std::string field;  // e.g. "frame_times", "texts[desc_3]"
  std::string rule;

  std::string describe() const { return field + ": " + rule; }
};

std::vector<Violation> validate_bundle(const VideoBundle& bundle);

// Tensor file codec (TGU1). Reading widens 32-bit payloads to 64-bit.
Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor decode_tensor(const std::string& bytes, const std::string& origin);
std::string encode_tensor(const Tensor& tensor);

// Load and fully validate a bundle directory; throws zstal::Error on missing
// files, malformed manifests, or any validation violation.
VideoBundle load_bundle(const std::filesystem::path& dir);

// Writes manifest.json plus one .bin file per tensor. Tensors are rounded to
// 32-bit on disk.
void save_bundle(const VideoBundle& bundle, const std::filesystem::path& dir);

// Returns a copy whose tensors are rounded through 32-bit precision, i.e. the
// value a save/load round trip produces.
VideoBundle quantize_to_disk_precision(const VideoBundle& bundle);

}  // namespace zstal
