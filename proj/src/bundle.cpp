#include "zstal/bundle.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "zstal/error.hpp"

namespace zstal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'G', 'U', '1'};
constexpr std::uint32_t kDtypeF32 = 0;

template <class T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <class T>
T get_le(const std::string& bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return static_cast<T>(v);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kMissingFile, "cannot write " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor quantize(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.values()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

bool is_descriptor(TextRole role) {
  return role == TextRole::kDescriptorAction || role == TextRole::kDescriptorObject;
}

}  // namespace

const char* to_string(TextRole role) {
  switch (role) {
    case TextRole::kClassName: return "class_name";
    case TextRole::kDescriptorAction: return "descriptor_action";
    case TextRole::kDescriptorObject: return "descriptor_object";
    case TextRole::kTriplet: return "triplet";
    case TextRole::kCaption: return "caption";
  }
  return "class_name";
}

TextRole parse_text_role(const std::string& name) {
  for (TextRole role : {TextRole::kClassName, TextRole::kDescriptorAction,
                        TextRole::kDescriptorObject, TextRole::kTriplet,
                        TextRole::kCaption}) {
    if (name == to_string(role)) return role;
  }
  throw Error(ErrorCode::kMalformedManifest, "unknown text role '" + name + "'");
}

std::vector<const TextItem*> VideoBundle::items(TextRole role) const {
  std::vector<const TextItem*> out;
  for (const TextItem& t : texts) {
    if (t.role == role) out.push_back(&t);
  }
  return out;
}

std::vector<const TextItem*> VideoBundle::classes() const {
  auto out = items(TextRole::kClassName);
  std::sort(out.begin(), out.end(),
            [](const TextItem* a, const TextItem* b) { return a->id < b->id; });
  return out;
}

std::vector<const TextItem*> VideoBundle::descriptors(const std::string& class_id) const {
  std::vector<const TextItem*> out;
  for (const TextItem& t : texts) {
    if (is_descriptor(t.role) && t.class_ref && *t.class_ref == class_id) {
      out.push_back(&t);
    }
  }
  return out;
}

const TextItem* VideoBundle::find(const std::string& id) const {
  for (const TextItem& t : texts) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Validation

std::vector<Violation> validate_bundle(const VideoBundle& b) {
  std::vector<Violation> out;
  auto add = [&](ViolationKind kind, std::string field, std::string rule) {
    out.push_back({kind, std::move(field), std::move(rule)});
  };

  const std::size_t n = b.frame_times.size();
  if (b.video_id.empty()) add(ViolationKind::kMissing, "video_id", "must be non-empty");
  if (!(b.fps > 0.0) || !std::isfinite(b.fps)) {
    add(ViolationKind::kRule, "fps", "must be a positive finite real");
  }
  if (n == 0) add(ViolationKind::kRule, "frame_times", "at least one frame required");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(b.frame_times[i])) {
      add(ViolationKind::kRule, "frame_times", "non-finite value at " + std::to_string(i));
      break;
    }
    if (i > 0 && !(b.frame_times[i] > b.frame_times[i - 1])) {
      add(ViolationKind::kRule, "frame_times",
          "must be strictly increasing (index " + std::to_string(i) + ")");
      break;
    }
  }

  if (b.frame_pre_head.rank() != 2) {
    add(ViolationKind::kDimension, "frame_pre_head", "must be rank 2 (N x d_v)");
  } else {
    if (b.frame_pre_head.rows() != n) {
      add(ViolationKind::kDimension, "frame_pre_head",
          "has " + std::to_string(b.frame_pre_head.rows()) + " rows but " +
              std::to_string(n) + " frame_times");
    }
    if (b.frame_pre_head.cols() != b.head_v.input_dim()) {
      add(ViolationKind::kDimension, "frame_pre_head",
          "width " + std::to_string(b.frame_pre_head.cols()) +
              " != head_v input width " + std::to_string(b.head_v.input_dim()));
    }
  }
  if (!b.frame_pre_head.all_finite()) {
    add(ViolationKind::kRule, "frame_pre_head", "values must be finite");
  }

  for (const std::string& p : b.head_v.check()) add(ViolationKind::kDimension, "head_v", p);
  for (const std::string& p : b.head_t.check()) add(ViolationKind::kDimension, "head_t", p);
  if (b.head_v.output_dim() != b.head_t.output_dim()) {
    add(ViolationKind::kDimension, "head_t",
        "output width " + std::to_string(b.head_t.output_dim()) +
            " != head_v output width " + std::to_string(b.head_v.output_dim()));
  }
  if (!std::isfinite(b.logit_scale)) add(ViolationKind::kRule, "logit_scale", "must be finite");
  if (!std::isfinite(b.logit_bias)) add(ViolationKind::kRule, "logit_bias", "must be finite");

  std::set<std::string> ids;
  std::set<std::string> class_ids;
  for (const TextItem& t : b.texts) {
    if (t.role == TextRole::kClassName) class_ids.insert(t.id);
  }
  std::optional<std::size_t> sentence_dim;
  const std::size_t text_in = b.head_t.input_dim();
  for (const TextItem& t : b.texts) {
    const std::string field = "texts[" + t.id + "]";
    if (t.id.empty()) add(ViolationKind::kMissing, "texts", "item with empty id");
    if (!ids.insert(t.id).second) add(ViolationKind::kRule, field, "duplicate id");

    const bool needs_pre_head = t.role == TextRole::kClassName ||
                                is_descriptor(t.role) || t.role == TextRole::kTriplet;
    const bool needs_sentence = t.role == TextRole::kClassName ||
                                t.role == TextRole::kTriplet ||
                                t.role == TextRole::kCaption;
    const bool needs_frame = t.role == TextRole::kTriplet || t.role == TextRole::kCaption;

    if (is_descriptor(t.role)) {
      if (!t.class_ref) {
        add(ViolationKind::kMissing, field, "descriptor without class_ref");
      } else if (!class_ids.count(*t.class_ref)) {
        add(ViolationKind::kDangling, field,
            "class_ref '" + *t.class_ref + "' names no class_name item");
      }
    } else if (t.class_ref && !class_ids.count(*t.class_ref)) {
      add(ViolationKind::kDangling, field,
          "class_ref '" + *t.class_ref + "' names no class_name item");
    }

    if (t.pre_head) {
      if (t.pre_head->size() != text_in) {
        add(ViolationKind::kDimension, field,
            "pre_head width " + std::to_string(t.pre_head->size()) +
                " != head_t input width " + std::to_string(text_in));
      }
      if (!t.pre_head->all_finite()) add(ViolationKind::kRule, field, "pre_head not finite");
    } else if (needs_pre_head) {
      add(ViolationKind::kMissing, field, "pre_head required for role " +
                                               std::string(to_string(t.role)));
    }

    if (t.sentence_embedding) {
      if (!sentence_dim) sentence_dim = t.sentence_embedding->size();
      if (t.sentence_embedding->size() != *sentence_dim) {
        add(ViolationKind::kDimension, field, "sentence_embedding width differs from other items");
      }
      if (!t.sentence_embedding->all_finite()) {
        add(ViolationKind::kRule, field, "sentence_embedding not finite");
      }
    } else if (needs_sentence) {
      add(ViolationKind::kMissing, field, "sentence_embedding required for role " +
                                               std::string(to_string(t.role)));
    }

    if (t.frame_ref) {
      if (*t.frame_ref >= n) {
        add(ViolationKind::kDangling, field,
            "frame_ref " + std::to_string(*t.frame_ref) + " >= frame count " +
                std::to_string(n));
      }
    } else if (needs_frame) {
      add(ViolationKind::kMissing, field, "frame_ref required for role " +
                                               std::string(to_string(t.role)));
    }
  }

  if (b.annotations) {
    for (std::size_t i = 0; i < b.annotations->size(); ++i) {
      const Annotation& a = (*b.annotations)[i];
      const std::string field = "annotations[" + std::to_string(i) + "]";
      if (!std::isfinite(a.t_start) || !std::isfinite(a.t_end) || a.t_start < 0.0 ||
          !(a.t_start < a.t_end)) {
        add(ViolationKind::kRule, field, "requires 0 <= t_start < t_end");
      }
      if (!class_ids.count(a.class_label)) {
        add(ViolationKind::kDangling, field,
            "class_label '" + a.class_label + "' names no class_name item");
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tensor codec

std::string encode_tensor(const Tensor& tensor) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kDtypeF32);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t d : tensor.dims()) put_le<std::uint64_t>(out, d);
  for (double v : tensor.values()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    put_le<std::uint32_t>(out, bits);
  }
  return out;
}

Tensor decode_tensor(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::kBadMagic, origin + ": bad magic");
  }
  if (bytes.size() < 12) throw Error(ErrorCode::kTruncated, origin + ": truncated header");
  const auto dtype = get_le<std::uint32_t>(bytes, 4);
  if (dtype != kDtypeF32) {
    throw Error(ErrorCode::kUnsupportedDtype,
                origin + ": unsupported dtype code " + std::to_string(dtype));
  }
  const auto rank = get_le<std::uint32_t>(bytes, 8);
  std::size_t offset = 12;
  if (bytes.size() < offset + 8ull * rank) {
    throw Error(ErrorCode::kTruncated, origin + ": truncated dims");
  }
  std::vector<std::size_t> dims(rank);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    dims[i] = static_cast<std::size_t>(get_le<std::uint64_t>(bytes, offset));
    offset += 8;
    if (dims[i] == 0) {
      throw Error(ErrorCode::kInvariant, origin + ": zero-sized dimension");
    }
    if (count > (bytes.size() / 4) / dims[i] + 1) {
      throw Error(ErrorCode::kTruncated, origin + ": payload shorter than dims imply");
    }
    count *= dims[i];
  }
  if (bytes.size() - offset < 4 * count) {
    throw Error(ErrorCode::kTruncated, origin + ": payload shorter than dims imply");
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto bits = get_le<std::uint32_t>(bytes, offset + 4 * i);
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    if (!std::isfinite(f)) {
      throw Error(ErrorCode::kNonFinite,
                  origin + ": non-finite value at flat index " + std::to_string(i));
    }
    values[i] = static_cast<double>(f);
  }
  return Tensor(std::move(dims), std::move(values));
}

Tensor read_tensor(const fs::path& path) {
  return decode_tensor(read_file(path), path.string());
}

void write_tensor(const fs::path& path, const Tensor& tensor) {
  write_file(path, encode_tensor(tensor));
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

class ManifestReader {
 public:
  explicit ManifestReader(fs::path dir) : dir_(std::move(dir)) {}

  Tensor tensor(const json& ref) const {
    if (!ref.is_string()) {
      throw Error(ErrorCode::kMalformedManifest, "tensor reference must be a file name");
    }
    return read_tensor(dir_ / ref.get<std::string>());
  }

  HeadSpec head(const json& layers, const char* name) const {
    if (!layers.is_array()) {
      throw Error(ErrorCode::kMalformedManifest, std::string(name) + " must be a layer list");
    }
    HeadSpec head;
    for (const json& l : layers) {
      const std::string type = l.at("type").get<std::string>();
      if (type == "affine") {
        head.layers.emplace_back(Affine{tensor(l.at("weight")), tensor(l.at("bias"))});
      } else if (type == "activation") {
        head.layers.emplace_back(Activation{parse_activation(l.at("kind").get<std::string>())});
      } else if (type == "layernorm") {
        head.layers.emplace_back(LayerNorm{tensor(l.at("gamma")), tensor(l.at("beta")),
                                           l.value("epsilon", 1e-5)});
      } else {
        throw Error(ErrorCode::kMalformedManifest,
                    std::string(name) + ": unknown layer type '" + type + "'");
      }
    }
    return head;
  }

 private:
  fs::path dir_;
};

json head_to_json(const HeadSpec& head, const std::string& prefix, const fs::path& dir) {
  json layers = json::array();
  for (std::size_t i = 0; i < head.layers.size(); ++i) {
    const std::string stem = prefix + "." + std::to_string(i);
    const Layer& layer = head.layers[i];
    if (const auto* a = std::get_if<Affine>(&layer)) {
      write_tensor(dir / (stem + ".weight.bin"), a->weight);
      write_tensor(dir / (stem + ".bias.bin"), a->bias);
      layers.push_back({{"type", "affine"},
                        {"weight", stem + ".weight.bin"},
                        {"bias", stem + ".bias.bin"}});
    } else if (const auto* act = std::get_if<Activation>(&layer)) {
      layers.push_back({{"type", "activation"}, {"kind", to_string(act->kind)}});
    } else {
      const auto& ln = std::get<LayerNorm>(layer);
      write_tensor(dir / (stem + ".gamma.bin"), ln.gamma);
      write_tensor(dir / (stem + ".beta.bin"), ln.beta);
      layers.push_back({{"type", "layernorm"},
                        {"gamma", stem + ".gamma.bin"},
                        {"beta", stem + ".beta.bin"},
                        {"epsilon", ln.epsilon}});
    }
  }
  return layers;
}

VideoBundle parse_manifest(const json& m, const ManifestReader& reader) {
  VideoBundle b;
  b.video_id = m.at("video_id").get<std::string>();
  b.fps = m.at("fps").get<double>();
  b.frame_times = m.at("frame_times").get<std::vector<double>>();
  b.frame_pre_head = reader.tensor(m.at("frame_pre_head"));
  b.head_v = reader.head(m.at("head_v"), "head_v");
  b.head_t = reader.head(m.at("head_t"), "head_t");
  b.logit_scale = m.at("logit_scale").get<double>();
  b.logit_bias = m.at("logit_bias").get<double>();
  for (const json& t : m.at("texts")) {
    TextItem item;
    item.id = t.at("id").get<std::string>();
    item.role = parse_text_role(t.at("role").get<std::string>());
    if (t.contains("class_ref") && !t["class_ref"].is_null()) {
      item.class_ref = t["class_ref"].get<std::string>();
    }
    item.text = t.value("text", "");
    if (t.contains("pre_head") && !t["pre_head"].is_null()) {
      item.pre_head = reader.tensor(t["pre_head"]);
    }
    if (t.contains("sentence_embedding") && !t["sentence_embedding"].is_null()) {
      item.sentence_embedding = reader.tensor(t["sentence_embedding"]);
    }
    if (t.contains("frame_ref") && !t["frame_ref"].is_null()) {
      const auto ref = t["frame_ref"].get<long long>();
      if (ref < 0) {
        throw Error(ErrorCode::kDanglingReference, "texts[" + item.id + "]: negative frame_ref");
      }
      item.frame_ref = static_cast<std::size_t>(ref);
    }
    b.texts.push_back(std::move(item));
  }
  if (m.contains("annotations") && !m["annotations"].is_null()) {
    std::vector<Annotation> anns;
    for (const json& a : m["annotations"]) {
      anns.push_back({a.at("t_start").get<double>(), a.at("t_end").get<double>(),
                      a.at("label").get<std::string>()});
    }
    b.annotations = std::move(anns);
  }
  return b;
}

}  // namespace

VideoBundle load_bundle(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw Error(ErrorCode::kMissingFile, "missing " + manifest_path.string());
  }
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedManifest, manifest_path.string() + ": " + e.what());
  }

  VideoBundle bundle;
  try {
    bundle = parse_manifest(manifest, ManifestReader(dir));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedManifest, manifest_path.string() + ": " + e.what());
  }

  const auto violations = validate_bundle(bundle);
  if (!violations.empty()) {
    ErrorCode code = ErrorCode::kInvariant;
    auto has = [&](ViolationKind k) {
      return std::any_of(violations.begin(), violations.end(),
                         [k](const Violation& v) { return v.kind == k; });
    };
    if (has(ViolationKind::kDimension)) {
      code = ErrorCode::kDimensionMismatch;
    } else if (has(ViolationKind::kDangling)) {
      code = ErrorCode::kDanglingReference;
    }
    std::ostringstream msg;
    msg << dir.string() << ": " << violations.size() << " violation(s)";
    for (const Violation& v : violations) msg << "\n  " << v.describe();
    throw Error(code, msg.str());
  }
  return bundle;
}

void save_bundle(const VideoBundle& b, const fs::path& dir) {
  fs::create_directories(dir);
  json m;
  m["video_id"] = b.video_id;
  m["fps"] = b.fps;
  m["frame_times"] = b.frame_times;
  write_tensor(dir / "frame_pre_head.bin", b.frame_pre_head);
  m["frame_pre_head"] = "frame_pre_head.bin";
  m["head_v"] = head_to_json(b.head_v, "head_v", dir);
  m["head_t"] = head_to_json(b.head_t, "head_t", dir);
  m["logit_scale"] = b.logit_scale;
  m["logit_bias"] = b.logit_bias;

  json texts = json::array();
  for (std::size_t i = 0; i < b.texts.size(); ++i) {
    const TextItem& t = b.texts[i];
    char stem[32];
    std::snprintf(stem, sizeof(stem), "text_%06zu", i);
    json item;
    item["id"] = t.id;
    item["role"] = to_string(t.role);
    item["class_ref"] = t.class_ref ? json(*t.class_ref) : json(nullptr);
    item["text"] = t.text;
    if (t.pre_head) {
      write_tensor(dir / (std::string(stem) + ".pre_head.bin"), *t.pre_head);
      item["pre_head"] = std::string(stem) + ".pre_head.bin";
    } else {
      item["pre_head"] = nullptr;
    }
    if (t.sentence_embedding) {
      write_tensor(dir / (std::string(stem) + ".sentence.bin"), *t.sentence_embedding);
      item["sentence_embedding"] = std::string(stem) + ".sentence.bin";
    } else {
      item["sentence_embedding"] = nullptr;
    }
    item["frame_ref"] = t.frame_ref ? json(*t.frame_ref) : json(nullptr);
    texts.push_back(std::move(item));
  }
  m["texts"] = std::move(texts);
  if (b.annotations) {
    json anns = json::array();
    for (const Annotation& a : *b.annotations) {
      anns.push_back({{"t_start", a.t_start}, {"t_end", a.t_end}, {"label", a.class_label}});
    }
    m["annotations"] = std::move(anns);
  }
  write_file(dir / "manifest.json", m.dump(1) + "\n");
}

VideoBundle quantize_to_disk_precision(const VideoBundle& bundle) {
  VideoBundle out = bundle;
  out.frame_pre_head = quantize(out.frame_pre_head);
  for (HeadSpec* head : {&out.head_v, &out.head_t}) {
    for (Tensor* p : parameters(*head)) *p = quantize(*p);
  }
  for (TextItem& t : out.texts) {
    if (t.pre_head) t.pre_head = quantize(*t.pre_head);
    if (t.sentence_embedding) t.sentence_embedding = quantize(*t.sentence_embedding);
  }
  return out;
}

}  // namespace zstal
