#include "zstal/synth.hpp"

#include <cmath>
#include <cstdio>

#include "zstal/error.hpp"
#include "zstal/rng.hpp"

namespace zstal {

namespace {

std::vector<double> gaussian_vector(Rng& rng, std::size_t d, double sigma) {
  std::vector<double> v(d);
  for (double& x : v) x = sigma * rng.gaussian();
  return v;
}

// `count` orthonormal vectors in R^d by Gram-Schmidt on Gaussian draws.
std::vector<std::vector<double>> orthonormal(Rng& rng, std::size_t count, std::size_t d) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    auto v = gaussian_vector(rng, d, 1.0);
    for (const auto& b : basis) {
      const double p = dot(v, b);
      for (std::size_t i = 0; i < d; ++i) v[i] -= p * b[i];
    }
    const double n = norm2(v);
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

std::vector<double> add_noise(Rng& rng, const std::vector<double>& base, double sigma) {
  std::vector<double> v = base;
  if (sigma > 0.0) {
    for (double& x : v) x += sigma * rng.gaussian();
  }
  return v;
}

std::vector<double> normalized(std::vector<double> v) {
  const double n = norm2(v);
  for (double& x : v) x /= n;
  return v;
}

Tensor near_identity(Rng& rng, std::size_t d, double jitter) {
  Tensor w = Tensor::identity(d);
  const double scale = jitter / std::sqrt(static_cast<double>(d));
  for (double& x : w.values()) x += scale * rng.gaussian();
  return w;
}

std::string padded(const char* prefix, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%05zu", prefix, i);
  return buf;
}

std::string render(const std::string& tmpl, const std::string& name) {
  const auto pos = tmpl.find("{}");
  if (pos == std::string::npos) return tmpl + " " + name;
  return tmpl.substr(0, pos) + name + tmpl.substr(pos + 2);
}

}  // namespace

std::string synth_class_id(std::size_t c) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "action_%02zu", c);
  return buf;
}

VideoBundle synth_bundle(std::uint64_t seed, const SynthSpec& spec) {
  if (spec.frames == 0 || !(spec.fps > 0.0) || spec.classes == 0 ||
      spec.descriptors_per_class == 0 || spec.background_directions == 0) {
    throw Error(ErrorCode::kInvalidArgument, "synth_bundle: empty scenario");
  }
  if (spec.classes + spec.background_directions > spec.dim ||
      spec.classes + spec.background_directions > spec.sentence_dim) {
    throw Error(ErrorCode::kInvalidArgument,
                "synth_bundle: dimensions too small for orthogonal class/background directions");
  }
  const double duration = static_cast<double>(spec.frames) / spec.fps;
  for (const SynthSegment& s : spec.segments) {
    if (!(s.t_start >= 0.0) || !(s.t_end > s.t_start) || s.t_end > duration) {
      throw Error(ErrorCode::kInvalidArgument,
                  "synth_bundle: segment outside [0, N/fps) or empty");
    }
    if (s.class_index >= spec.classes) {
      throw Error(ErrorCode::kInvalidArgument, "synth_bundle: segment class out of range");
    }
  }

  Rng rng(seed);
  const std::size_t d = spec.dim;
  const std::size_t nb = spec.background_directions;
  const auto directions = orthonormal(rng, spec.classes + nb, d);
  const auto sentences = orthonormal(rng, spec.classes + nb, spec.sentence_dim);
  auto class_dir = [&](std::size_t c) { return directions[c]; };
  auto background_dir = [&](std::size_t j) { return directions[spec.classes + j]; };
  auto class_sentence = [&](std::size_t c) { return sentences[c]; };
  auto background_sentence = [&](std::size_t j) { return sentences[spec.classes + j]; };

  VideoBundle b;
  b.video_id = spec.video_id;
  b.fps = spec.fps;
  b.logit_scale = spec.logit_scale;
  b.logit_bias = spec.logit_bias;
  b.head_v.layers = {Affine{near_identity(rng, d, spec.head_jitter), Tensor({d})},
                     Activation{ActivationKind::kIdentity},
                     Affine{near_identity(rng, d, spec.head_jitter), Tensor({d})}};
  b.head_t.layers = {Affine{near_identity(rng, d, spec.head_jitter), Tensor({d})}};

  // Frame label: class index of the covering segment, or nullopt.
  std::vector<std::optional<std::size_t>> frame_class(spec.frames);
  b.frame_times.resize(spec.frames);
  for (std::size_t i = 0; i < spec.frames; ++i) {
    b.frame_times[i] = static_cast<double>(i) / spec.fps;
    for (const SynthSegment& s : spec.segments) {
      if (b.frame_times[i] >= s.t_start && b.frame_times[i] < s.t_end) {
        frame_class[i] = s.class_index;
      }
    }
  }
  auto scene_of = [&](std::size_t i) { return (i / spec.scene_length) % nb; };

  b.frame_pre_head = Tensor::matrix(spec.frames, d);
  for (std::size_t i = 0; i < spec.frames; ++i) {
    const auto base = frame_class[i] ? class_dir(*frame_class[i]) : background_dir(scene_of(i));
    const auto v = add_noise(rng, base, spec.noise);
    std::copy(v.begin(), v.end(), b.frame_pre_head.row(i).begin());
  }

  for (std::size_t c = 0; c < spec.classes; ++c) {
    const std::string id = synth_class_id(c);
    TextItem cls;
    cls.id = id;
    cls.role = TextRole::kClassName;
    cls.text = render(spec.prompt_template, id);
    cls.pre_head = Tensor::vector(class_dir(c));
    cls.sentence_embedding = Tensor::vector(class_sentence(c));
    b.texts.push_back(std::move(cls));

    for (std::size_t k = 0; k < spec.descriptors_per_class; ++k) {
      TextItem desc;
      desc.id = id + "_desc_" + std::to_string(k);
      desc.role = k % 2 == 0 ? TextRole::kDescriptorAction : TextRole::kDescriptorObject;
      desc.class_ref = id;
      desc.text = "descriptor " + std::to_string(k) + " of " + id;
      // The first descriptor is the class direction itself; the rest are
      // perturbed copies of it.
      auto v = k == 0 ? class_dir(c)
                      : normalized(add_noise(rng, class_dir(c),
                                             0.3 / std::sqrt(static_cast<double>(d))));
      desc.pre_head = Tensor::vector(std::move(v));
      b.texts.push_back(std::move(desc));
    }
  }

  const double sentence_sigma = spec.noise / std::sqrt(2.0);
  for (std::size_t i = 0; i < spec.frames; ++i) {
    const bool fg = frame_class[i].has_value();
    const std::size_t scene = scene_of(i);
    const std::string who = fg ? synth_class_id(*frame_class[i]) : "scene " + std::to_string(scene);
    if (spec.triplets) {
      TextItem t;
      t.id = padded("trip_", i);
      t.role = TextRole::kTriplet;
      t.text = fg ? "person perform " + who : "camera show " + who;
      t.frame_ref = i;
      t.pre_head = Tensor::vector(
          add_noise(rng, fg ? class_dir(*frame_class[i]) : background_dir(scene), spec.noise));
      t.sentence_embedding = Tensor::vector(normalized(add_noise(
          rng, fg ? class_sentence(*frame_class[i]) : background_sentence(scene),
          sentence_sigma)));
      b.texts.push_back(std::move(t));
    }
    if (spec.captions) {
      TextItem cap;
      cap.id = padded("cap_", i);
      cap.role = TextRole::kCaption;
      cap.text = fg ? "a person is likely doing " + who : "a view of " + who;
      cap.frame_ref = i;
      cap.sentence_embedding = Tensor::vector(normalized(add_noise(
          rng, fg ? class_sentence(*frame_class[i]) : background_sentence(scene),
          2.0 * sentence_sigma)));
      b.texts.push_back(std::move(cap));
    }
  }

  std::vector<Annotation> anns;
  for (const SynthSegment& s : spec.segments) {
    anns.push_back({s.t_start, s.t_end, synth_class_id(s.class_index)});
  }
  b.annotations = std::move(anns);
  return quantize_to_disk_precision(b);
}

SynthSpec random_scenario(std::uint64_t seed, std::size_t frames, std::size_t classes,
                          double noise, const std::string& video_id) {
  Rng rng(seed ^ 0x9E3779B97F4A7C15ull);
  SynthSpec spec;
  spec.video_id = video_id;
  spec.frames = frames;
  spec.classes = classes;
  spec.noise = noise;
  const std::size_t cls = static_cast<std::size_t>(rng.index(classes));
  const std::size_t count = 1 + static_cast<std::size_t>(rng.index(2));
  // Each segment lives in its own slot of the timeline with a 5-frame margin.
  const std::size_t slot = frames / count;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t max_len = std::min<std::size_t>(60, slot > 10 ? slot - 10 : 1);
    const std::size_t min_len = std::min<std::size_t>(20, max_len);
    const std::size_t len = min_len + static_cast<std::size_t>(rng.index(max_len - min_len + 1));
    const std::size_t lo = k * slot + 5;
    const std::size_t span = slot > len + 10 ? slot - len - 10 : 0;
    const std::size_t start = lo + static_cast<std::size_t>(rng.index(span + 1));
    spec.segments.push_back({static_cast<double>(start) / spec.fps,
                             static_cast<double>(start + len) / spec.fps, cls});
  }
  return spec;
}

}  // namespace zstal
