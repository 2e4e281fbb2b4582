#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "oracles.hpp"
#include "zstal/bundle.hpp"
#include "zstal/error.hpp"
#include "zstal/results_io.hpp"
#include "zstal/synth.hpp"

namespace zstal {
namespace {

namespace fs = std::filesystem;

std::string le32(std::uint32_t v) {
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  return s;
}

std::string le64(std::uint64_t v) {
  std::string s(8, '\0');
  for (int i = 0; i < 8; ++i) s[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  return s;
}

std::string f32(float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  return le32(bits);
}

SynthSpec small_spec() {
  SynthSpec spec;
  spec.video_id = "vid";
  spec.frames = 40;
  spec.segments = {{10.0, 20.0, 1}};
  return spec;
}

ErrorCode load_error(const fs::path& dir) {
  try {
    load_bundle(dir);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "load_bundle succeeded";
  return ErrorCode::kInvariant;
}

void edit_manifest(const fs::path& dir, const std::function<void(nlohmann::json&)>& fn) {
  auto j = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  fn(j);
  write_text_file(dir / "manifest.json", j.dump(1));
}

TEST(TensorCodec, IdentityFile) {
  const std::string bytes = "TGU1" + le32(0) + le32(2) + le64(2) + le64(2) + f32(1) + f32(0) +
                            f32(0) + f32(1);
  EXPECT_EQ(decode_tensor(bytes, "mem"), Tensor::identity(2));
}

TEST(TensorCodec, BadMagic) {
  const std::string bytes = "XXXX" + le32(0) + le32(1) + le64(1) + f32(1);
  try {
    decode_tensor(bytes, "mem");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBadMagic);
  }
}

TEST(TensorCodec, TruncatedPayload) {
  const std::string bytes =
      "TGU1" + le32(0) + le32(3) + le64(2) + le64(2) + le64(2) + std::string(4 * 4, '\0');
  try {
    decode_tensor(bytes, "mem");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTruncated);
  }
}

TEST(TensorCodec, RejectsOtherDtypesAndNonFinite) {
  try {
    decode_tensor("TGU1" + le32(1) + le32(1) + le64(1) + f32(1), "mem");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupportedDtype);
  }
  try {
    decode_tensor("TGU1" + le32(0) + le32(1) + le64(1) + f32(std::nanf("")), "mem");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
  }
}

TEST(TensorCodec, EncodeDecodeRoundTrip) {
  const Tensor t({2, 3}, {1.5, -2.25, 0.0, 3.0, 1e-3f, 7.0});
  const std::string bytes = encode_tensor(t);
  EXPECT_EQ(bytes.substr(0, 4), "TGU1");
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 2 * 8 + 6 * 4);
  EXPECT_EQ(decode_tensor(bytes, "mem"), t);
}

TEST(Bundle, SynthRoundTripIsBitIdentical) {
  const VideoBundle b = synth_bundle(3, small_spec());
  const fs::path dir = oracle::scratch_dir("roundtrip");
  save_bundle(b, dir);
  const VideoBundle back = load_bundle(dir);
  EXPECT_TRUE(validate_bundle(back).empty());
  EXPECT_EQ(back.frame_pre_head, b.frame_pre_head);
  EXPECT_EQ(back.frame_times, b.frame_times);
  ASSERT_EQ(back.texts.size(), b.texts.size());
  for (std::size_t i = 0; i < b.texts.size(); ++i) {
    EXPECT_EQ(back.texts[i].id, b.texts[i].id);
    EXPECT_EQ(back.texts[i].pre_head, b.texts[i].pre_head);
    EXPECT_EQ(back.texts[i].sentence_embedding, b.texts[i].sentence_embedding);
    EXPECT_EQ(back.texts[i].frame_ref, b.texts[i].frame_ref);
  }
  const auto p0 = parameters(b.head_v), p1 = parameters(back.head_v);
  ASSERT_EQ(p0.size(), p1.size());
  for (std::size_t i = 0; i < p0.size(); ++i) EXPECT_EQ(*p0[i], *p1[i]);

  const fs::path again = oracle::scratch_dir("roundtrip2");
  save_bundle(back, again);
  EXPECT_EQ(read_text_file(dir / "manifest.json"), read_text_file(again / "manifest.json"));
}

TEST(Bundle, HeadWidthMismatchIsDimensionError) {
  SynthSpec spec = small_spec();
  VideoBundle b = synth_bundle(1, spec);
  Tensor wide = Tensor::matrix(b.frame_count(), 16, 0.5);
  VideoBundle bad = b;
  bad.frame_pre_head = wide;
  const fs::path dir = oracle::scratch_dir("dim");
  save_bundle(bad, dir);
  EXPECT_EQ(load_error(dir), ErrorCode::kDimensionMismatch);
}

TEST(Bundle, EmptyAnnotationIsRejected) {
  VideoBundle b = synth_bundle(1, small_spec());
  (*b.annotations)[0].t_end = (*b.annotations)[0].t_start;
  const auto v = validate_bundle(b);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].field, "annotations[0]");
  const fs::path dir = oracle::scratch_dir("ann");
  save_bundle(b, dir);
  EXPECT_EQ(load_error(dir), ErrorCode::kInvariant);
}

TEST(Bundle, ValidBundleHasNoViolations) {
  EXPECT_TRUE(validate_bundle(synth_bundle(5, small_spec())).empty());
}

TEST(Bundle, FrameTimesMustIncrease) {
  VideoBundle b = synth_bundle(1, small_spec());
  b.frame_times[5] = b.frame_times[4];
  const auto v = validate_bundle(b);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].field, "frame_times");
}

TEST(Bundle, DescriptorWithoutClassRef) {
  VideoBundle b = synth_bundle(1, small_spec());
  TextItem* desc = nullptr;
  for (TextItem& t : b.texts) {
    if (t.role == TextRole::kDescriptorAction) {
      desc = &t;
      break;
    }
  }
  ASSERT_NE(desc, nullptr);
  desc->class_ref.reset();
  const auto v = validate_bundle(b);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].field.find(desc->id), std::string::npos);
}

TEST(Bundle, DanglingReferences) {
  VideoBundle b = synth_bundle(1, small_spec());
  (*b.annotations)[0].class_label = "nope";
  for (TextItem& t : b.texts) {
    if (t.role == TextRole::kCaption) {
      t.frame_ref = 10'000;
      break;
    }
  }
  const auto v = validate_bundle(b);
  ASSERT_EQ(v.size(), 2u);
  for (const Violation& x : v) EXPECT_EQ(x.kind, ViolationKind::kDangling);
}

TEST(Bundle, MissingAndMalformedFiles) {
  const VideoBundle b = synth_bundle(2, small_spec());
  const fs::path dir = oracle::scratch_dir("missing");
  save_bundle(b, dir);
  fs::remove(dir / "frame_pre_head.bin");
  EXPECT_EQ(load_error(dir), ErrorCode::kMissingFile);

  save_bundle(b, dir);
  write_text_file(dir / "manifest.json", "{ not json");
  EXPECT_EQ(load_error(dir), ErrorCode::kMalformedManifest);

  save_bundle(b, dir);
  edit_manifest(dir, [](nlohmann::json& j) { j.erase("fps"); });
  EXPECT_EQ(load_error(dir), ErrorCode::kMalformedManifest);

  save_bundle(b, dir);
  edit_manifest(dir, [](nlohmann::json& j) { j["texts"][0]["role"] = "poem"; });
  EXPECT_EQ(load_error(dir), ErrorCode::kMalformedManifest);

  EXPECT_EQ(load_error(dir / "absent"), ErrorCode::kMissingFile);
}

TEST(Bundle, BundleWithoutAnnotationsLoads) {
  VideoBundle b = synth_bundle(2, small_spec());
  b.annotations.reset();
  const fs::path dir = oracle::scratch_dir("noann");
  save_bundle(b, dir);
  EXPECT_FALSE(load_bundle(dir).annotations.has_value());
}

TEST(Synth, SameSeedSameBytes) {
  const fs::path a = oracle::scratch_dir("synth_a"), b = oracle::scratch_dir("synth_b");
  save_bundle(synth_bundle(1, small_spec()), a);
  save_bundle(synth_bundle(1, small_spec()), b);
  for (const auto& entry : fs::directory_iterator(a)) {
    EXPECT_EQ(read_text_file(entry.path()), read_text_file(b / entry.path().filename()))
        << entry.path().filename();
  }
}

TEST(Synth, NoiselessForegroundMatchesDescriptor) {
  SynthSpec spec = small_spec();
  spec.noise = 0.0;
  const VideoBundle b = synth_bundle(4, spec);
  const auto desc = b.descriptors(synth_class_id(1)).front();
  const auto d = desc->pre_head->values();
  for (std::size_t i = 10; i < 20; ++i) {
    EXPECT_NEAR(oracle::cosine(oracle::row_of(b.frame_pre_head, i), d), 1.0, 1e-6);
  }
}

TEST(Synth, ForegroundCloserThanBackground) {
  SynthSpec spec;
  spec.frames = 200;
  spec.noise = 0.1;
  spec.segments = {{50.0, 100.0, 2}};
  const VideoBundle b = synth_bundle(9, spec);
  const auto d = b.descriptors(synth_class_id(2)).front()->pre_head->values();
  double fg = 0.0, bg = 0.0;
  for (std::size_t i = 0; i < 200; ++i) {
    const double c = oracle::cosine(oracle::row_of(b.frame_pre_head, i), d);
    (i >= 50 && i < 100 ? fg : bg) += c;
  }
  EXPECT_GT(fg / 50.0, bg / 150.0);
}

TEST(Synth, RejectsInconsistentSpec) {
  SynthSpec spec = small_spec();
  spec.segments = {{30.0, 50.0, 0}};
  EXPECT_THROW(synth_bundle(0, spec), Error);
  spec = small_spec();
  spec.dim = 4;
  EXPECT_THROW(synth_bundle(0, spec), Error);
}

}  // namespace
}  // namespace zstal
