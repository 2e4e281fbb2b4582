#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "zstal/error.hpp"
#include "zstal/metrics.hpp"
#include "zstal/synth.hpp"

namespace zstal {
namespace {

std::vector<Proposal> random_preds(Rng& rng, std::size_t n, const std::string& label) {
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string video = rng.uniform() < 0.5 ? "v0" : "v1";
    const double a = std::floor(rng.uniform(0, 10)), len = 1 + std::floor(rng.uniform(0, 5));
    out.push_back({video, a, a + len, label, std::floor(rng.uniform() * 6) / 6});
  }
  return out;
}

std::vector<Segment> random_gts(Rng& rng, std::size_t n, const std::string& label) {
  std::vector<Segment> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string video = rng.uniform() < 0.5 ? "v0" : "v1";
    const double a = std::floor(rng.uniform(0, 10)), len = 1 + std::floor(rng.uniform(0, 5));
    out.push_back({video, a, a + len, label});
  }
  return out;
}

TEST(Tiou, Examples) {
  EXPECT_EQ(tiou({1, 4}, {1, 4}), 1.0);
  EXPECT_EQ(tiou({0, 1}, {2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(tiou({0, 2}, {1, 3}), 1.0 / 3.0);
  EXPECT_THROW(tiou({2, 2}, {1, 3}), Error);
  EXPECT_THROW(tiou({0, 1}, {3, 1}), Error);
}

TEST(AveragePrecision, ExactCover) {
  const std::vector<Segment> gts{{"v", 2, 5, "a"}};
  const std::vector<Proposal> preds{{"v", 2, 5, "a", 0.3}};
  for (double t : thresholds_preset("anet")) EXPECT_EQ(*average_precision(preds, gts, t), 1.0);
}

TEST(AveragePrecision, BelowThreshold) {
  const std::vector<Segment> gts{{"v", 0, 4, "a"}};
  const std::vector<Proposal> preds{{"v", 3, 7, "a", 0.3}};
  EXPECT_EQ(*average_precision(preds, gts, 0.5), 0.0);
}

TEST(AveragePrecision, FalsePositiveThenTruePositive) {
  const std::vector<Segment> gts{{"v", 0, 4, "a"}};
  const std::vector<Proposal> preds{{"v", 10, 12, "a", 0.9}, {"v", 0, 4, "a", 0.5}};
  EXPECT_DOUBLE_EQ(*average_precision(preds, gts, 0.5), 0.5);
}

TEST(AveragePrecision, OtherVideosNeverMatch) {
  const std::vector<Segment> gts{{"v", 0, 4, "a"}};
  const std::vector<Proposal> preds{{"w", 0, 4, "a", 0.9}};
  EXPECT_EQ(*average_precision(preds, gts, 0.5), 0.0);
  EXPECT_FALSE(average_precision({}, {}, 0.5).has_value());
  EXPECT_EQ(*average_precision(preds, {}, 0.5), 0.0);
}

TEST(AveragePrecision, MatchesExhaustiveReference) {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const auto preds = random_preds(rng, rng.index(9), "a");
    const auto gts = random_gts(rng, 1 + rng.index(4), "a");
    for (double t : {0.1, 0.3, 0.5, 0.7}) {
      EXPECT_NEAR(*average_precision(preds, gts, t), oracle::average_precision(preds, gts, t),
                  1e-9);
    }
  }
}

TEST(AveragePrecision, InvariantUnderMonotoneScoreMap) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto preds = random_preds(rng, 1 + rng.index(8), "a");
    const auto gts = random_gts(rng, 1 + rng.index(4), "a");
    const double before = *average_precision(preds, gts, 0.3);
    for (Proposal& p : preds) p.score = std::exp(3.0 * p.score) - 7.0;
    EXPECT_EQ(*average_precision(preds, gts, 0.3), before);
  }
}

// Above 0.5 a prediction can match at most one of several disjoint ground
// truths, so a copy of it can only add a false positive.
TEST(AveragePrecision, DuplicatesNeverHelp) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto preds = random_preds(rng, 1 + rng.index(7), "a");
    std::vector<Segment> gts;
    double t = 0.0;
    for (std::size_t i = 0, n = 1 + rng.index(4); i < n; ++i) {
      const double a = t + std::floor(rng.uniform(0, 3));
      t = a + 1 + std::floor(rng.uniform(0, 4));
      gts.push_back({rng.uniform() < 0.5 ? "v0" : "v1", a, t, "a"});
    }
    const double thr = rng.uniform(0.51, 0.9);
    const double before = *average_precision(preds, gts, thr);
    preds.push_back(preds[rng.index(preds.size())]);
    EXPECT_LE(*average_precision(preds, gts, thr), before + 1e-12);
  }
}

TEST(MapReport, PerfectAndEmpty) {
  const std::vector<Segment> gts{{"v", 0, 4, "a"}, {"v", 6, 9, "b"}, {"w", 1, 2, "a"}};
  std::vector<Proposal> perfect;
  for (const Segment& s : gts) perfect.push_back({s.video_id, s.t_start, s.t_end, s.label, 1.0});
  const auto t = thresholds_preset("thumos");
  const EvalReport r = map_report(perfect, gts, t);
  for (double m : r.map) EXPECT_EQ(m, 1.0);
  EXPECT_EQ(r.average_map, 1.0);
  ASSERT_EQ(r.classes.size(), 2u);
  EXPECT_EQ(r.classes[0].label, "a");

  const EvalReport e = map_report({}, gts, t);
  for (double m : e.map) EXPECT_EQ(m, 0.0);
}

TEST(MapReport, FilterAndUnknownLabels) {
  const std::vector<Segment> gts{{"v", 0, 4, "a"}, {"v", 6, 9, "b"}};
  const std::vector<Proposal> preds{{"v", 0, 4, "a", 1.0}, {"v", 0, 9, "b", 1.0}};
  const EvalReport r = map_report(preds, gts, {0.5}, std::set<std::string>{"a"});
  ASSERT_EQ(r.classes.size(), 1u);
  EXPECT_EQ(r.map[0], 1.0);
  EXPECT_THROW(map_report({{"v", 0, 4, "zzz", 1.0}}, gts, {0.5}), Error);
}

TEST(MapReport, TopKAccuracy) {
  const std::vector<Segment> gts{{"v", 0, 4, "a"}, {"w", 0, 4, "b"}};
  VideoRankings rankings{{"v", {"a", "b"}}, {"w", {"a", "b"}}};
  const EvalReport r = map_report({}, gts, {0.5}, std::nullopt, rankings);
  EXPECT_DOUBLE_EQ(*r.top1, 0.5);
  EXPECT_DOUBLE_EQ(*r.top5, 1.0);
}

TEST(Presets, ExactThresholds) {
  EXPECT_EQ(thresholds_preset("thumos"), (std::vector<double>{0.3, 0.4, 0.5, 0.6, 0.7}));
  EXPECT_EQ(thresholds_preset("anet"),
            (std::vector<double>{0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95}));
  EXPECT_THROW(thresholds_preset("coco"), Error);
}

TEST(GroupFrames, ClosedIntervalsAndTransitions) {
  std::vector<double> times;
  for (int i = 0; i < 12; ++i) times.push_back(i);
  const std::vector<Annotation> anns{{4.0, 6.0, "a"}};
  const auto g = group_frames(times, anns, 2.0);
  EXPECT_EQ(g[4], FrameGroup::kForeground);
  EXPECT_EQ(g[6], FrameGroup::kForeground);
  EXPECT_EQ(g[2], FrameGroup::kTransition);
  EXPECT_EQ(g[3], FrameGroup::kTransition);
  EXPECT_EQ(g[8], FrameGroup::kTransition);
  EXPECT_EQ(g[1], FrameGroup::kBackground);
  EXPECT_EQ(g[9], FrameGroup::kBackground);
}

TEST(GroupFrames, OrderInvariant) {
  Rng rng(4);
  std::vector<double> times;
  for (int i = 0; i < 60; ++i) times.push_back(0.5 * i);
  std::vector<Annotation> anns;
  for (int k = 0; k < 4; ++k) {
    const double a = rng.uniform(0, 25);
    anns.push_back({a, a + rng.uniform(0.5, 5), "a"});
  }
  const auto g = group_frames(times, anns, 2.0);
  std::reverse(anns.begin(), anns.end());
  EXPECT_EQ(group_frames(times, anns, 2.0), g);
}

TEST(SimilarityAnalysis, ForegroundAboveBackground) {
  SynthSpec spec;
  spec.frames = 120;
  spec.segments = {{40.0, 80.0, 1}};
  const VideoBundle b = synth_bundle(3, spec);
  const auto rows = similarity_analysis(b, RunConfig{});
  double fg = 0, bg = 0;
  for (const AnalysisRow& r : rows) {
    if (r.mode != AnalysisMode::kImageToClass) continue;
    if (r.group == FrameGroup::kForeground) fg = r.mean_cosine;
    if (r.group == FrameGroup::kBackground) bg = r.mean_cosine;
  }
  EXPECT_GT(fg, bg);
  EXPECT_EQ(rows.size(), 9u);
}

TEST(SimilarityAnalysis, NoBackgroundRowsWithoutBackground) {
  SynthSpec spec;
  spec.frames = 20;
  spec.segments = {{0.0, 20.0, 0}};
  const auto rows = similarity_analysis(synth_bundle(1, spec), RunConfig{});
  ASSERT_FALSE(rows.empty());
  for (const AnalysisRow& r : rows) {
    EXPECT_NE(r.group, FrameGroup::kBackground);
    EXPECT_NE(r.group, FrameGroup::kTransition);
  }
  VideoBundle none = synth_bundle(1, spec);
  none.annotations.reset();
  EXPECT_THROW(similarity_analysis(none, RunConfig{}), Error);
}

}  // namespace
}  // namespace zstal
