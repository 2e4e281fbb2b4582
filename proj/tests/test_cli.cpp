#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "json.hpp"
#include "oracles.hpp"
#include "zstal/cli.hpp"
#include "zstal/config.hpp"
#include "zstal/error.hpp"
#include "zstal/results_io.hpp"

namespace zstal {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Invocation {
  int code;
  std::string out;
  std::string err;
};

Invocation cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Synthetic corpus shared by the tests below.
const fs::path& corpus() {
  static const fs::path dir = [] {
    const fs::path d = oracle::scratch_dir("cli_corpus");
    const auto r = cli({"synth", "--out", (d / "bundles").string(), "--count", "3", "--frames",
                        "80", "--gt", (d / "gt.json").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

TEST(Config, DefaultsMatchPublishedConstants) {
  const RunConfig c;
  EXPECT_EQ(c.k_actions, 2);
  EXPECT_EQ(c.alpha, 0.5);
  EXPECT_EQ(c.gamma, 5.0);
  EXPECT_EQ(c.lambda_tmp, 1e-2);
  EXPECT_EQ(c.steps_T, 10);
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.s_clusters, 20);
  EXPECT_EQ(c.prompt_template, "A video of action {}");
  EXPECT_TRUE(c.check().empty());
}

TEST(Config, ParseFileAndOverrides) {
  RunConfig c = parse_config_text("# comment\nalpha = 0.25\n\nsteps_T=3\nloss = byol\n");
  EXPECT_EQ(c.alpha, 0.25);
  EXPECT_EQ(c.steps_T, 3);
  EXPECT_EQ(c.loss, LossKind::kByol);
  apply_overrides(c, {"alpha=0", "s_clusters=5"});
  EXPECT_EQ(c.alpha, 0.0);
  EXPECT_EQ(c.s_clusters, 5);
  EXPECT_THROW(apply_overrides(c, {"unknown=1"}), Error);
  EXPECT_THROW(apply_overrides(c, {"alpha"}), Error);
  EXPECT_THROW(c.set("steps_T", "ten"), Error);
  const RunConfig again = parse_config_text(c.to_text());
  EXPECT_EQ(again.to_text(), c.to_text());
}

TEST(Config, CheckFindsBadValues) {
  RunConfig c;
  c.percentile_p = 80.0;
  c.nms_tiou = 2.0;
  EXPECT_EQ(c.check().size(), 2u);
}

TEST(Cli, RunCoversEveryVideo) {
  const fs::path d = corpus();
  const auto r = cli({"run", (d / "bundles").string(), "--out", (d / "res.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::set<std::string> videos;
  for (const Proposal& p : read_results(d / "res.json")) videos.insert(p.video_id);
  EXPECT_EQ(videos.size(), 3u);
}

TEST(Cli, ParallelismDoesNotChangeBytes) {
  const fs::path d = corpus();
  ASSERT_EQ(cli({"run", (d / "bundles").string(), "--out", (d / "p1.json").string(),
                 "--parallel", "1"}).code, 0);
  ASSERT_EQ(cli({"run", (d / "bundles").string(), "--out", (d / "p8.json").string(),
                 "--parallel", "8"}).code, 0);
  EXPECT_EQ(read_text_file(d / "p1.json"), read_text_file(d / "p8.json"));
}

TEST(Cli, AlphaOverrideChangesResults) {
  const fs::path d = corpus();
  ASSERT_EQ(cli({"run", (d / "bundles").string(), "--out", (d / "a.json").string()}).code, 0);
  ASSERT_EQ(cli({"run", (d / "bundles").string(), "--out", (d / "a0.json").string(),
                 "--override", "alpha=0"}).code, 0);
  EXPECT_NE(read_text_file(d / "a.json"), read_text_file(d / "a0.json"));
}

TEST(Cli, InvalidBundleIsListedAndOthersContinue) {
  const fs::path d = oracle::scratch_dir("cli_invalid");
  fs::copy(corpus() / "bundles", d / "bundles", fs::copy_options::recursive);
  write_text_file(d / "bundles" / "synth_001" / "manifest.json", "{}");
  const auto r = cli({"run", (d / "bundles").string(), "--out", (d / "res.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("synth_001"), std::string::npos);
  std::set<std::string> videos;
  for (const Proposal& p : read_results(d / "res.json")) videos.insert(p.video_id);
  EXPECT_EQ(videos, (std::set<std::string>{"synth_000", "synth_002"}));

  const auto strict = cli({"run", (d / "bundles").string(), "--out",
                           (d / "strict.json").string(), "--strict"});
  EXPECT_EQ(strict.code, 2);
  EXPECT_FALSE(fs::exists(d / "strict.json"));
}

TEST(Cli, BadOverrideIsInputError) {
  const auto r = cli({"run", (corpus() / "bundles").string(), "--out", "/dev/null", "--override",
                      "nonsense=1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
}

TEST(Cli, TraceDumpAndRankings) {
  const fs::path d = corpus();
  const auto r = cli({"run", (d / "bundles").string(), "--out", (d / "t.json").string(),
                      "--trace-scores", (d / "traces").string(), "--rankings",
                      (d / "rank.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t traces = 0;
  for (const auto& e : fs::directory_iterator(d / "traces")) {
    const json j = json::parse(read_text_file(e.path()));
    EXPECT_TRUE(j.contains("final_scores"));
    ++traces;
  }
  EXPECT_GE(traces, 3u);
  EXPECT_EQ(read_rankings(d / "rank.json").size(), 3u);
}

TEST(Cli, EvalPerfectPredictions) {
  const fs::path d = corpus();
  std::vector<Proposal> perfect;
  for (const Segment& s : read_ground_truth(d / "gt.json")) {
    perfect.push_back({s.video_id, s.t_start, s.t_end, s.label, 1.0});
  }
  write_text_file(d / "perfect.json", results_to_json(perfect));
  const auto r = cli({"eval", "--pred", (d / "perfect.json").string(), "--gt",
                      (d / "gt.json").string(), "--out", (d / "report.json").string(), "--csv",
                      (d / "report.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("avg mAP 1.000"), std::string::npos);
  const json rep = json::parse(read_text_file(d / "report.json"));
  EXPECT_EQ(rep["thresholds"].get<std::vector<double>>(),
            (std::vector<double>{0.3, 0.4, 0.5, 0.6, 0.7}));
  EXPECT_EQ(read_text_file(d / "report.csv").rfind("class,threshold,ap\n", 0), 0u);

  const auto anet = cli({"eval", "--pred", (d / "perfect.json").string(), "--gt",
                         (d / "gt.json").string(), "--preset", "anet", "--out",
                         (d / "anet.json").string()});
  ASSERT_EQ(anet.code, 0);
  EXPECT_EQ(json::parse(read_text_file(d / "anet.json"))["thresholds"].size(), 10u);
}

TEST(Cli, SplitsArithmeticAndDeterminism) {
  const fs::path d = oracle::scratch_dir("cli_splits");
  std::vector<std::string> classes;
  for (int i = 0; i < 20; ++i) classes.push_back("c" + std::to_string(i));
  write_text_file(d / "classes.json", json(classes).dump());
  auto splits = [&](const std::string& frac, const std::string& out) {
    return cli({"splits", "--classes", (d / "classes.json").string(), "--fraction", frac,
                "--seed", "3", "--out", (d / out).string()});
  };
  ASSERT_EQ(splits("0.75", "a.json").code, 0);
  ASSERT_EQ(splits("0.75", "b.json").code, 0);
  EXPECT_EQ(read_text_file(d / "a.json"), read_text_file(d / "b.json"));
  const json a = json::parse(read_text_file(d / "a.json"));
  ASSERT_EQ(a.size(), 10u);
  for (const json& s : a) EXPECT_EQ(s["unseen"].size(), 5u);

  ASSERT_EQ(splits("0.5", "h.json").code, 0);
  for (const json& s : json::parse(read_text_file(d / "h.json"))) {
    std::set<std::string> all;
    for (const auto& c : s["seen"]) all.insert(c.get<std::string>());
    for (const auto& c : s["unseen"]) EXPECT_TRUE(all.insert(c.get<std::string>()).second);
    EXPECT_EQ(all.size(), 20u);
  }

  write_text_file(d / "one.json", "[\"solo\"]");
  EXPECT_EQ(cli({"splits", "--classes", (d / "one.json").string()}).code, 2);
}

TEST(Cli, GradcheckReportsAndFails) {
  const auto ok = cli({"gradcheck"});
  EXPECT_EQ(ok.code, 0);
  for (const char* name : {"head_backward", "margin_loss", "smoothness_loss", "objective"}) {
    EXPECT_NE(ok.out.find(name), std::string::npos);
  }
  EXPECT_NE(ok.out.find("max_rel_err"), std::string::npos);
  const auto bad = cli({"gradcheck", "--corrupt", "margin_loss"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("margin_loss"), std::string::npos);
}

TEST(Cli, AnalyzeWritesCsvAndScansCaptions) {
  const fs::path d = corpus();
  const auto r = cli({"analyze", (d / "bundles").string(), "--out", (d / "an.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text_file(d / "an.csv").rfind("class,group,mode,mean_cosine,frame_count\n", 0),
            0u);
  EXPECT_NE(r.out.find("captions 240"), std::string::npos);
}

TEST(Cli, SweepEmitsOneRowPerValue) {
  const fs::path d = corpus();
  const auto r = cli({"run", (d / "bundles").string(), "--sweep", "s_clusters=1,5,20"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 4);
  EXPECT_EQ(r.out.rfind("s_clusters,average_map", 0), 0u);
}

}  // namespace
}  // namespace zstal
