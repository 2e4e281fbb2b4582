#include "zstal/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "zstal/error.hpp"
#include "zstal/gradcheck.hpp"
#include "zstal/guidance.hpp"
#include "zstal/results_io.hpp"
#include "zstal/rng.hpp"
#include "zstal/synth.hpp"

namespace zstal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_input_error(ErrorCode code) {
  return code != ErrorCode::kNumerical && code != ErrorCode::kInvariant;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) {
      throw Error(ErrorCode::kInvalidArgument, "not a number: '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "empty number list");
  return out;
}

// Class list file: a JSON array of strings, or one class per line.
std::vector<std::string> read_class_list(const fs::path& path) {
  const std::string text = read_text_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') {
    try {
      return json::parse(text).get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedManifest, path.string() + ": " + e.what());
    }
  }
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

RunConfig build_config(const std::string& config_path, const std::vector<std::string>& overrides,
                       const std::optional<std::uint64_t>& seed) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_config_file(config_path);
  if (seed) cfg.seed = *seed;
  apply_overrides(cfg, overrides);
  const auto problems = cfg.check();
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(ErrorCode::kInvalidArgument, msg);
  }
  return cfg;
}

std::vector<double> resolve_thresholds(const std::string& preset, const std::string& custom) {
  if (!custom.empty()) return parse_number_list(custom);
  return thresholds_preset(preset);
}

void print_summary(std::ostream& out, const EvalReport& r) {
  out << "tIoU   ";
  for (double t : r.thresholds) out << ' ' << fmt("%.2f", t);
  out << "\nmAP    ";
  for (double m : r.map) out << ' ' << fmt("%.3f", m);
  out << "\navg mAP " << fmt("%.3f", r.average_map) << '\n';
  if (r.top1) out << "top1 " << fmt("%.4f", *r.top1) << '\n';
  if (r.top5) out << "top5 " << fmt("%.4f", *r.top5) << '\n';
}

struct RunFlags {
  std::string bundles;
  std::string out;
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  unsigned parallel = 1;
  bool strict = false;
  std::string trace_dir;
  std::string rankings_out;
  std::string gt_out;
  std::string sweep;
  std::string preset = "thumos";
};

// Splits "key=v1,v2" into the key and its values.
std::pair<std::string, std::vector<std::string>> parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw Error(ErrorCode::kInvalidArgument, "--sweep expects key=v1,v2,...");
  }
  std::vector<std::string> values;
  std::stringstream ss(text.substr(eq + 1));
  std::string v;
  while (std::getline(ss, v, ',')) values.push_back(v);
  return {text.substr(0, eq), values};
}

int report_failures(const std::vector<VideoOutcome>& outcomes, std::ostream& err) {
  int code = kExitOk;
  for (const VideoOutcome& o : outcomes) {
    if (o.error.empty()) continue;
    err << (o.invalid ? "invalid bundle " : "failed ") << o.dir.string() << ": " << o.error << '\n';
    code = std::max(code, o.invalid ? int(kExitInvalidInput) : int(kExitCheckFailure));
  }
  return code;
}

std::vector<Segment> outcome_ground_truth(const std::vector<fs::path>& dirs) {
  std::vector<Segment> gts;
  for (const fs::path& d : dirs) {
    const auto g = bundle_ground_truth(load_bundle(d));
    gts.insert(gts.end(), g.begin(), g.end());
  }
  return gts;
}

int cmd_run(const RunFlags& f, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = build_config(f.config, f.overrides, f.seed);
  const auto dirs = list_bundle_dirs(f.bundles);
  if (dirs.empty()) throw Error(ErrorCode::kMissingFile, "no bundles under " + f.bundles);

  if (!f.sweep.empty()) {
    const auto [key, values] = parse_sweep(f.sweep);
    const auto thresholds = thresholds_preset(f.preset);
    const auto gts = outcome_ground_truth(dirs);
    std::ostringstream csv;
    csv << key << ",average_map";
    for (double t : thresholds) csv << ",map@" << fmt("%.2f", t);
    csv << '\n';
    for (const std::string& v : values) {
      RunConfig c = cfg;
      c.set(key, v);
      const auto outcomes = localize_dirs(dirs, c, f.parallel);
      if (const int code = report_failures(outcomes, err); code != kExitOk) return code;
      std::vector<Proposal> preds;
      for (const auto& o : outcomes) {
        preds.insert(preds.end(), o.result.proposals.begin(), o.result.proposals.end());
      }
      const EvalReport r = map_report(preds, gts, thresholds);
      csv << v << ',' << fmt("%.6f", r.average_map);
      for (double m : r.map) csv << ',' << fmt("%.6f", m);
      csv << '\n';
    }
    if (f.out.empty()) {
      out << csv.str();
    } else {
      write_text_file(f.out, csv.str());
    }
    return kExitOk;
  }

  const auto outcomes = localize_dirs(dirs, cfg, f.parallel);
  const int code = report_failures(outcomes, err);
  if (code != kExitOk && f.strict) return code;

  std::vector<Proposal> all;
  VideoRankings rankings;
  std::vector<Segment> gts;
  for (const VideoOutcome& o : outcomes) {
    if (!o.error.empty()) continue;
    all.insert(all.end(), o.result.proposals.begin(), o.result.proposals.end());
    auto& ranked = rankings[o.video_id];
    for (std::size_t c : o.result.ranking.ranked) ranked.push_back(o.result.ranking.class_ids[c]);
    if (!f.trace_dir.empty()) {
      for (const ScoreTrace& t : o.result.traces) {
        write_text_file(fs::path(f.trace_dir) / (t.video_id + "__" + t.class_id + ".json"),
                        trace_to_json(t));
      }
    }
    if (!f.gt_out.empty()) {
      const auto g = bundle_ground_truth(load_bundle(o.dir));
      gts.insert(gts.end(), g.begin(), g.end());
    }
  }
  write_text_file(f.out, results_to_json(all));
  if (!f.rankings_out.empty()) write_text_file(f.rankings_out, rankings_to_json(rankings));
  if (!f.gt_out.empty()) write_text_file(f.gt_out, ground_truth_to_json(gts));
  out << "videos " << outcomes.size() << " proposals " << all.size() << '\n';
  return code;
}

struct EvalFlags {
  std::string pred;
  std::string gt;
  std::string preset = "thumos";
  std::string thresholds;
  std::string class_filter;
  std::string splits;
  std::string rankings;
  std::string out;
  std::string csv;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  const auto preds = read_results(f.pred);
  const auto gts = read_ground_truth(f.gt);
  const auto thresholds = resolve_thresholds(f.preset, f.thresholds);
  std::optional<VideoRankings> rankings;
  if (!f.rankings.empty()) rankings = read_rankings(f.rankings);

  if (!f.splits.empty()) {
    json splits;
    try {
      splits = json::parse(read_text_file(f.splits));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedManifest, f.splits + ": " + e.what());
    }
    json reports = json::array();
    std::vector<double> mean_map(thresholds.size(), 0.0);
    double mean_avg = 0.0;
    std::size_t n = 0;
    for (const json& s : splits) {
      const auto unseen = s.at("unseen").get<std::set<std::string>>();
      // Predictions of seen classes are out of scope for this split.
      std::vector<Proposal> kept;
      for (const Proposal& p : preds) {
        if (unseen.count(p.label)) kept.push_back(p);
      }
      const EvalReport r = map_report(kept, gts, thresholds, unseen, rankings);
      out << "split " << n << ": avg mAP " << fmt("%.3f", r.average_map) << '\n';
      for (std::size_t t = 0; t < thresholds.size(); ++t) mean_map[t] += r.map[t];
      mean_avg += r.average_map;
      reports.push_back(json::parse(report_to_json(r)));
      ++n;
    }
    if (n == 0) throw Error(ErrorCode::kInvalidArgument, "splits file has no splits");
    for (double& m : mean_map) m /= static_cast<double>(n);
    mean_avg /= static_cast<double>(n);
    out << "mean over " << n << " splits: avg mAP " << fmt("%.3f", mean_avg) << '\n';
    if (!f.out.empty()) {
      json j{{"thresholds", thresholds}, {"map", mean_map}, {"average_map", mean_avg},
             {"splits", reports}};
      write_text_file(f.out, j.dump(1) + "\n");
    }
    return kExitOk;
  }

  std::optional<std::set<std::string>> filter;
  if (!f.class_filter.empty()) {
    const auto list = read_class_list(f.class_filter);
    filter = std::set<std::string>(list.begin(), list.end());
  }
  const EvalReport r = map_report(preds, gts, thresholds, filter, rankings);
  print_summary(out, r);
  if (!f.out.empty()) write_text_file(f.out, report_to_json(r));
  if (!f.csv.empty()) write_text_file(f.csv, report_to_csv(r));
  return kExitOk;
}

struct AnalyzeFlags {
  std::string bundles;
  std::string out;
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  double transition = 2.0;
  std::string lexicon;
};

int cmd_analyze(const AnalyzeFlags& f, std::ostream& out) {
  const RunConfig cfg = build_config(f.config, f.overrides, f.seed);
  std::vector<fs::path> dirs;
  if (fs::exists(fs::path(f.bundles) / "manifest.json")) {
    dirs.push_back(f.bundles);
  } else {
    dirs = list_bundle_dirs(f.bundles);
  }
  if (dirs.empty()) throw Error(ErrorCode::kMissingFile, "no bundles under " + f.bundles);

  using Key = std::tuple<std::string, FrameGroup, AnalysisMode>;
  std::map<Key, std::pair<double, std::size_t>> sums;
  std::vector<std::string> captions;
  for (const fs::path& d : dirs) {
    const VideoBundle b = load_bundle(d);
    for (const TextItem* t : b.items(TextRole::kCaption)) captions.push_back(t->text);
    if (!b.annotations) continue;
    for (const AnalysisRow& r : similarity_analysis(b, cfg, f.transition)) {
      auto& [sum, count] = sums[{r.class_label, r.group, r.mode}];
      sum += r.mean_cosine * static_cast<double>(r.frame_count);
      count += r.frame_count;
    }
  }
  std::vector<AnalysisRow> rows;
  for (const auto& [key, acc] : sums) {
    AnalysisRow r;
    std::tie(r.class_label, r.group, r.mode) = key;
    r.frame_count = acc.second;
    r.mean_cosine = acc.first / static_cast<double>(acc.second);
    rows.push_back(r);
  }
  const std::string csv = analysis_to_csv(rows);
  if (f.out.empty()) {
    out << csv;
  } else {
    write_text_file(f.out, csv);
  }

  const auto lexicon = f.lexicon.empty() ? default_ambiguity_lexicon() : load_lexicon(f.lexicon);
  const AmbiguityReport amb = ambiguity_scan(captions, lexicon);
  out << "captions " << amb.total_captions << " ambiguous " << amb.flagged_captions << " ("
      << fmt("%.1f", 100.0 * amb.fraction) << "%)\n";
  std::map<std::string, std::size_t> per_term;
  for (const auto& terms : amb.matched_terms) {
    for (const auto& t : terms) ++per_term[t];
  }
  for (const auto& [term, n] : per_term) out << "  " << term << ' ' << n << '\n';
  return kExitOk;
}

struct SynthFlags {
  std::string out;
  std::size_t count = 20;
  std::uint64_t seed = 0;
  std::size_t frames = 200;
  std::size_t classes = 4;
  double noise = 0.1;
  std::string gt;
};

int cmd_synth(const SynthFlags& f, std::ostream& out) {
  std::vector<Segment> gts;
  for (std::size_t i = 0; i < f.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%03zu", i);
    const std::uint64_t seed = f.seed * 1000003ull + i;
    const SynthSpec spec = random_scenario(seed, f.frames, f.classes, f.noise, id);
    const VideoBundle b = synth_bundle(seed, spec);
    save_bundle(b, fs::path(f.out) / id);
    const auto g = bundle_ground_truth(b);
    gts.insert(gts.end(), g.begin(), g.end());
  }
  std::vector<std::string> classes;
  for (std::size_t c = 0; c < f.classes; ++c) classes.push_back(synth_class_id(c));
  write_text_file(fs::path(f.out) / "classes.json", json(classes).dump() + "\n");
  if (!f.gt.empty()) write_text_file(f.gt, ground_truth_to_json(gts));
  out << "wrote " << f.count << " bundles to " << f.out << '\n';
  return kExitOk;
}

struct SplitsFlags {
  std::string classes;
  double fraction = 0.75;
  std::size_t count = 10;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_splits(const SplitsFlags& f, std::ostream& out) {
  auto classes = read_class_list(f.classes);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  const std::size_t z = classes.size();
  if (z < 2) throw Error(ErrorCode::kInvalidArgument, "splits need at least 2 classes");
  if (!(f.fraction > 0.0 && f.fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "fraction must lie in (0, 1)");
  }
  const auto unseen_count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround((1.0 - f.fraction) * static_cast<double>(z))));
  if (unseen_count >= z) {
    throw Error(ErrorCode::kInvalidArgument,
                "fraction " + fmt("%g", f.fraction) + " leaves no seen classes out of " +
                    std::to_string(z));
  }
  Rng rng(f.seed);
  json splits = json::array();
  for (std::size_t s = 0; s < f.count; ++s) {
    std::vector<std::string> order = classes;
    for (std::size_t i = z - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
    std::vector<std::string> unseen(order.begin(), order.begin() + static_cast<long>(unseen_count));
    std::vector<std::string> seen(order.begin() + static_cast<long>(unseen_count), order.end());
    std::sort(unseen.begin(), unseen.end());
    std::sort(seen.begin(), seen.end());
    splits.push_back({{"seen", seen}, {"unseen", unseen}});
  }
  const std::string text = splits.dump(1) + "\n";
  if (f.out.empty()) {
    out << text;
  } else {
    write_text_file(f.out, text);
  }
  return kExitOk;
}

int cmd_gradcheck(const GradCheckOptions& opts, std::ostream& out, std::ostream& err) {
  const auto results = run_gradcheck(opts);
  int code = kExitOk;
  for (const GradCheckResult& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << " instances " << r.instances
        << " max_rel_err " << fmt("%.3e", r.max_relative_error) << '\n';
    if (!r.passed) {
      err << "gradient check failed: " << r.name << '\n';
      code = kExitCheckFailure;
    }
  }
  return code;
}

}  // namespace

std::vector<fs::path> list_bundle_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw Error(ErrorCode::kMissingFile, "not a directory: " + root.string());
  }
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<VideoOutcome> localize_dirs(const std::vector<fs::path>& dirs, const RunConfig& cfg,
                                        unsigned workers) {
  std::vector<VideoOutcome> outcomes(dirs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < dirs.size(); i = next++) {
      VideoOutcome& o = outcomes[i];
      o.dir = dirs[i];
      o.video_id = dirs[i].filename().string();
      try {
        const VideoBundle b = load_bundle(dirs[i]);
        o.video_id = b.video_id;
        o.result = localize(b, cfg);
      } catch (const Error& e) {
        o.error = e.what();
        o.invalid = is_input_error(e.code());
      } catch (const std::exception& e) {
        o.error = e.what();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(dirs.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return outcomes;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Zero-shot temporal action localization with test-time adaptation", "zstal"};
  app.require_subcommand(1, 1);

  RunFlags run;
  std::uint64_t run_seed = 0;
  auto* run_cmd = app.add_subcommand("run", "Localize actions in every bundle of a directory");
  run_cmd->add_option("bundles", run.bundles, "Directory of bundle directories")->required();
  run_cmd->add_option("--out,-o", run.out, "Results JSON (CSV with --sweep)");
  run_cmd->add_option("--config", run.config, "key = value configuration file");
  run_cmd->add_option("--override", run.overrides, "key=value, repeatable")->allow_extra_args(false);
  auto* run_seed_opt = run_cmd->add_option("--seed", run_seed, "Seed for triplet clustering");
  run_cmd->add_option("--parallel", run.parallel, "Worker threads")->check(CLI::PositiveNumber);
  run_cmd->add_flag("--strict", run.strict, "Write nothing if any bundle fails");
  run_cmd->add_option("--trace-scores", run.trace_dir, "Directory for per-class score traces");
  run_cmd->add_option("--rankings", run.rankings_out, "Write per-video class rankings");
  run_cmd->add_option("--gt-out", run.gt_out, "Write the bundles' annotations as ground truth");
  run_cmd->add_option("--sweep", run.sweep, "key=v1,v2,... evaluated against annotations");
  run_cmd->add_option("--preset", run.preset, "Threshold preset for --sweep")
      ->check(CLI::IsMember({"thumos", "anet"}));

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a results file against ground truth");
  eval_cmd->add_option("--pred", ev.pred, "Results JSON")->required();
  eval_cmd->add_option("--gt", ev.gt, "Ground-truth JSON")->required();
  eval_cmd->add_option("--preset", ev.preset, "thumos or anet")
      ->check(CLI::IsMember({"thumos", "anet"}));
  eval_cmd->add_option("--thresholds", ev.thresholds, "Comma-separated tIoU list");
  eval_cmd->add_option("--class-filter", ev.class_filter, "Classes to evaluate");
  eval_cmd->add_option("--splits", ev.splits, "Splits JSON; averages over unseen sets");
  eval_cmd->add_option("--rankings", ev.rankings, "Rankings JSON for top-1/top-5");
  eval_cmd->add_option("--out,-o", ev.out, "Report JSON");
  eval_cmd->add_option("--csv", ev.csv, "Per-class CSV");

  AnalyzeFlags an;
  std::uint64_t an_seed = 0;
  auto* analyze_cmd = app.add_subcommand("analyze", "Similarity analysis and ambiguity scan");
  analyze_cmd->add_option("bundles", an.bundles, "Bundle or directory of bundles")->required();
  analyze_cmd->add_option("--out,-o", an.out, "Analysis CSV");
  analyze_cmd->add_option("--config", an.config, "key = value configuration file");
  analyze_cmd->add_option("--override", an.overrides, "key=value, repeatable")->allow_extra_args(false);
  auto* an_seed_opt = analyze_cmd->add_option("--seed", an_seed, "Seed for triplet clustering");
  analyze_cmd->add_option("--transition", an.transition, "Transition width in seconds");
  analyze_cmd->add_option("--lexicon", an.lexicon, "Ambiguity lexicon file");

  SynthFlags sy;
  auto* synth_cmd = app.add_subcommand("synth", "Write seeded synthetic bundles");
  synth_cmd->add_option("--out,-o", sy.out, "Output directory")->required();
  synth_cmd->add_option("--count", sy.count, "Number of bundles");
  synth_cmd->add_option("--seed", sy.seed, "Seed");
  synth_cmd->add_option("--frames", sy.frames, "Frames per video");
  synth_cmd->add_option("--classes", sy.classes, "Vocabulary size");
  synth_cmd->add_option("--noise", sy.noise, "Per-coordinate noise");
  synth_cmd->add_option("--gt", sy.gt, "Also write a ground-truth JSON");

  SplitsFlags sp;
  auto* splits_cmd = app.add_subcommand("splits", "Seeded seen/unseen class splits");
  splits_cmd->add_option("--classes", sp.classes, "Class list (JSON array or lines)")->required();
  splits_cmd->add_option("--fraction", sp.fraction, "Seen fraction");
  splits_cmd->add_option("--count", sp.count, "Number of splits");
  splits_cmd->add_option("--seed", sp.seed, "Seed");
  splits_cmd->add_option("--out,-o", sp.out, "Splits JSON");

  GradCheckOptions gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient self-check");
  grad_cmd->add_option("--seed", gc.seed, "Seed");
  grad_cmd->add_option("--instances", gc.instances, "Instances per check");
  grad_cmd->add_option("--corrupt", gc.corrupt)->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalidInput;
  }

  try {
    if (run_cmd->parsed()) {
      if (*run_seed_opt) run.seed = run_seed;
      if (run.out.empty() && run.sweep.empty()) {
        err << "run: --out is required\n";
        return kExitInvalidInput;
      }
      return cmd_run(run, out, err);
    }
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (analyze_cmd->parsed()) {
      if (*an_seed_opt) an.seed = an_seed;
      return cmd_analyze(an, out);
    }
    if (synth_cmd->parsed()) return cmd_synth(sy, out);
    if (splits_cmd->parsed()) return cmd_splits(sp, out);
    return cmd_gradcheck(gc, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return is_input_error(e.code()) ? kExitInvalidInput : kExitCheckFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitCheckFailure;
  }
}

}  // namespace zstal
