#include "zstal/results_io.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "zstal/error.hpp"

namespace zstal {

using nlohmann::json;

namespace {

std::string fixed9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json parse(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedManifest, std::string(what) + ": " + e.what());
  }
}

json doubles(const std::vector<double>& v) { return json(v); }

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kMissingFile, "cannot write " + path.string());
  out << text;
}

std::string results_to_json(const std::vector<Proposal>& proposals) {
  std::string out = "[";
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const Proposal& p = proposals[i];
    out += i == 0 ? "\n  " : ",\n  ";
    out += "{\"video_id\": " + json(p.video_id).dump() +
           ", \"t_start\": " + fixed9(p.t_start) + ", \"t_end\": " + fixed9(p.t_end) +
           ", \"label\": " + json(p.label).dump() + ", \"score\": " + full(p.score) + "}";
  }
  out += proposals.empty() ? "]\n" : "\n]\n";
  return out;
}

std::vector<Proposal> results_from_json(const std::string& text) {
  const json j = parse(text, "results");
  if (!j.is_array()) throw Error(ErrorCode::kMalformedManifest, "results: expected an array");
  std::vector<Proposal> out;
  try {
    for (const json& p : j) {
      out.push_back({p.at("video_id").get<std::string>(), p.at("t_start").get<double>(),
                     p.at("t_end").get<double>(), p.at("label").get<std::string>(),
                     p.at("score").get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedManifest, std::string("results: ") + e.what());
  }
  return out;
}

std::vector<Proposal> read_results(const std::filesystem::path& path) {
  return results_from_json(read_text_file(path));
}

std::string ground_truth_to_json(const std::vector<Segment>& segments) {
  json j = json::object();
  for (const Segment& s : segments) {
    if (!j.contains(s.video_id)) j[s.video_id] = json::array();
    j[s.video_id].push_back({{"t_start", s.t_start}, {"t_end", s.t_end}, {"label", s.label}});
  }
  return j.dump(1) + "\n";
}

std::vector<Segment> ground_truth_from_json(const std::string& text) {
  const json j = parse(text, "ground truth");
  if (!j.is_object()) {
    throw Error(ErrorCode::kMalformedManifest, "ground truth: expected an object");
  }
  std::vector<Segment> out;
  try {
    for (const auto& [video, segs] : j.items()) {
      for (const json& s : segs) {
        out.push_back({video, s.at("t_start").get<double>(), s.at("t_end").get<double>(),
                       s.at("label").get<std::string>()});
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedManifest, std::string("ground truth: ") + e.what());
  }
  return out;
}

std::vector<Segment> read_ground_truth(const std::filesystem::path& path) {
  return ground_truth_from_json(read_text_file(path));
}

std::vector<Segment> bundle_ground_truth(const VideoBundle& bundle) {
  std::vector<Segment> out;
  if (!bundle.annotations) return out;
  for (const Annotation& a : *bundle.annotations) {
    out.push_back({bundle.video_id, a.t_start, a.t_end, a.class_label});
  }
  return out;
}

std::string rankings_to_json(const VideoRankings& rankings) {
  return json(rankings).dump(1) + "\n";
}

VideoRankings read_rankings(const std::filesystem::path& path) {
  const json j = parse(read_text_file(path), "rankings");
  try {
    return j.get<VideoRankings>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedManifest, std::string("rankings: ") + e.what());
  }
}

std::string report_to_json(const EvalReport& report) {
  json j;
  j["thresholds"] = doubles(report.thresholds);
  j["map"] = doubles(report.map);
  j["average_map"] = report.average_map;
  j["top1"] = report.top1 ? json(*report.top1) : json(nullptr);
  j["top5"] = report.top5 ? json(*report.top5) : json(nullptr);
  json classes = json::array();
  for (const ClassRow& row : report.classes) {
    classes.push_back({{"label", row.label}, {"ap", doubles(row.ap)}, {"average", row.average}});
  }
  j["classes"] = std::move(classes);
  return j.dump(1) + "\n";
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "class,threshold,ap\n";
  for (const ClassRow& row : report.classes) {
    for (std::size_t t = 0; t < report.thresholds.size(); ++t) {
      os << row.label << ',' << report.thresholds[t] << ',' << full(row.ap[t]) << '\n';
    }
  }
  return os.str();
}

std::string analysis_to_csv(const std::vector<AnalysisRow>& rows) {
  std::ostringstream os;
  os << "class,group,mode,mean_cosine,frame_count\n";
  for (const AnalysisRow& r : rows) {
    os << r.class_label << ',' << to_string(r.group) << ',' << to_string(r.mode) << ','
       << full(r.mean_cosine) << ',' << r.frame_count << '\n';
  }
  return os.str();
}

std::string trace_to_json(const ScoreTrace& t) {
  json j;
  j["video_id"] = t.video_id;
  j["class_id"] = t.class_id;
  j["base_scores"] = doubles(t.base_scores);
  j["refined_scores"] = doubles(t.refined_scores);
  j["positives"] = t.labels.positives;
  j["negatives"] = t.labels.negatives;
  j["step_loss"] = doubles(t.step_loss);
  j["step_margin"] = doubles(t.step_margin);
  j["final_scores"] = doubles(t.final_scores);
  j["final_refined"] = doubles(t.final_refined);
  j["final_margin"] = t.final_margin;
  return j.dump() + "\n";
}

}  // namespace zstal
