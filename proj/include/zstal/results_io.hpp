#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "zstal/localizer.hpp"
#include "zstal/metrics.hpp"

namespace zstal {

// Results file: JSON array of {video_id, t_start, t_end, label, score};
// times carry nine decimals.
std::string results_to_json(const std::vector<Proposal>& proposals);
std::vector<Proposal> results_from_json(const std::string& text);
std::vector<Proposal> read_results(const std::filesystem::path& path);

// Ground-truth file: JSON map video_id -> [{t_start, t_end, label}].
std::string ground_truth_to_json(const std::vector<Segment>& segments);
std::vector<Segment> ground_truth_from_json(const std::string& text);
std::vector<Segment> read_ground_truth(const std::filesystem::path& path);
std::vector<Segment> bundle_ground_truth(const VideoBundle& bundle);

// Rankings file: JSON map video_id -> [class ids, best first].
std::string rankings_to_json(const VideoRankings& rankings);
VideoRankings read_rankings(const std::filesystem::path& path);

std::string report_to_json(const EvalReport& report);
// One row per class x threshold: class,threshold,ap
std::string report_to_csv(const EvalReport& report);
// class,group,mode,mean_cosine,frame_count
std::string analysis_to_csv(const std::vector<AnalysisRow>& rows);
std::string trace_to_json(const ScoreTrace& trace);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace zstal
