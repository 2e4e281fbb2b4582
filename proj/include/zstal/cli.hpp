#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "zstal/config.hpp"
#include "zstal/localizer.hpp"

namespace zstal {

enum ExitCode : int { kExitOk = 0, kExitCheckFailure = 1, kExitInvalidInput = 2 };

// Entry point of the `zstal` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Bundle directories below `root`, sorted by name.
std::vector<std::filesystem::path> list_bundle_dirs(const std::filesystem::path& root);

struct VideoOutcome {
  std::string video_id;
  std::filesystem::path dir;
  LocalizeResult result;
  std::string error;    // empty on success
  bool invalid = false;  // load/validation failure rather than a numerical one
};

// Loads and localizes each bundle on `workers` threads. The returned vector
// follows the order of `dirs` whatever the degree of parallelism.
std::vector<VideoOutcome> localize_dirs(const std::vector<std::filesystem::path>& dirs,
                                        const RunConfig& cfg, unsigned workers);

}  // namespace zstal
