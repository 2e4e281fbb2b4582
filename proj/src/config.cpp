#include "zstal/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "zstal/error.hpp"

namespace zstal {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(ErrorCode::kInvalidArgument,
              "config: invalid value '" + value + "' for key '" + key + "'");
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size() || !std::isfinite(v)) bad_value(key, value);
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, value);
  }
}

long long to_int(const std::string& key, const std::string& value) {
  long long v = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) bad_value(key, value);
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "k_actions",       "alpha",           "gamma",
      "lambda_tmp",      "steps_T",         "learning_rate",
      "weight_decay",    "s_clusters",      "k_triplets",
      "percentile_p",    "nms_tiou",        "top1_confidence",
      "prompt_template", "seed",            "class_temperature",
      "loss",            "smooth_target",   "reinit",
      "recompute_pseudo_labels", "use_descriptors", "use_triplets"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "k_actions") {
    k_actions = static_cast<int>(to_int(key, value));
  } else if (key == "alpha") {
    alpha = to_double(key, value);
  } else if (key == "gamma") {
    gamma = to_double(key, value);
  } else if (key == "lambda_tmp") {
    lambda_tmp = to_double(key, value);
  } else if (key == "steps_T") {
    steps_T = static_cast<int>(to_int(key, value));
  } else if (key == "learning_rate") {
    learning_rate = to_double(key, value);
  } else if (key == "weight_decay") {
    weight_decay = to_double(key, value);
  } else if (key == "s_clusters") {
    s_clusters = static_cast<int>(to_int(key, value));
  } else if (key == "k_triplets") {
    k_triplets = static_cast<int>(to_int(key, value));
  } else if (key == "percentile_p") {
    percentile_p = to_double(key, value);
  } else if (key == "nms_tiou") {
    nms_tiou = to_double(key, value);
  } else if (key == "top1_confidence") {
    top1_confidence = to_double(key, value);
  } else if (key == "prompt_template") {
    prompt_template = value;
  } else if (key == "seed") {
    const long long s = to_int(key, value);
    if (s < 0) bad_value(key, value);
    seed = static_cast<std::uint64_t>(s);
  } else if (key == "class_temperature") {
    class_temperature = to_double(key, value);
  } else if (key == "loss") {
    if (value == "margin") {
      loss = LossKind::kMargin;
    } else if (value == "byol") {
      loss = LossKind::kByol;
    } else {
      bad_value(key, value);
    }
  } else if (key == "smooth_target") {
    if (value == "refined") {
      smooth_target = SmoothTarget::kRefined;
    } else if (value == "base") {
      smooth_target = SmoothTarget::kBase;
    } else {
      bad_value(key, value);
    }
  } else if (key == "reinit") {
    if (value == "per_class") {
      reinit = ReinitPolicy::kPerClass;
    } else if (value == "per_video") {
      reinit = ReinitPolicy::kPerVideo;
    } else {
      bad_value(key, value);
    }
  } else if (key == "recompute_pseudo_labels") {
    recompute_pseudo_labels = to_bool(key, value);
  } else if (key == "use_descriptors") {
    use_descriptors = to_bool(key, value);
  } else if (key == "use_triplets") {
    use_triplets = to_bool(key, value);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "config: unknown key '" + key + "'");
  }
}

std::vector<std::string> RunConfig::check() const {
  std::vector<std::string> out;
  if (k_actions < 1) out.emplace_back("k_actions must be >= 1");
  if (!(percentile_p > 0.0 && percentile_p < 50.0)) {
    out.emplace_back("percentile_p must lie in (0, 50)");
  }
  if (alpha < 0.0) out.emplace_back("alpha must be >= 0");
  if (!(gamma > 0.0)) out.emplace_back("gamma must be > 0");
  if (lambda_tmp < 0.0) out.emplace_back("lambda_tmp must be >= 0");
  if (steps_T < 0) out.emplace_back("steps_T must be >= 0");
  if (!(learning_rate >= 0.0)) out.emplace_back("learning_rate must be >= 0");
  if (weight_decay < 0.0) out.emplace_back("weight_decay must be >= 0");
  if (s_clusters < 1) out.emplace_back("s_clusters must be >= 1");
  if (k_triplets < 1) out.emplace_back("k_triplets must be >= 1");
  if (k_triplets > s_clusters) out.emplace_back("k_triplets must be <= s_clusters");
  if (!(nms_tiou >= 0.0 && nms_tiou <= 1.0)) out.emplace_back("nms_tiou must lie in [0, 1]");
  if (!(class_temperature > 0.0)) out.emplace_back("class_temperature must be > 0");
  return out;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "k_actions = " << k_actions << "\n"
     << "alpha = " << fmt_double(alpha) << "\n"
     << "gamma = " << fmt_double(gamma) << "\n"
     << "lambda_tmp = " << fmt_double(lambda_tmp) << "\n"
     << "steps_T = " << steps_T << "\n"
     << "learning_rate = " << fmt_double(learning_rate) << "\n"
     << "weight_decay = " << fmt_double(weight_decay) << "\n"
     << "s_clusters = " << s_clusters << "\n"
     << "k_triplets = " << k_triplets << "\n"
     << "percentile_p = " << fmt_double(percentile_p) << "\n"
     << "nms_tiou = " << fmt_double(nms_tiou) << "\n"
     << "top1_confidence = " << fmt_double(top1_confidence) << "\n"
     << "prompt_template = " << prompt_template << "\n"
     << "seed = " << seed << "\n"
     << "class_temperature = " << fmt_double(class_temperature) << "\n"
     << "loss = " << (loss == LossKind::kMargin ? "margin" : "byol") << "\n"
     << "smooth_target = " << (smooth_target == SmoothTarget::kRefined ? "refined" : "base")
     << "\n"
     << "reinit = " << (reinit == ReinitPolicy::kPerClass ? "per_class" : "per_video") << "\n"
     << "recompute_pseudo_labels = " << (recompute_pseudo_labels ? "true" : "false") << "\n"
     << "use_descriptors = " << (use_descriptors ? "true" : "false") << "\n"
     << "use_triplets = " << (use_triplets ? "true" : "false") << "\n";
  return os.str();
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument,
                  "config line " + std::to_string(lineno) + ": expected key = value");
    }
    base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "override '" + o + "' is not key=value");
    }
    cfg.set(trim(o.substr(0, eq)), o.substr(eq + 1));
  }
}

}  // namespace zstal
