#include "zstal/guidance.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <numeric>

#include "zstal/error.hpp"
#include "zstal/math.hpp"
#include "zstal/rng.hpp"

namespace zstal {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

struct Assignment {
  std::vector<std::size_t> labels;
  double inertia = 0.0;
};

Assignment assign(const Tensor& points, const Tensor& centroids) {
  Assignment out;
  out.labels.resize(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < centroids.rows(); ++k) {
      const double d = squared_distance(points.row(i), centroids.row(k));
      if (d < best) {
        best = d;
        best_k = k;
      }
    }
    out.labels[i] = best_k;
    out.inertia += best;
  }
  return out;
}

// Means of the assigned points; empty clusters keep their previous centroid.
Tensor update_centroids(const Tensor& points, const std::vector<std::size_t>& labels,
                        const Tensor& previous) {
  Tensor sums = Tensor::matrix(previous.rows(), previous.cols());
  std::vector<std::size_t> counts(previous.rows(), 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    auto dst = sums.row(labels[i]);
    auto src = points.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    ++counts[labels[i]];
  }
  for (std::size_t k = 0; k < previous.rows(); ++k) {
    auto row = sums.row(k);
    if (counts[k] == 0) {
      std::copy(previous.row(k).begin(), previous.row(k).end(), row.begin());
    } else {
      for (double& v : row) v /= static_cast<double>(counts[k]);
    }
  }
  return sums;
}

void pick_representatives(const Tensor& points, std::span<const std::string> ids,
                          TripletSummary& summary) {
  const std::size_t k = summary.centroids.rows();
  std::vector<std::size_t> best(k, std::numeric_limits<std::size_t>::max());
  std::vector<double> best_d(k, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const std::size_t c = summary.assignment[i];
    const double d = squared_distance(points.row(i), summary.centroids.row(c));
    if (d < best_d[c] || (d == best_d[c] && ids[i] < ids[best[c]])) {
      best_d[c] = d;
      best[c] = i;
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (best[c] == std::numeric_limits<std::size_t>::max()) continue;
    summary.representative_rows.push_back(best[c]);
    summary.representative_ids.push_back(ids[best[c]]);
  }
}

std::string lower(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

bool is_word_char(char ch) {
  const auto u = static_cast<unsigned char>(ch);
  return std::isalnum(u) || ch == '_' || u >= 0x80;
}

bool contains_phrase(const std::string& haystack, const std::string& phrase) {
  if (phrase.empty()) return false;
  for (std::size_t pos = haystack.find(phrase); pos != std::string::npos;
       pos = haystack.find(phrase, pos + 1)) {
    const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
    const std::size_t end = pos + phrase.size();
    const bool right_ok = end == haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) return true;
  }
  return false;
}

}  // namespace

std::vector<std::size_t> kmeanspp_seed(const Tensor& points, std::size_t k,
                                       std::uint64_t seed) {
  const std::size_t m = points.rows();
  if (k == 0 || m == 0) return {};
  k = std::min(k, m);
  Rng rng(seed);
  std::vector<std::size_t> chosen{static_cast<std::size_t>(rng.index(m))};
  std::vector<bool> taken(m, false);
  taken[chosen[0]] = true;
  std::vector<double> d2(m);
  for (std::size_t i = 0; i < m; ++i) d2[i] = squared_distance(points.row(i), points.row(chosen[0]));

  while (chosen.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t next = m;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && acc > target) {
          next = i;
          break;
        }
      }
      if (next == m) {
        // Rounding left target beyond the accumulated sum; take the last
        // point with positive weight.
        for (std::size_t i = m; i-- > 0;) {
          if (d2[i] > 0.0) {
            next = i;
            break;
          }
        }
      }
    } else {
      // All remaining points coincide with a chosen centroid.
      for (std::size_t i = 0; i < m; ++i) {
        if (!taken[i]) {
          next = i;
          break;
        }
      }
    }
    chosen.push_back(next);
    taken[next] = true;
    for (std::size_t i = 0; i < m; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), points.row(next)));
    }
  }
  return chosen;
}

TripletSummary lloyd(const Tensor& points, Tensor initial_centroids,
                     std::span<const std::string> ids, const LloydOptions& options) {
  if (ids.size() != points.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "lloyd: one id per point required");
  }
  if (initial_centroids.rows() == 0 || initial_centroids.cols() != points.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "lloyd: centroid shape mismatch");
  }
  TripletSummary summary;
  summary.centroids = std::move(initial_centroids);
  Assignment current = assign(points, summary.centroids);
  summary.inertia_history.push_back(current.inertia);

  for (int it = 1; it < options.max_iterations; ++it) {
    Tensor next_centroids = update_centroids(points, current.labels, summary.centroids);
    Assignment next = assign(points, next_centroids);
    const double previous = summary.inertia_history.back();
    // Lloyd never increases inertia in exact arithmetic; a rounding-level
    // increase means we are already at the fixed point.
    if (next.inertia > previous) break;
    summary.centroids = std::move(next_centroids);
    current = std::move(next);
    summary.inertia_history.push_back(current.inertia);
    if (previous - current.inertia < options.tolerance) break;
  }
  summary.assignment = std::move(current.labels);
  pick_representatives(points, ids, summary);
  return summary;
}

TripletSummary cluster_triplets(const Tensor& embeddings, std::span<const std::string> ids,
                                int s_clusters, std::uint64_t seed) {
  if (s_clusters <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "cluster_triplets: S must be positive");
  }
  const std::size_t m = embeddings.rows();
  if (m == 0) throw Error(ErrorCode::kInvalidArgument, "cluster_triplets: no triplets");
  if (ids.size() != m) {
    throw Error(ErrorCode::kDimensionMismatch, "cluster_triplets: one id per embedding required");
  }

  if (m <= static_cast<std::size_t>(s_clusters)) {
    TripletSummary summary;
    summary.centroids = embeddings;
    summary.assignment.resize(m);
    std::iota(summary.assignment.begin(), summary.assignment.end(), std::size_t{0});
    summary.inertia_history.push_back(0.0);
    for (std::size_t i = 0; i < m; ++i) {
      summary.representative_rows.push_back(i);
      summary.representative_ids.push_back(ids[i]);
    }
    return summary;
  }

  const auto init = kmeanspp_seed(embeddings, static_cast<std::size_t>(s_clusters), seed);
  Tensor centroids = Tensor::matrix(init.size(), embeddings.cols());
  for (std::size_t k = 0; k < init.size(); ++k) {
    std::copy(embeddings.row(init[k]).begin(), embeddings.row(init[k]).end(),
              centroids.row(k).begin());
  }
  return lloyd(embeddings, std::move(centroids), ids);
}

GuidanceSplit split_affine_distractor(const TripletSummary& summary,
                                      const Tensor& representative_embeddings,
                                      const Tensor& class_sentence_embedding,
                                      int k_triplets) {
  const std::size_t s = summary.representative_ids.size();
  if (representative_embeddings.rows() != s || s == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "split_affine_distractor: one sentence embedding per representative required");
  }
  if (k_triplets < 1 || static_cast<std::size_t>(k_triplets) > s / 2) {
    throw Error(ErrorCode::kInvalidArgument,
                "split_affine_distractor: k_triplets must lie in [1, floor(S/2)], S = " +
                    std::to_string(s));
  }
  Tensor cls = Tensor::matrix(1, class_sentence_embedding.size());
  std::copy(class_sentence_embedding.values().begin(), class_sentence_embedding.values().end(),
            cls.values().begin());
  const Tensor cos = cosine_matrix(representative_embeddings, cls);

  GuidanceSplit split;
  split.similarity_to_class.resize(s);
  for (std::size_t i = 0; i < s; ++i) split.similarity_to_class[i] = cos.at(i, 0);

  // One total order (cosine desc, id asc); affine takes the head and
  // distractor the tail, so the two sets are disjoint even under ties.
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (split.similarity_to_class[a] != split.similarity_to_class[b]) {
      return split.similarity_to_class[a] > split.similarity_to_class[b];
    }
    return summary.representative_ids[a] < summary.representative_ids[b];
  });
  const auto k = static_cast<std::size_t>(k_triplets);
  for (std::size_t i = 0; i < k; ++i) {
    split.affine_ids.push_back(summary.representative_ids[order[i]]);
  }
  for (std::size_t i = s - k; i < s; ++i) {
    split.distractor_ids.push_back(summary.representative_ids[order[i]]);
  }
  return split;
}

AmbiguityReport ambiguity_scan(std::span<const std::string> captions,
                               std::span<const std::string> lexicon) {
  if (lexicon.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "ambiguity_scan: empty lexicon");
  }
  std::vector<std::string> terms;
  for (const std::string& t : lexicon) terms.push_back(lower(t));

  AmbiguityReport report;
  report.total_captions = captions.size();
  report.matched_terms.resize(captions.size());
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const std::string text = lower(captions[i]);
    for (std::size_t t = 0; t < terms.size(); ++t) {
      if (contains_phrase(text, terms[t])) report.matched_terms[i].push_back(lexicon[t]);
    }
    if (!report.matched_terms[i].empty()) ++report.flagged_captions;
  }
  if (report.total_captions > 0) {
    report.fraction = static_cast<double>(report.flagged_captions) /
                      static_cast<double>(report.total_captions);
  }
  return report;
}

const std::vector<std::string>& default_ambiguity_lexicon() {
  static const std::vector<std::string> terms = {"likely", "probably", "preparing to"};
  return terms;
}

std::vector<std::string> load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open lexicon " + path.string());
  std::vector<std::string> terms;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    terms.push_back(line.substr(b, e - b + 1));
  }
  return terms;
}

}  // namespace zstal
