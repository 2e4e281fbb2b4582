#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "zstal/tensor.hpp"

namespace zstal {

// Deduplicated scene triplets of one video.
struct TripletSummary {
  // Ids of the cluster representatives (nearest member to each non-empty
  // centroid). At most S entries; fewer when clusters end up empty.
  std::vector<std::string> representative_ids;
  // Row index into the clustered embeddings for each representative.
  std::vector<std::size_t> representative_rows;
  Tensor centroids;                     // S x d_s
  std::vector<std::size_t> assignment;  // per input row -> cluster index
  std::vector<double> inertia_history;  // one entry per assignment pass

  double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

struct LloydOptions {
  int max_iterations = 100;
  double tolerance = 1e-9;
};

// Indices of the initial centroids chosen by k-means++ (D^2 sampling).
std::vector<std::size_t> kmeanspp_seed(const Tensor& points, std::size_t k,
                                       std::uint64_t seed);

// Lloyd iterations from explicit initial centroids. `ids` label the rows and
// break representative ties (lexicographically lowest wins).
TripletSummary lloyd(const Tensor& points, Tensor initial_centroids,
                     std::span<const std::string> ids, const LloydOptions& options = {});

// Full clustering: k-means++ seeding, then Lloyd. When m <= S every row is
// its own cluster. Throws kInvalidArgument when S <= 0 or m == 0.
TripletSummary cluster_triplets(const Tensor& embeddings, std::span<const std::string> ids,
                                int s_clusters, std::uint64_t seed);

struct GuidanceSplit {
  std::vector<std::string> affine_ids;
  std::vector<std::string> distractor_ids;
  // Cosine to the class embedding for every representative, aligned with
  // TripletSummary::representative_ids.
  std::vector<double> similarity_to_class;
};

// Top-k / bottom-k representatives by cosine to the class sentence embedding;
// ties broken by lowest id. `representative_embeddings` rows align with
// summary.representative_ids. Throws if k > floor(S/2).
GuidanceSplit split_affine_distractor(const TripletSummary& summary,
                                      const Tensor& representative_embeddings,
                                      const Tensor& class_sentence_embedding,
                                      int k_triplets);

struct AmbiguityReport {
  std::size_t total_captions = 0;
  std::size_t flagged_captions = 0;
  double fraction = 0.0;
  std::vector<std::vector<std::string>> matched_terms;  // per caption
};

// Case-insensitive whole-phrase matching on word boundaries.
AmbiguityReport ambiguity_scan(std::span<const std::string> captions,
                               std::span<const std::string> lexicon);

// Terms shipped by default.
const std::vector<std::string>& default_ambiguity_lexicon();
// One term per line, '#' comments, blank lines ignored.
std::vector<std::string> load_lexicon(const std::filesystem::path& path);

}  // namespace zstal
