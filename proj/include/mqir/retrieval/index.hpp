#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mqir/data/features.hpp"
#include "mqir/model/matcher.hpp"

namespace mqir::retrieval {

/// Where an index came from.
struct Provenance {
  std::string checkpoint;  // checkpoint_id of the model
  std::string features;    // features_id of the feature file

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Frozen image embeddings, row i belonging to ids()[i].
class RetrievalIndex {
 public:
  RetrievalIndex() = default;
  RetrievalIndex(std::vector<std::string> ids, std::vector<float> embeddings, std::size_t dim,
                 Provenance provenance = {});

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  bool empty() const { return ids_.empty(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<float>& embeddings() const { return embeddings_; }
  std::span<const float> row(std::size_t i) const { return {embeddings_.data() + i * dim_, dim_}; }
  std::optional<std::size_t> index_of(const std::string& image_id) const;
  const Provenance& provenance() const { return provenance_; }

  friend bool operator==(const RetrievalIndex& a, const RetrievalIndex& b) {
    return a.ids_ == b.ids_ && a.embeddings_ == b.embeddings_ && a.dim_ == b.dim_ &&
           a.provenance_ == b.provenance_;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<float> embeddings_;
  std::size_t dim_ = 0;
  Provenance provenance_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

class IndexError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Image embeddings for the given records in order, dropout off.
std::vector<float> encode_images(const model::Matcher<float>& m,
                                 std::span<const data::FeatureRecord* const> records);

/// One row per feature record, in feature-file order.
RetrievalIndex build_index(const model::Matcher<float>& m, const data::FeatureSet& features,
                           Provenance provenance = {});
RetrievalIndex build_index(const std::filesystem::path& checkpoint,
                           const std::filesystem::path& features);

inline constexpr std::uint32_t kIndexVersion = 1;

/// "MQIX", version, dim, count, provenance strings, then (id, E floats) rows.
void save_index(const std::filesystem::path& path, const RetrievalIndex& index);
RetrievalIndex load_index(const std::filesystem::path& path);

struct ScoredImage {
  std::string image_id;
  double score = 0.0;

  friend bool operator==(const ScoredImage&, const ScoredImage&) = default;
};

struct RankingResult {
  std::string query_id;
  std::vector<ScoredImage> ranking;  // best first, at most k entries
  std::size_t rank_of_target = 0;    // 1-based over the whole index; 0 when no target
};

/// Dot product of the query with every row.
std::vector<double> score_all(const RetrievalIndex& index, std::span<const float> query);

/// Exact top-k by score, ties broken by ascending image id. k is clamped to
/// the index size. When `target` is given its full-index rank is recorded.
RankingResult rank(const RetrievalIndex& index, std::span<const float> query, std::size_t k,
                   std::string query_id = {}, const std::optional<std::string>& target = {});

}  // namespace mqir::retrieval
