#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqir/data/features.hpp"
#include "mqir/data/narrative.hpp"
#include "mqir/data/vocabulary.hpp"
#include "mqir/geometry/trace_geometry.hpp"

namespace mqir::data {

/// A query cut or padded to exactly K positions. Token i and box i describe
/// the same subword.
struct QueryExample {
  std::vector<std::int32_t> tokens;       // K
  std::vector<std::uint8_t> token_mask;   // K
  std::vector<float> boxes;               // K * 5
  std::vector<std::uint8_t> box_mask;     // K
  std::size_t length() const { return tokens.size(); }
};

/// Tokenises with aligned intervals, derives one box per subtoken and keeps
/// the first `max_tokens`. With `use_trace` unset every box is the whole
/// canvas.
QueryExample prepare_query(const NarrativeRecord& record, const Vocabulary& vocab,
                           std::size_t max_tokens, geometry::Padding padding,
                           bool use_trace = true);

/// Same, from tokens and boxes already computed.
QueryExample pad_query(const std::vector<geometry::TimedToken>& tokens,
                       const std::vector<geometry::TraceBox>& boxes, std::size_t max_tokens);

struct Batch {
  std::size_t size = 0;         // B
  std::size_t max_tokens = 0;   // K
  std::size_t regions = 0;      // N
  std::size_t global_dim = 0;
  std::size_t region_dim = 0;

  std::vector<std::int32_t> tokens;        // B * K
  std::vector<std::uint8_t> token_mask;    // B * K
  std::vector<float> boxes;                // B * K * 5
  std::vector<std::uint8_t> box_mask;      // B * K
  std::vector<float> global;               // B * D_g
  std::vector<float> region_features;      // B * N * D_r
  std::vector<float> geometry;             // B * N * 5
  std::vector<std::uint8_t> region_mask;   // B * N
  std::vector<std::string> image_ids;      // B
  std::vector<std::uint8_t> example_valid; // B; 0 marks padding dummies

  std::size_t valid_examples() const;
};

struct BatchOptions {
  std::size_t batch_size = 32;
  std::size_t max_tokens = 64;
  geometry::Padding padding{};
  bool use_trace = true;
  bool shuffle = true;
  bool permute_regions = true;
  /// Training drops the final partial batch; evaluation pads it with dummies.
  bool drop_last = true;
  std::uint64_t seed = 0;
};

/// Fixed-shape batches over a record list. Queries are prepared once; each
/// call to epoch() reshuffles deterministically from (seed, epoch).
class BatchStream {
 public:
  BatchStream(const std::vector<NarrativeRecord>& records, const FeatureSet& features,
              const Vocabulary& vocab, BatchOptions options);

  /// Records sharing a key are kept adjacent when shuffling, so that
  /// in-batch negatives include them. Must be one key per record.
  void set_group_keys(std::vector<std::size_t> keys);

  std::size_t size() const { return queries_.size(); }
  std::size_t batches_per_epoch() const;
  const BatchOptions& options() const { return options_; }

  std::vector<Batch> epoch(std::size_t epoch_index) const;

 private:
  std::vector<std::size_t> order_for(std::size_t epoch_index) const;
  Batch assemble(const std::vector<std::size_t>& members, std::size_t real,
                 std::size_t epoch_index) const;

  BatchOptions options_;
  std::vector<QueryExample> queries_;
  std::vector<FeatureRecord> features_;
  std::vector<std::size_t> group_keys_;
  std::uint32_t global_dim_ = 0;
  std::uint32_t region_dim_ = 0;
  std::uint32_t regions_ = 0;
};

}  // namespace mqir::data
