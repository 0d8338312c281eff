#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mqir/model/config.hpp"
#include "mqir/numerics/array.hpp"
#include "mqir/numerics/graph.hpp"

namespace mqir::data {
struct Batch;
}

namespace mqir::model {

inline constexpr double kInitStddev = 0.02;

/// Parameters of the two-tower matcher, keyed by stable dotted names.
template <typename T>
class Matcher {
 public:
  Matcher() = default;
  /// Fresh parameters: weights and embedding tables drawn from a zero-mean
  /// normal (see InitScheme), biases 0, layer norm gains 1. Each tensor draws
  /// from its own stream seeded by (seed, name), so adding a tensor never
  /// changes the others.
  Matcher(ModelConfig config, std::uint64_t seed);

  /// Adopts existing tensors after checking them against layout(config).
  static Matcher from_parameters(ModelConfig config, std::map<std::string, num::Array<T>> params);

  const ModelConfig& config() const { return config_; }
  std::map<std::string, num::Array<T>>& parameters() { return params_; }
  const std::map<std::string, num::Array<T>>& parameters() const { return params_; }
  num::Array<T>& at(const std::string& name);
  const num::Array<T>& at(const std::string& name) const;
  bool has(const std::string& name) const { return params_.contains(name); }
  std::size_t parameter_count() const;

  void zero_grad();

  /// Shapes of every tensor a model with `config` carries.
  static std::map<std::string, num::Shape> layout(const ModelConfig& config);
  /// Fresh value of one tensor as the seeded initialiser would produce it.
  static num::Array<T> initial_value(const std::string& name, const num::Shape& shape,
                                     std::uint64_t seed, InitScheme scheme);

 private:
  ModelConfig config_;
  std::map<std::string, num::Array<T>> params_;
};

/// Image side of a batch: global vectors, N regions with geometry and validity.
struct ImageInput {
  std::size_t batch = 0;
  std::size_t regions = 0;
  std::span<const float> global;      // batch * D_g
  std::span<const float> features;    // batch * regions * D_r
  std::span<const float> geometry;    // batch * regions * 5
  std::span<const std::uint8_t> mask; // batch * regions
};

/// Query side: token ids and trace boxes over the same positions.
struct QueryInput {
  std::size_t batch = 0;
  std::size_t length = 0;                   // at most K
  std::span<const std::int32_t> tokens;     // batch * length
  std::span<const std::uint8_t> token_mask; // batch * length
  std::span<const float> boxes;             // batch * length * 5; may be empty for text-only
  std::span<const std::uint8_t> box_mask;   // batch * length; may be empty for text-only
};

ImageInput image_input(const data::Batch& batch);
QueryInput query_input(const data::Batch& batch);

/// IRE: one d_model vector per entry, global entry first -> [B, 1 + N, d].
template <typename T>
num::Tensor<T> embed_image_regions(num::Graph<T>& g, const Matcher<T>& m, const ImageInput& in);

/// TTE: [B, length, d].
template <typename T>
num::Tensor<T> embed_text_tokens(num::Graph<T>& g, const Matcher<T>& m, const QueryInput& in);

/// TBE: [B, length, d].
template <typename T>
num::Tensor<T> embed_trace_boxes(num::Graph<T>& g, const Matcher<T>& m, const QueryInput& in);

/// Image tower -> [B, E].
template <typename T>
num::Tensor<T> encode_image(num::Graph<T>& g, const Matcher<T>& m, const ImageInput& in);

/// Query tower -> [B, E]. The sequence is the token embeddings followed by
/// the box embeddings, or either one alone depending on the query mode.
template <typename T>
num::Tensor<T> encode_query(num::Graph<T>& g, const Matcher<T>& m, const QueryInput& in);

/// scores[i, j] = query_i · image_j.
template <typename T>
num::Tensor<T> score_matrix(num::Tensor<T> queries, num::Tensor<T> images);

/// ½ (row term + column term), each the negated mean log-softmax of the
/// diagonal. Requires a square matrix.
template <typename T>
num::Tensor<T> contrastive_loss(num::Tensor<T> scores);

/// Plain inner product; throws on a dimension mismatch.
double similarity(std::span<const float> image, std::span<const float> query);

/// Inference-mode embeddings (dropout off), row-major [batch, E].
std::vector<float> image_embeddings(const Matcher<float>& m, const ImageInput& in);
std::vector<float> query_embeddings(const Matcher<float>& m, const QueryInput& in);

/// Same parameter values in another precision.
template <typename To, typename From>
Matcher<To> convert(const Matcher<From>& m);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "MQCK", version, config as key=value text, then named float32 tensors.
void save_checkpoint(const std::filesystem::path& path, const Matcher<float>& m);
Matcher<float> load_checkpoint(const std::filesystem::path& path);

/// Short stable identifier derived from the checkpoint bytes.
std::string checkpoint_id(const std::filesystem::path& path);

}  // namespace mqir::model
