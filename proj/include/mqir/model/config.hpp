#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace mqir::model {

/// What the query tower reads.
enum class QueryMode {
  text_only,   // token embeddings alone
  text_trace,  // token embeddings followed by trace-box embeddings
  trace_only,  // trace-box embeddings alone; tokens are ignored
};

std::string to_string(QueryMode mode);
QueryMode parse_query_mode(const std::string& text);

/// Standard deviation of the normal initialiser for weights and tables.
enum class InitScheme {
  scaled,  // 1/sqrt(fan_in) for weights, 1/sqrt(width) for embedding tables
  fixed,   // 0.02 everywhere
};

std::string to_string(InitScheme scheme);
InitScheme parse_init_scheme(const std::string& text);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 128;
  std::size_t image_layers = 2;     // L
  std::size_t query_layers = 2;     // M
  std::size_t heads = 4;
  std::size_t filter = 512;         // encoder feed-forward width
  std::size_t embed_hidden = 128;   // hidden width of the embedder MLPs
  std::size_t pooler_hidden = 512;
  std::size_t embedding_dim = 256;  // E
  double dropout = 0.1;
  std::size_t global_dim = 64;      // D_g
  std::size_t region_dim = 64;      // D_r
  std::size_t max_tokens = 64;      // K
  std::size_t regions = 16;         // N
  QueryMode query_mode = QueryMode::text_trace;
  bool text_position = true;        // 1D position embedding on text tokens
  bool image_location = true;       // 2D location embedding on image regions
  InitScheme init = InitScheme::scaled;

  bool uses_text() const { return query_mode != QueryMode::trace_only; }
  bool uses_traces() const { return query_mode != QueryMode::text_only; }

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// Flat key/value form used inside checkpoints.
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& values);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace mqir::model
