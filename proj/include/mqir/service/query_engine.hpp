#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mqir/data/narrative.hpp"
#include "mqir/data/vocabulary.hpp"
#include "mqir/model/matcher.hpp"
#include "mqir/retrieval/index.hpp"

namespace mqir::service {

/// A request the service refuses; `status` is the HTTP status to answer with.
class RequestError : public std::runtime_error {
 public:
  RequestError(int status, std::string field, const std::string& message)
      : std::runtime_error(message), status_(status), field_(std::move(field)) {}
  int status() const { return status_; }
  const std::string& field() const { return field_; }

 private:
  int status_;
  std::string field_;
};

struct QueryRequest {
  std::string caption;
  std::optional<std::vector<data::TimedWord>> timed_words;
  std::optional<std::vector<geometry::TracePoint>> trace;
  std::optional<std::size_t> k;
  std::optional<double> t_p;
  std::optional<double> s_p;
  std::optional<std::string> target_id;
};

/// Parses and validates a request body against the shipped schema. Throws
/// RequestError: 400 for malformed JSON, unknown or ill-typed fields and
/// inconsistent timings; 422 for a caption with no words.
QueryRequest parse_query_request(std::string_view body);
std::string request_json(const QueryRequest& r);

struct QueryResponse {
  std::vector<retrieval::ScoredImage> results;
  bool trace_used = false;
  std::string model_id;
  double timing_ms = 0.0;
  std::optional<std::size_t> rank_of_target;
};

std::string response_json(const QueryResponse& r);

/// Per-token boxes as the query tower sees them.
struct TokenBox {
  std::string token;
  double t_start = 0.0;
  double t_end = 0.0;
  geometry::TraceBox box;
};

struct BoxesReport {
  std::vector<data::TimedWord> timed_words;
  std::vector<geometry::TracePoint> trace;
  bool trace_used = false;
  std::vector<TokenBox> tokens;
};

std::string boxes_json(const BoxesReport& r);

struct EngineOptions {
  geometry::Padding padding{};
  std::size_t default_k = 10;
  /// Interval given to each word when a request has no timings.
  double seconds_per_word = 0.4;
};

/// Immutable query path shared by the CLI and the HTTP service.
class QueryEngine {
 public:
  QueryEngine(model::Matcher<float> model, data::Vocabulary vocab, retrieval::RetrievalIndex index,
              std::string model_id, EngineOptions options = {});

  /// Tokenise, derive boxes, encode, rank.
  QueryResponse handle(const QueryRequest& request) const;

  /// The narrative the request describes, with synthesised timings when
  /// none were sent.
  data::NarrativeRecord to_record(const QueryRequest& request) const;

  BoxesReport boxes(const QueryRequest& request) const;

  const model::Matcher<float>& model() const { return model_; }
  const data::Vocabulary& vocab() const { return vocab_; }
  const retrieval::RetrievalIndex& index() const { return index_; }
  const std::string& model_id() const { return model_id_; }
  const EngineOptions& options() const { return options_; }

 private:
  geometry::Padding padding_for(const QueryRequest& request) const;

  model::Matcher<float> model_;
  data::Vocabulary vocab_;
  retrieval::RetrievalIndex index_;
  std::string model_id_;
  EngineOptions options_;
};

/// Effective configuration by section, then key.
using ConfigSections = std::map<std::string, std::map<std::string, std::string>>;

/// Body of GET /v1/meta.
std::string meta_json(const QueryEngine& engine, const ConfigSections& config);

/// Where the PNG of an image is served.
std::string thumbnail_path(const std::string& image_id);

}  // namespace mqir::service
