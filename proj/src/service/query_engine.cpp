#include "mqir/service/query_engine.hpp"

#include <cctype>
#include <chrono>
#include <cmath>
#include <json.hpp>

#include "mqir/data/batching.hpp"
#include "mqir/retrieval/evaluate.hpp"
#include "mqir/service/schema.hpp"

namespace mqir::service {

using json = nlohmann::json;

QueryRequest parse_query_request(std::string_view body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw RequestError(400, "", std::string("malformed JSON body: ") + e.what());
  }
  if (!doc.is_object()) {
    throw RequestError(400, "", "request body must be a JSON object");
  }
  if (!doc.contains("caption")) {
    throw RequestError(400, "/caption", "missing required field 'caption'");
  }
  if (const auto v = check_against_schema("QueryRequest", body)) {
    throw RequestError(400, v->pointer, v->message);
  }

  QueryRequest r;
  r.caption = doc["caption"].get<std::string>();
  if (data::normalized_words(r.caption).empty()) {
    throw RequestError(422, "/caption", "caption has no words");
  }
  if (doc.contains("timed_words")) {
    std::vector<data::TimedWord> words;
    for (const auto& w : doc["timed_words"]) {
      words.push_back({w[0].get<std::string>(), w[1].get<double>(), w[2].get<double>()});
    }
    r.timed_words = std::move(words);
  }
  if (doc.contains("trace")) {
    std::vector<geometry::TracePoint> points;
    for (const auto& p : doc["trace"]) {
      points.push_back(geometry::clip_point({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()}));
    }
    r.trace = std::move(points);
  }
  if (doc.contains("k")) {
    r.k = doc["k"].get<std::size_t>();
  }
  if (doc.contains("t_p")) {
    r.t_p = doc["t_p"].get<double>();
  }
  if (doc.contains("s_p")) {
    r.s_p = doc["s_p"].get<double>();
  }
  if (doc.contains("target_id")) {
    r.target_id = doc["target_id"].get<std::string>();
  }

  // Consistency checks the schema cannot express.
  data::NarrativeRecord probe;
  probe.image_id = "query";
  probe.caption = r.caption;
  if (r.timed_words) {
    probe.timed_words = *r.timed_words;
    try {
      data::validate_record(probe);
    } catch (const data::FormatError& e) {
      throw RequestError(400, "/timed_words", e.what());
    }
  }
  if (r.trace) {
    try {
      geometry::validate_trace({*r.trace});
    } catch (const geometry::GeometryError& e) {
      throw RequestError(400, "/trace", std::string("trace: ") + e.what());
    }
  }
  return r;
}

std::string request_json(const QueryRequest& r) {
  json doc;
  doc["caption"] = r.caption;
  if (r.timed_words) {
    json words = json::array();
    for (const auto& w : *r.timed_words) words.push_back({w.word, w.t_start, w.t_end});
    doc["timed_words"] = words;
  }
  if (r.trace) {
    json points = json::array();
    for (const auto& p : *r.trace) points.push_back({p.x, p.y, p.t});
    doc["trace"] = points;
  }
  if (r.k) doc["k"] = *r.k;
  if (r.t_p) doc["t_p"] = *r.t_p;
  if (r.s_p) doc["s_p"] = *r.s_p;
  if (r.target_id) doc["target_id"] = *r.target_id;
  return doc.dump();
}

std::string thumbnail_path(const std::string& image_id) { return "/v1/images/" + image_id; }

std::string response_json(const QueryResponse& r) {
  json results = json::array();
  for (const auto& x : r.results) {
    results.push_back({{"image_id", x.image_id}, {"score", x.score}, {"thumbnail", thumbnail_path(x.image_id)}});
  }
  json doc{{"results", results}, {"trace_used", r.trace_used}, {"model_id", r.model_id},
           {"timing_ms", r.timing_ms}};
  if (r.rank_of_target) {
    doc["rank_of_target"] = *r.rank_of_target;
  }
  return doc.dump();
}

std::string boxes_json(const BoxesReport& r) {
  json words = json::array();
  for (const auto& w : r.timed_words) words.push_back({w.word, w.t_start, w.t_end});
  json points = json::array();
  for (const auto& p : r.trace) points.push_back({p.x, p.y, p.t});
  json tokens = json::array();
  for (const auto& t : r.tokens) {
    tokens.push_back({{"token", t.token},
                      {"t_start", t.t_start},
                      {"t_end", t.t_end},
                      {"box", {t.box.xmin, t.box.ymin, t.box.xmax, t.box.ymax, t.box.area}}});
  }
  return json{{"timed_words", words}, {"trace", points}, {"trace_used", r.trace_used}, {"tokens", tokens}}
      .dump();
}

QueryEngine::QueryEngine(model::Matcher<float> model, data::Vocabulary vocab,
                         retrieval::RetrievalIndex index, std::string model_id, EngineOptions options)
    : model_(std::move(model)), vocab_(std::move(vocab)), index_(std::move(index)),
      model_id_(std::move(model_id)), options_(options) {
  if (index_.empty()) {
    throw std::invalid_argument("query engine: the index is empty");
  }
  if (index_.dim() != model_.config().embedding_dim) {
    throw std::invalid_argument("query engine: index dimension " + std::to_string(index_.dim()) +
                                " does not match the model's " +
                                std::to_string(model_.config().embedding_dim));
  }
  if (model_.config().uses_text() && vocab_.size() != model_.config().vocab_size) {
    throw std::invalid_argument("query engine: vocabulary has " + std::to_string(vocab_.size()) +
                                " tokens, the model expects " + std::to_string(model_.config().vocab_size));
  }
  if (options_.default_k == 0 || !(options_.seconds_per_word > 0.0)) {
    throw std::invalid_argument("query engine: default k and seconds per word must be positive");
  }
}

geometry::Padding QueryEngine::padding_for(const QueryRequest& request) const {
  return {request.t_p.value_or(options_.padding.temporal), request.s_p.value_or(options_.padding.spatial)};
}

data::NarrativeRecord QueryEngine::to_record(const QueryRequest& request) const {
  data::NarrativeRecord r;
  r.image_id = "query";
  r.caption = request.caption;
  if (request.timed_words) {
    r.timed_words = *request.timed_words;
  } else {
    // Whitespace-separated words back to back, seconds_per_word each.
    std::size_t i = 0;
    std::string word;
    auto flush = [&] {
      if (!word.empty()) {
        const double t0 = static_cast<double>(i) * options_.seconds_per_word;
        r.timed_words.push_back({word, t0, t0 + options_.seconds_per_word});
        ++i;
        word.clear();
      }
    };
    for (char c : request.caption) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        flush();
      } else {
        word += c;
      }
    }
    flush();
  }
  if (request.trace) {
    r.trace.points = *request.trace;
  }
  return r;
}

BoxesReport QueryEngine::boxes(const QueryRequest& request) const {
  const data::NarrativeRecord record = to_record(request);
  const auto tokens = data::tokenize_aligned(record, vocab_);
  const bool use_trace = request.trace.has_value() && !request.trace->empty();
  std::vector<geometry::TraceBox> boxes;
  if (use_trace) {
    boxes = geometry::boxes_for_query(tokens, record.trace, padding_for(request));
  } else {
    boxes.assign(tokens.size(), geometry::TraceBox::whole_canvas());
  }
  BoxesReport out;
  out.timed_words = record.timed_words;
  out.trace = record.trace.points;
  out.trace_used = use_trace;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.tokens.push_back({vocab_.token(tokens[i].token_id), tokens[i].t_start, tokens[i].t_end, boxes[i]});
  }
  return out;
}

QueryResponse QueryEngine::handle(const QueryRequest& request) const {
  const auto start = std::chrono::steady_clock::now();
  const data::NarrativeRecord record = to_record(request);
  const bool use_trace = request.trace.has_value() && !request.trace->empty();
  const data::QueryExample q = data::prepare_query(record, vocab_, model_.config().max_tokens,
                                                   padding_for(request), use_trace);
  const std::vector<float> e = retrieval::encode_queries(model_, {q});
  if (request.target_id && !index_.index_of(*request.target_id)) {
    throw RequestError(400, "/target_id", "target image '" + *request.target_id + "' is not in the index");
  }
  const auto ranked = retrieval::rank(index_, e, request.k.value_or(options_.default_k), "query",
                                      request.target_id);
  QueryResponse r;
  r.results = ranked.ranking;
  r.trace_used = use_trace;
  r.model_id = model_id_;
  if (request.target_id) {
    r.rank_of_target = ranked.rank_of_target;
  }
  r.timing_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::string meta_json(const QueryEngine& engine, const ConfigSections& config) {
  const auto& provenance = engine.index().provenance();
  const auto& o = engine.options();
  json doc{{"model_id", engine.model_id()},
           {"index_size", engine.index().size()},
           {"index_provenance", {{"checkpoint", provenance.checkpoint}, {"features", provenance.features}}},
           {"model", engine.model().config().to_map()},
           {"config", config},
           {"defaults",
            {{"k", o.default_k},
             {"t_p", o.padding.temporal},
             {"s_p", o.padding.spatial},
             {"seconds_per_word", o.seconds_per_word}}}};
  return doc.dump();
}

}  // namespace mqir::service
