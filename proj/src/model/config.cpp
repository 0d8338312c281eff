#include "mqir/model/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace mqir::model {

std::string to_string(QueryMode mode) {
  switch (mode) {
    case QueryMode::text_only:
      return "text-only";
    case QueryMode::text_trace:
      return "text-trace";
    case QueryMode::trace_only:
      return "trace-only";
  }
  return "?";
}

QueryMode parse_query_mode(const std::string& text) {
  if (text == "text-only") return QueryMode::text_only;
  if (text == "text-trace") return QueryMode::text_trace;
  if (text == "trace-only") return QueryMode::trace_only;
  throw ConfigError("query_mode: expected text-only, text-trace or trace-only, got '" + text + "'");
}

std::string to_string(InitScheme scheme) {
  return scheme == InitScheme::scaled ? "scaled" : "fixed";
}

InitScheme parse_init_scheme(const std::string& text) {
  if (text == "scaled") return InitScheme::scaled;
  if (text == "fixed") return InitScheme::fixed;
  throw ConfigError("init: expected scaled or fixed, got '" + text + "'");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) {
      throw ConfigError("model config: " + what);
    }
  };
  require(d_model > 0, "d_model must be positive");
  require(heads > 0 && d_model % heads == 0, "d_model must be divisible by heads");
  require(image_layers >= 1, "image_layers (L) must be at least 1");
  require(query_layers >= 1, "query_layers (M) must be at least 1");
  require(filter > 0 && embed_hidden > 0 && pooler_hidden > 0, "hidden widths must be positive");
  require(embedding_dim > 0, "embedding_dim must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(global_dim > 0 && region_dim > 0, "feature dimensions must be positive");
  require(max_tokens > 0, "max_tokens (K) must be positive");
  require(regions > 0, "regions (N) must be positive");
  require(!uses_text() || vocab_size > 2, "vocab_size must exceed the reserved ids");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  auto num = [](double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
  };
  return {
      {"vocab_size", std::to_string(vocab_size)},
      {"d_model", std::to_string(d_model)},
      {"image_layers", std::to_string(image_layers)},
      {"query_layers", std::to_string(query_layers)},
      {"heads", std::to_string(heads)},
      {"filter", std::to_string(filter)},
      {"embed_hidden", std::to_string(embed_hidden)},
      {"pooler_hidden", std::to_string(pooler_hidden)},
      {"embedding_dim", std::to_string(embedding_dim)},
      {"dropout", num(dropout)},
      {"global_dim", std::to_string(global_dim)},
      {"region_dim", std::to_string(region_dim)},
      {"max_tokens", std::to_string(max_tokens)},
      {"regions", std::to_string(regions)},
      {"query_mode", to_string(query_mode)},
      {"text_position", text_position ? "true" : "false"},
      {"image_location", image_location ? "true" : "false"},
      {"init", to_string(init)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& values) {
  ModelConfig c;
  const auto expected = c.to_map();
  for (const auto& [key, value] : values) {
    if (!expected.contains(key)) {
      throw ConfigError("model config: unknown key '" + key + "'");
    }
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = values.find(key);
    if (it == values.end()) {
      throw ConfigError("model config: missing key '" + key + "'");
    }
    return it->second;
  };
  auto size = [&](const std::string& key) {
    const std::string& v = get(key);
    std::size_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError("model config: " + key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
  };
  auto flag = [&](const std::string& key) {
    const std::string& v = get(key);
    if (v != "true" && v != "false") {
      throw ConfigError("model config: " + key + ": expected true or false");
    }
    return v == "true";
  };
  c.vocab_size = size("vocab_size");
  c.d_model = size("d_model");
  c.image_layers = size("image_layers");
  c.query_layers = size("query_layers");
  c.heads = size("heads");
  c.filter = size("filter");
  c.embed_hidden = size("embed_hidden");
  c.pooler_hidden = size("pooler_hidden");
  c.embedding_dim = size("embedding_dim");
  try {
    c.dropout = std::stod(get("dropout"));
  } catch (const std::logic_error&) {
    throw ConfigError("model config: dropout: expected a number");
  }
  c.global_dim = size("global_dim");
  c.region_dim = size("region_dim");
  c.max_tokens = size("max_tokens");
  c.regions = size("regions");
  c.query_mode = parse_query_mode(get("query_mode"));
  c.text_position = flag("text_position");
  c.image_location = flag("image_location");
  c.init = parse_init_scheme(get("init"));
  c.validate();
  return c;
}

}  // namespace mqir::model
