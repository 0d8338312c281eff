#include "mqir/model/matcher.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mqir/data/batching.hpp"
#include "mqir/data/binary_io.hpp"
#include "mqir/geometry/trace_geometry.hpp"
#include "mqir/numerics/ops.hpp"
#include "mqir/numerics/random.hpp"

namespace mqir::model {

using num::Array;
using num::Graph;
using num::Shape;
using num::Tensor;

namespace {

std::string last_component(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(dot + 1);
}

void add_encoder_layout(std::map<std::string, Shape>& out, const std::string& tower,
                        std::size_t layers, const ModelConfig& c) {
  const std::size_t d = c.d_model;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string p = tower + ".layer" + std::to_string(i) + ".";
    for (const char* proj : {"q", "k", "v", "o"}) {
      out[p + "attn." + proj + ".w"] = {d, d};
      out[p + "attn." + proj + ".b"] = {d};
    }
    out[p + "ln1.gain"] = {d};
    out[p + "ln1.bias"] = {d};
    out[p + "ffn.w1"] = {d, c.filter};
    out[p + "ffn.b1"] = {c.filter};
    out[p + "ffn.w2"] = {c.filter, d};
    out[p + "ffn.b2"] = {d};
    out[p + "ln2.gain"] = {d};
    out[p + "ln2.bias"] = {d};
  }
  out[tower + ".pool.w1"] = {d, c.pooler_hidden};
  out[tower + ".pool.b1"] = {c.pooler_hidden};
  out[tower + ".pool.w2"] = {c.pooler_hidden, c.embedding_dim};
  out[tower + ".pool.b2"] = {c.embedding_dim};
}

}  // namespace

template <typename T>
std::map<std::string, Shape> Matcher<T>::layout(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t h = c.embed_hidden;
  const std::size_t loc = c.image_location ? d : 0;
  std::map<std::string, Shape> out;
  if (c.image_location) {
    out["ire.loc.w"] = {5, d};
    out["ire.loc.b"] = {d};
  }
  out["ire.global.w1"] = {c.global_dim + loc, h};
  out["ire.global.b1"] = {h};
  out["ire.region.w1"] = {c.region_dim + loc, h};
  out["ire.region.b1"] = {h};
  out["ire.w2"] = {h, d};
  out["ire.b2"] = {d};
  if (c.uses_text()) {
    out["tte.table"] = {c.vocab_size, d};
    out["tte.w1"] = {d, h};
    out["tte.b1"] = {h};
    out["tte.w2"] = {h, d};
    out["tte.b2"] = {d};
    if (c.text_position) {
      out["tte.pos"] = {c.max_tokens, d};
    }
  }
  if (c.uses_traces()) {
    out["tbe.proj.w"] = {5, d};
    out["tbe.proj.b"] = {d};
    out["tbe.w1"] = {d, h};
    out["tbe.b1"] = {h};
    out["tbe.w2"] = {h, d};
    out["tbe.b2"] = {d};
    out["tbe.pos"] = {c.max_tokens, d};
  }
  add_encoder_layout(out, "image", c.image_layers, c);
  add_encoder_layout(out, "query", c.query_layers, c);
  return out;
}

template <typename T>
Array<T> Matcher<T>::initial_value(const std::string& name, const Shape& shape, std::uint64_t seed,
                                   InitScheme scheme) {
  const std::string last = last_component(name);
  Array<T> a = Array<T>::zeros(shape, true);
  if (last == "gain") {
    std::fill(a.values.begin(), a.values.end(), T(1));
  } else if (last == "bias" || last == "b" || last == "b1" || last == "b2") {
    // zeros
  } else {
    double stddev = kInitStddev;
    if (scheme == InitScheme::scaled) {
      const bool table = last == "table" || last == "pos";
      stddev = 1.0 / std::sqrt(static_cast<double>(table ? shape.back() : shape.front()));
    }
    Rng rng(mix_seed(seed, hash_name(name)));
    for (T& v : a.values) {
      v = static_cast<T>(stddev * rng.normal());
    }
  }
  return a;
}

template <typename T>
Matcher<T>::Matcher(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  for (const auto& [name, shape] : layout(config_)) {
    params_.emplace(name, initial_value(name, shape, seed, config_.init));
  }
}

template <typename T>
Matcher<T> Matcher<T>::from_parameters(ModelConfig config, std::map<std::string, Array<T>> params) {
  config.validate();
  const auto expected = layout(config);
  for (const auto& [name, array] : params) {
    auto it = expected.find(name);
    if (it == expected.end()) {
      throw CheckpointError("unexpected tensor '" + name + "' for this model config");
    }
    if (it->second != array.shape) {
      throw CheckpointError("tensor '" + name + "' has shape " + num::shape_string(array.shape) +
                            ", config requires " + num::shape_string(it->second));
    }
  }
  for (const auto& [name, shape] : expected) {
    if (!params.contains(name)) {
      throw CheckpointError("missing tensor '" + name + "'");
    }
  }
  Matcher m;
  m.config_ = std::move(config);
  m.params_ = std::move(params);
  for (auto& [name, array] : m.params_) {
    array.requires_grad = true;
  }
  return m;
}

template <typename T>
Array<T>& Matcher<T>::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::out_of_range("model has no tensor '" + name + "'");
  }
  return it->second;
}

template <typename T>
const Array<T>& Matcher<T>::at(const std::string& name) const {
  return const_cast<Matcher*>(this)->at(name);
}

template <typename T>
std::size_t Matcher<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, a] : params_) {
    n += a.size();
  }
  return n;
}

template <typename T>
void Matcher<T>::zero_grad() {
  for (auto& [name, a] : params_) {
    a.zero_grad();
  }
}

ImageInput image_input(const data::Batch& b) {
  return {b.size, b.regions, b.global, b.region_features, b.geometry, b.region_mask};
}

QueryInput query_input(const data::Batch& b) {
  return {b.size, b.max_tokens, b.tokens, b.token_mask, b.boxes, b.box_mask};
}

namespace {

// Graph leaves only write into a parameter array during backpropagation,
// which inference callers never request.
template <typename T>
Tensor<T> param(Graph<T>& g, const Matcher<T>& m, const std::string& name) {
  return g.parameter(const_cast<Array<T>&>(m.at(name)));
}

template <typename T>
Tensor<T> floats(Graph<T>& g, Shape shape, std::span<const float> values) {
  return g.constant(std::move(shape), std::vector<T>(values.begin(), values.end()));
}

void require(bool ok, const std::string& what) {
  if (!ok) {
    throw std::invalid_argument(what);
  }
}

/// linear -> relu -> dropout -> linear
template <typename T>
Tensor<T> mlp(Graph<T>& g, const Matcher<T>& m, Tensor<T> x, const std::string& p) {
  const double rate = m.config().dropout;
  Tensor<T> h = num::relu(num::linear(x, param(g, m, p + "w1"), param(g, m, p + "b1")));
  h = num::dropout(h, rate);
  return num::linear(h, param(g, m, p + "w2"), param(g, m, p + "b2"));
}

template <typename T>
Tensor<T> attention(Graph<T>& g, const Matcher<T>& m, Tensor<T> x, std::span<const std::uint8_t> mask,
                    const std::string& p) {
  auto sc = g.scope(p + "attn");
  const std::size_t d = m.config().d_model;
  const std::size_t heads = m.config().heads;
  const std::size_t dh = d / heads;
  Tensor<T> q = num::linear(x, param(g, m, p + "attn.q.w"), param(g, m, p + "attn.q.b"));
  Tensor<T> k = num::linear(x, param(g, m, p + "attn.k.w"), param(g, m, p + "attn.k.b"));
  Tensor<T> v = num::linear(x, param(g, m, p + "attn.v.w"), param(g, m, p + "attn.v.b"));
  const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<T>> ctx;
  ctx.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor<T> qh = num::slice(q, 2, h * dh, dh);
    Tensor<T> kh = num::slice(k, 2, h * dh, dh);
    Tensor<T> vh = num::slice(v, 2, h * dh, dh);
    Tensor<T> s = num::scale(num::batched_matmul(qh, kh, true), inv_sqrt);
    Tensor<T> a = num::softmax(num::mask_fill(s, mask));
    ctx.push_back(num::batched_matmul(a, vh));
  }
  Tensor<T> joined = heads == 1 ? ctx.front() : num::concat(ctx, 2);
  return num::linear(joined, param(g, m, p + "attn.o.w"), param(g, m, p + "attn.o.b"));
}

/// Post-norm transformer layer.
template <typename T>
Tensor<T> encoder_layer(Graph<T>& g, const Matcher<T>& m, Tensor<T> x,
                        std::span<const std::uint8_t> mask, const std::string& p) {
  const double rate = m.config().dropout;
  Tensor<T> a = num::dropout(attention(g, m, x, mask, p), rate);
  x = num::layer_norm(num::add(x, a), param(g, m, p + "ln1.gain"), param(g, m, p + "ln1.bias"));
  auto sc = g.scope(p + "ffn");
  Tensor<T> f = num::relu(num::linear(x, param(g, m, p + "ffn.w1"), param(g, m, p + "ffn.b1")));
  f = num::linear(num::dropout(f, rate), param(g, m, p + "ffn.w2"), param(g, m, p + "ffn.b2"));
  f = num::dropout(f, rate);
  return num::layer_norm(num::add(x, f), param(g, m, p + "ln2.gain"), param(g, m, p + "ln2.bias"));
}

template <typename T>
Tensor<T> tower(Graph<T>& g, const Matcher<T>& m, Tensor<T> x, std::span<const std::uint8_t> mask,
                const std::string& name, std::size_t layers) {
  for (std::size_t i = 0; i < layers; ++i) {
    x = encoder_layer(g, m, x, mask, name + ".layer" + std::to_string(i) + ".");
  }
  auto sc = g.scope(name + ".pool");
  Tensor<T> pooled = num::masked_mean(x, mask);
  const std::string p = name + ".pool.";
  Tensor<T> h = num::relu(num::linear(pooled, param(g, m, p + "w1"), param(g, m, p + "b1")));
  h = num::dropout(h, m.config().dropout);
  return num::linear(h, param(g, m, p + "w2"), param(g, m, p + "b2"));
}

void check_query(const ModelConfig& c, const QueryInput& in, bool need_tokens, bool need_boxes) {
  const std::size_t n = in.batch * in.length;
  require(in.batch > 0 && in.length > 0, "query input: empty batch");
  require(in.length <= c.max_tokens, "query input: length " + std::to_string(in.length) +
                                         " exceeds max_tokens " + std::to_string(c.max_tokens));
  if (need_tokens) {
    require(in.tokens.size() == n && in.token_mask.size() == n,
            "query input: token arrays must hold batch * length entries");
  }
  if (need_boxes) {
    require(in.boxes.size() == n * 5 && in.box_mask.size() == n,
            "query input: misaligned box count (" + std::to_string(in.boxes.size() / 5) +
                " boxes for " + std::to_string(n) + " positions)");
  }
}

/// Adds rows 0..length-1 of a position table.
template <typename T>
Tensor<T> add_positions(Graph<T>& g, const Matcher<T>& m, Tensor<T> x, const std::string& table,
                        std::size_t length) {
  return num::add_broadcast(x, num::slice(param(g, m, table), 0, 0, length));
}

}  // namespace

template <typename T>
Tensor<T> embed_image_regions(Graph<T>& g, const Matcher<T>& m, const ImageInput& in) {
  auto sc = g.scope("ire");
  const ModelConfig& c = m.config();
  const std::size_t b = in.batch;
  const std::size_t n = in.regions;
  require(b > 0, "image input: empty batch");
  require(in.global.size() == b * c.global_dim,
          "image input: global vectors must have dimension " + std::to_string(c.global_dim));
  require(in.features.size() == b * n * c.region_dim,
          "image input: region vectors must have dimension " + std::to_string(c.region_dim));
  require(in.geometry.size() == b * n * 5 && in.mask.size() == b * n,
          "image input: geometry and mask must cover every region");

  Tensor<T> global = floats(g, {b, 1, c.global_dim}, in.global);
  Tensor<T> regions = floats(g, {b, n, c.region_dim}, in.features);
  if (c.image_location) {
    const auto whole = geometry::TraceBox::whole_canvas().as_features();
    std::vector<float> whole_geo;
    for (std::size_t i = 0; i < b; ++i) {
      whole_geo.insert(whole_geo.end(), whole.begin(), whole.end());
    }
    Tensor<T> lw = param(g, m, "ire.loc.w");
    Tensor<T> lb = param(g, m, "ire.loc.b");
    global = num::concat<T>({global, num::linear(floats(g, {b, 1, 5}, whole_geo), lw, lb)}, 2);
    if (n > 0) {
      regions = num::concat<T>({regions, num::linear(floats(g, {b, n, 5}, in.geometry), lw, lb)}, 2);
    }
  }
  const double rate = c.dropout;
  auto first = [&](Tensor<T> x, const std::string& p) {
    Tensor<T> h = num::relu(num::linear(x, param(g, m, p + ".w1"), param(g, m, p + ".b1")));
    return num::dropout(h, rate);
  };
  Tensor<T> hidden = first(global, "ire.global");
  if (n > 0) {
    hidden = num::concat<T>({hidden, first(regions, "ire.region")}, 1);
  }
  return num::linear(hidden, param(g, m, "ire.w2"), param(g, m, "ire.b2"));
}

template <typename T>
Tensor<T> embed_text_tokens(Graph<T>& g, const Matcher<T>& m, const QueryInput& in) {
  auto sc = g.scope("tte");
  const ModelConfig& c = m.config();
  require(c.uses_text(), "text tokens are not part of a trace-only model");
  check_query(c, in, true, false);
  Tensor<T> x = num::embedding(param(g, m, "tte.table"), in.tokens, Shape{in.batch, in.length});
  x = mlp(g, m, x, "tte.");
  if (c.text_position) {
    x = add_positions(g, m, x, "tte.pos", in.length);
  }
  return x;
}

template <typename T>
Tensor<T> embed_trace_boxes(Graph<T>& g, const Matcher<T>& m, const QueryInput& in) {
  auto sc = g.scope("tbe");
  const ModelConfig& c = m.config();
  require(c.uses_traces(), "trace boxes are not part of a text-only model");
  check_query(c, in, false, true);
  Tensor<T> boxes = floats(g, {in.batch, in.length, 5}, in.boxes);
  Tensor<T> x = num::linear(boxes, param(g, m, "tbe.proj.w"), param(g, m, "tbe.proj.b"));
  x = mlp(g, m, x, "tbe.");
  return add_positions(g, m, x, "tbe.pos", in.length);
}

template <typename T>
Tensor<T> encode_image(Graph<T>& g, const Matcher<T>& m, const ImageInput& in) {
  Tensor<T> x = embed_image_regions(g, m, in);
  std::vector<std::uint8_t> mask;
  mask.reserve(in.batch * (in.regions + 1));
  for (std::size_t i = 0; i < in.batch; ++i) {
    mask.push_back(1);
    mask.insert(mask.end(), in.mask.begin() + static_cast<std::ptrdiff_t>(i * in.regions),
                in.mask.begin() + static_cast<std::ptrdiff_t>((i + 1) * in.regions));
  }
  return tower(g, m, x, mask, "image", m.config().image_layers);
}

template <typename T>
Tensor<T> encode_query(Graph<T>& g, const Matcher<T>& m, const QueryInput& in) {
  const ModelConfig& c = m.config();
  switch (c.query_mode) {
    case QueryMode::text_only:
      return tower(g, m, embed_text_tokens(g, m, in), in.token_mask, "query", c.query_layers);
    case QueryMode::trace_only:
      return tower(g, m, embed_trace_boxes(g, m, in), in.box_mask, "query", c.query_layers);
    case QueryMode::text_trace:
      break;
  }
  Tensor<T> text = embed_text_tokens(g, m, in);
  Tensor<T> trace = embed_trace_boxes(g, m, in);
  std::vector<std::uint8_t> mask;
  mask.reserve(in.batch * in.length * 2);
  for (std::size_t i = 0; i < in.batch; ++i) {
    const auto lo = static_cast<std::ptrdiff_t>(i * in.length);
    const auto hi = static_cast<std::ptrdiff_t>((i + 1) * in.length);
    mask.insert(mask.end(), in.token_mask.begin() + lo, in.token_mask.begin() + hi);
    mask.insert(mask.end(), in.box_mask.begin() + lo, in.box_mask.begin() + hi);
  }
  return tower(g, m, num::concat<T>({text, trace}, 1), mask, "query", c.query_layers);
}

template <typename T>
Tensor<T> score_matrix(Tensor<T> queries, Tensor<T> images) {
  return num::matmul(queries, num::transpose(images));
}

template <typename T>
Tensor<T> contrastive_loss(Tensor<T> scores) {
  Graph<T>& g = scores.graph();
  auto sc = g.scope("contrastive_loss");
  if (scores.rank() != 2 || scores.dim(0) != scores.dim(1) || scores.dim(0) == 0) {
    throw num::ShapeError(g.describe("contrastive_loss") + ": expected a non-empty square matrix, got " +
                          num::shape_string(scores.shape()));
  }
  const std::size_t b = scores.dim(0);
  std::vector<std::size_t> diag(b);
  for (std::size_t i = 0; i < b; ++i) {
    diag[i] = i;
  }
  Tensor<T> rows = num::mean_all(num::pick(num::log_softmax(scores), diag));
  Tensor<T> cols = num::mean_all(num::pick(num::log_softmax(num::transpose(scores)), diag));
  return num::scale(num::add(rows, cols), T(-0.5));
}

double similarity(std::span<const float> image, std::span<const float> query) {
  if (image.size() != query.size()) {
    throw std::invalid_argument("similarity: embedding sizes differ (" + std::to_string(image.size()) +
                                " vs " + std::to_string(query.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    s += static_cast<double>(image[i]) * static_cast<double>(query[i]);
  }
  return s;
}

std::vector<float> image_embeddings(const Matcher<float>& m, const ImageInput& in) {
  Graph<float> g(num::Mode::inference);
  Tensor<float> e = encode_image(g, m, in);
  return {e.values().begin(), e.values().end()};
}

std::vector<float> query_embeddings(const Matcher<float>& m, const QueryInput& in) {
  Graph<float> g(num::Mode::inference);
  Tensor<float> e = encode_query(g, m, in);
  return {e.values().begin(), e.values().end()};
}

template <typename To, typename From>
Matcher<To> convert(const Matcher<From>& m) {
  std::map<std::string, Array<To>> params;
  for (const auto& [name, a] : m.parameters()) {
    params.emplace(name, Array<To>(a.shape, std::vector<To>(a.values.begin(), a.values.end()), true));
  }
  return Matcher<To>::from_parameters(m.config(), std::move(params));
}

void save_checkpoint(const std::filesystem::path& path, const Matcher<float>& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw CheckpointError("cannot write checkpoint " + path.string());
  }
  io::write_magic(out, "MQCK");
  io::write_u32(out, kCheckpointVersion);
  std::string config;
  for (const auto& [key, value] : m.config().to_map()) {
    config += key + "=" + value + "\n";
  }
  io::write_string(out, config);
  io::write_u32(out, static_cast<std::uint32_t>(m.parameters().size()));
  for (const auto& [name, a] : m.parameters()) {
    io::write_string(out, name);
    io::write_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) {
      io::write_u32(out, static_cast<std::uint32_t>(d));
    }
    io::write_floats(out, a.values);
  }
  if (!out) {
    throw CheckpointError("error writing checkpoint " + path.string());
  }
}

Matcher<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("cannot open checkpoint " + path.string());
  }
  const std::string source = "checkpoint " + path.string();
  try {
    io::expect_magic(in, "MQCK", source);
    const std::uint32_t version = io::read_u32(in, "version");
    if (version != kCheckpointVersion) {
      throw CheckpointError(source + ": unsupported version " + std::to_string(version));
    }
    std::map<std::string, std::string> values;
    std::istringstream lines(io::read_string(in, "config"));
    std::string line;
    while (std::getline(lines, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw CheckpointError(source + ": malformed config line '" + line + "'");
      }
      values[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const ModelConfig config = ModelConfig::from_map(values);
    const auto expected = Matcher<float>::layout(config);
    const std::uint32_t count = io::read_u32(in, "tensor count");
    std::map<std::string, Array<float>> params;
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = io::read_string(in, "tensor name");
      const std::uint32_t rank = io::read_u32(in, "tensor rank");
      if (rank > 8) {
        throw CheckpointError(source + ": tensor '" + name + "' has implausible rank");
      }
      Shape shape(rank);
      for (auto& d : shape) {
        d = io::read_u32(in, "tensor dims");
      }
      auto it = expected.find(name);
      if (it == expected.end() || it->second != shape) {
        throw CheckpointError(source + ": tensor '" + name + "' with shape " + num::shape_string(shape) +
                              (it == expected.end() ? " is not part of this model config"
                                                    : " does not match config shape " +
                                                          num::shape_string(it->second)));
      }
      std::vector<float> values_f(num::element_count(shape));
      io::read_floats(in, values_f, "tensor payload");
      params.emplace(std::move(name), Array<float>(std::move(shape), std::move(values_f), true));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      throw CheckpointError(source + ": trailing bytes");
    }
    return Matcher<float>::from_parameters(config, std::move(params));
  } catch (const io::BinaryFormatError& e) {
    throw CheckpointError(source + ": " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(source + ": " + e.what());
  }
}

std::string checkpoint_id(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("cannot open checkpoint " + path.string());
  }
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  char buf[32];
  std::snprintf(buf, sizeof buf, "mqck-%016llx", static_cast<unsigned long long>(hash_name(bytes)));
  return buf;
}

#define MQIR_INSTANTIATE_MODEL(T)                                                              \
  template class Matcher<T>;                                                                   \
  template Tensor<T> embed_image_regions(Graph<T>&, const Matcher<T>&, const ImageInput&);    \
  template Tensor<T> embed_text_tokens(Graph<T>&, const Matcher<T>&, const QueryInput&);      \
  template Tensor<T> embed_trace_boxes(Graph<T>&, const Matcher<T>&, const QueryInput&);      \
  template Tensor<T> encode_image(Graph<T>&, const Matcher<T>&, const ImageInput&);           \
  template Tensor<T> encode_query(Graph<T>&, const Matcher<T>&, const QueryInput&);           \
  template Tensor<T> score_matrix(Tensor<T>, Tensor<T>);                                      \
  template Tensor<T> contrastive_loss(Tensor<T>);

MQIR_INSTANTIATE_MODEL(float)
MQIR_INSTANTIATE_MODEL(double)

template Matcher<double> convert<double, float>(const Matcher<float>&);
template Matcher<float> convert<float, double>(const Matcher<double>&);
template Matcher<float> convert<float, float>(const Matcher<float>&);
template Matcher<double> convert<double, double>(const Matcher<double>&);

}  // namespace mqir::model
