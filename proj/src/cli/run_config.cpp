#include "mqir/cli/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace mqir::cli {

namespace {

using K = ValueKind;

std::vector<KeySpec> build_specs() {
  return {
      {"run", "seed", "0", K::integer, "seed for generation, initialisation and batching"},
      {"run", "output_dir", "runs", K::path, "parent of timestamped run directories"},

      {"paths", "scene_file", "", K::path, "scene list (JSON lines) for thumbnails and group keys"},
      {"paths", "narrative_file", "", K::path, "training narratives"},
      {"paths", "val_narrative_file", "", K::path, "validation narratives for model selection"},
      {"paths", "eval_narrative_file", "", K::path, "evaluation narratives"},
      {"paths", "feature_file", "", K::path, "region feature file"},
      {"paths", "vocab_file", "", K::path, "vocabulary file"},
      {"paths", "checkpoint", "", K::path, "model checkpoint"},
      {"paths", "index_file", "", K::path, "retrieval index"},
      {"paths", "request_file", "", K::path, "query request (JSON)"},
      {"paths", "pretrained_checkpoint", "", K::path, "checkpoint to initialise training from"},

      {"synth", "scenes", "256", K::integer, "number of synthetic scenes"},
      {"synth", "group_size", "4", K::integer, "scenes sharing one object multiset"},
      {"synth", "grid", "4", K::integer, "grid cells per side"},
      {"synth", "objects", "3", K::integer, "objects per scene"},
      {"synth", "global_dim", "64", K::integer, "global feature width"},
      {"synth", "region_dim", "64", K::integer, "region feature width"},
      {"synth", "regions", "16", K::integer, "region slots per image"},
      {"synth", "feature_noise", "0.1", K::real, "noise std on region features"},
      {"synth", "trace_noise", "0.02", K::real, "noise std on trace points"},
      {"synth", "word_duration", "0.35", K::real, "seconds per spoken word"},
      {"synth", "word_gap", "0.05", K::real, "seconds between words"},
      {"synth", "sample_rate", "20", K::real, "trace samples per second"},
      {"synth", "eval_groups", "16", K::integer, "groups held out for evaluation"},
      {"synth", "val_groups", "0", K::integer, "groups held out for validation"},

      {"vocab", "vocab_size", "0", K::integer, "target vocabulary size, 0 for the full word list"},

      {"model", "d_model", "128", K::integer, "transformer width"},
      {"model", "image_layers", "2", K::integer, "image tower layers"},
      {"model", "query_layers", "2", K::integer, "query tower layers"},
      {"model", "heads", "4", K::integer, "attention heads"},
      {"model", "filter", "512", K::integer, "feed-forward width"},
      {"model", "embed_hidden", "128", K::integer, "embedder hidden width"},
      {"model", "pooler_hidden", "512", K::integer, "pooler hidden width"},
      {"model", "embedding_dim", "256", K::integer, "joint embedding width"},
      {"model", "dropout", "0.1", K::real, "dropout rate"},
      {"model", "max_tokens", "64", K::integer, "query length limit"},
      {"model", "query_mode", "text-trace", K::text, "text-only, text-trace or trace-only"},
      {"model", "text_position", "true", K::flag, "1D position embedding on tokens"},
      {"model", "image_location", "true", K::flag, "2D location embedding on regions"},
      {"model", "init", "scaled", K::text, "initialiser: scaled or fixed"},

      {"train", "batch_size", "32", K::integer, "batch size"},
      {"train", "epochs", "100", K::integer, "training epochs"},
      {"train", "max_steps", "0", K::integer, "step limit, 0 for none"},
      {"train", "lr", "1e-4", K::real, "base learning rate"},
      {"train", "warmup", "20", K::real, "warm-up epochs"},
      {"train", "decay", "0.95", K::real, "learning-rate decay factor"},
      {"train", "decay_every", "25", K::real, "epochs between decays"},
      {"train", "clip", "5", K::real, "global gradient-norm limit"},
      {"train", "permute_regions", "true", K::flag, "shuffle region order per batch"},
      {"train", "group_batches", "false", K::flag, "fill batches group by group"},
      {"train", "eval_every", "1", K::integer, "validate every this many epochs"},
      {"train", "checkpoint_every", "1", K::integer, "epoch checkpoint cadence, 0 for best only"},
      {"train", "resplits", "0", K::integer, "retrain over this many random group splits"},

      {"eval", "use_traces", "true", K::flag, "use trace boxes; off means whole-canvas boxes"},
      {"eval", "t_p", "0.1", K::real, "temporal padding in seconds"},
      {"eval", "s_p", "0.05", K::real, "spatial padding as a canvas fraction"},
      {"eval", "folds", "1", K::integer, "contiguous evaluation folds"},
      {"eval", "threads", "0", K::integer, "ranking threads, 0 for all cores"},
      {"eval", "k", "10", K::integer, "results per query"},

      {"service", "host", "127.0.0.1", K::text, "listen address"},
      {"service", "port", "8080", K::integer, "listen port, 0 for any free port"},
      {"service", "seconds_per_word", "0.4", K::real, "word duration when a request has no timings"},
  };
}

std::string trim(std::string_view s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

bool parse_int(const std::string& v, std::int64_t& out) {
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  return ec == std::errc() && ptr == v.data() + v.size();
}

bool parse_real(const std::string& v, double& out) {
  if (v.empty()) return false;
  std::istringstream in(v);
  in.imbue(std::locale::classic());
  in >> out;
  return in && in.peek() == std::char_traits<char>::eof();
}

}  // namespace

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = build_specs();
  return specs;
}

const KeySpec* find_key(const std::string& key) {
  for (const auto& s : key_specs()) {
    if (s.key == key) return &s;
  }
  return nullptr;
}

std::string flag_name(const std::string& key) {
  std::string out = key;
  std::replace(out.begin(), out.end(), '_', '-');
  return out;
}

std::string env_name(const std::string& key) {
  std::string out = "MQIR_";
  for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

RunConfig::RunConfig() {
  for (const auto& s : key_specs()) values_[s.key] = s.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = find_key(key);
  if (spec == nullptr) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  std::int64_t i = 0;
  double d = 0.0;
  switch (spec->kind) {
    case K::integer:
      if (!parse_int(value, i)) throw ConfigError(key + ": expected an integer, got '" + value + "'");
      break;
    case K::real:
      if (!parse_real(value, d)) throw ConfigError(key + ": expected a number, got '" + value + "'");
      break;
    case K::flag:
      if (value != "true" && value != "false") {
        throw ConfigError(key + ": expected true or false, got '" + value + "'");
      }
      break;
    case K::text:
    case K::path:
      break;
  }
  values_[key] = value;
}

const std::string& RunConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  return it->second;
}

std::int64_t RunConfig::integer(const std::string& key) const {
  std::int64_t v = 0;
  parse_int(raw(key), v);
  return v;
}

std::size_t RunConfig::count(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v < 0) {
    throw ConfigError(key + ": must not be negative");
  }
  return static_cast<std::size_t>(v);
}

double RunConfig::real(const std::string& key) const {
  double v = 0.0;
  parse_real(raw(key), v);
  return v;
}

bool RunConfig::flag(const std::string& key) const { return raw(key) == "true"; }

std::filesystem::path RunConfig::path(const std::string& key) const { return raw(key); }

std::filesystem::path RunConfig::required_path(const std::string& key) const {
  const auto& v = raw(key);
  if (v.empty()) {
    throw ConfigError("missing required setting " + key + " (--" + flag_name(key) + ")");
  }
  return v;
}

void RunConfig::merge_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw ConfigError("cannot read config file " + file.string());
  }
  std::stringstream text;
  text << in.rdbuf();
  merge_text(text.str(), file.string());
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto where = origin + ":" + std::to_string(number) + ": ";
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      const auto& specs = key_specs();
      if (std::none_of(specs.begin(), specs.end(), [&](const KeySpec& s) { return s.section == section; })) {
        throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const KeySpec* spec = find_key(key);
    if (spec == nullptr) throw ConfigError(where + "unknown key '" + key + "'");
    if (spec->section != section) {
      throw ConfigError(where + "key '" + key + "' belongs in [" + spec->section + "]");
    }
    try {
      set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void RunConfig::merge_environment(
    const std::function<std::optional<std::string>(const std::string&)>& lookup) {
  for (const auto& s : key_specs()) {
    if (auto v = lookup(env_name(s.key))) {
      try {
        set(s.key, *v);
      } catch (const ConfigError& e) {
        throw ConfigError(env_name(s.key) + ": " + e.what());
      }
    }
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  std::string section;
  for (const auto& s : key_specs()) {
    if (s.section != section) {
      if (!section.empty()) out << "\n";
      section = s.section;
      out << "[" << section << "]\n";
    }
    out << s.key << " = " << raw(s.key) << "\n";
  }
  return out.str();
}

std::map<std::string, std::map<std::string, std::string>> RunConfig::sections() const {
  std::map<std::string, std::map<std::string, std::string>> out;
  for (const auto& s : key_specs()) out[s.section][s.key] = raw(s.key);
  return out;
}

}  // namespace mqir::cli
