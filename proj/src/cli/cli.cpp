#include "mqir/cli/cli.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "mqir/data/narrative.hpp"
#include "mqir/data/synthetic.hpp"
#include "mqir/data/vocabulary.hpp"
#include "mqir/model/matcher.hpp"
#include "mqir/numerics/random.hpp"
#include "mqir/retrieval/index.hpp"
#include "mqir/retrieval/metrics.hpp"
#include "mqir/service/query_engine.hpp"

namespace mqir::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot read " + path.string());
  }
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path make_run_dir(const RunConfig& c, const std::string& requested) {
  fs::path dir;
  if (!requested.empty()) {
    dir = requested;
  } else {
    const fs::path base = c.path("output_dir") / (timestamp() + "-seed" + c.raw("seed"));
    dir = base;
    for (int i = 2; fs::exists(dir); ++i) {
      dir = base.string() + "-" + std::to_string(i);
    }
  }
  fs::create_directories(dir);
  return dir;
}

std::uint64_t seed_of(const RunConfig& c) { return static_cast<std::uint64_t>(c.integer("seed")); }

std::vector<std::string> captions_of(const std::vector<data::NarrativeRecord>& records) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.caption);
  return out;
}

data::Vocabulary vocabulary_for(const RunConfig& c, const std::vector<data::NarrativeRecord>& records) {
  const auto captions = captions_of(records);
  const std::size_t size = c.count("vocab_size");
  return data::build_vocabulary(captions, size == 0 ? data::max_vocabulary_size(captions) : size);
}

std::vector<data::NarrativeRecord> select(const std::vector<data::NarrativeRecord>& records,
                                          const std::set<std::string>& ids, bool keep) {
  std::vector<data::NarrativeRecord> out;
  for (const auto& r : records) {
    if (ids.contains(r.image_id) == keep) out.push_back(r);
  }
  return out;
}

std::string ranks_text(const retrieval::Evaluation& e, const std::vector<data::NarrativeRecord>& records) {
  std::ostringstream out;
  out << "# query image_id rank\n";
  for (std::size_t i = 0; i < e.results.size(); ++i) {
    out << e.results[i].query_id << " " << records[i].image_id << " " << e.results[i].rank_of_target
        << "\n";
  }
  return out.str();
}

std::unordered_map<std::string, std::size_t> groups_by_image(const fs::path& scene_file) {
  std::unordered_map<std::string, std::size_t> out;
  for (const auto& s : data::load_scenes(scene_file)) out[s.image_id] = s.group;
  return out;
}

std::vector<std::size_t> group_keys_for(const std::vector<data::NarrativeRecord>& records,
                                        const std::unordered_map<std::string, std::size_t>& groups) {
  std::vector<std::size_t> keys;
  keys.reserve(records.size());
  for (const auto& r : records) {
    auto it = groups.find(r.image_id);
    if (it == groups.end()) {
      throw std::runtime_error("image '" + r.image_id + "' is missing from the scene file");
    }
    keys.push_back(it->second);
  }
  return keys;
}

struct TrainedModel {
  model::Matcher<float> model;
  std::optional<retrieval::Evaluation> evaluation;
};

/// One training run into `dir`, evaluated on `eval_records` when given.
TrainedModel train_once(const RunConfig& c, const fs::path& dir, const std::vector<data::NarrativeRecord>& train_records,
                        const std::vector<data::NarrativeRecord>& val_records,
                        const std::vector<data::NarrativeRecord>& eval_records, const data::FeatureSet& features,
                        const data::Vocabulary& vocab, std::ostream& out) {
  const model::ModelConfig mc = model_config(c, features, vocab.size());
  model::Matcher<float> initial;
  if (!c.raw("pretrained_checkpoint").empty()) {
    train::TransferReport report;
    initial = train::transfer_weights(model::load_checkpoint(c.path("pretrained_checkpoint")), mc, seed_of(c),
                                      &report);
    std::ostringstream t;
    for (const auto& n : report.copied) t << "copied " << n << "\n";
    for (const auto& n : report.initialized) t << "initialized " << n << "\n";
    write_text(dir / "transfer.txt", t.str());
    out << "transfer: " << report.copied.size() << " tensors copied, " << report.initialized.size()
        << " initialized\n";
  } else {
    initial = model::Matcher<float>(mc, seed_of(c));
  }

  train::TrainConfig tc = train_config(c, dir);
  train::TrainingData td{&train_records, &features, &vocab, {}};
  if (tc.group_batches) {
    td.group_keys = group_keys_for(train_records, groups_by_image(c.required_path("scene_file")));
  }
  std::optional<train::Validation> validation;
  if (!val_records.empty() && tc.eval_every > 0) {
    validation = train::Validation{&val_records, &features, &vocab, eval_options(c)};
  }
  train::TrainResult result = train::train(std::move(initial), td, tc, validation ? &*validation : nullptr);

  std::ostringstream epochs;
  epochs << "# epoch mean_loss batch_accuracy val_r1\n";
  for (const auto& e : result.epochs) {
    char line[128];
    std::snprintf(line, sizeof line, "%zu %.6f %.6f %s\n", e.epoch, e.mean_loss, e.batch_accuracy,
                  e.val_r1 ? std::to_string(*e.val_r1).c_str() : "-");
    epochs << line;
  }
  write_text(dir / "epochs.log", epochs.str());
  if (!result.epochs.empty()) {
    const auto& last = result.epochs.back();
    out << "trained " << result.steps.size() << " steps, final epoch loss " << last.mean_loss << "\n";
  }

  TrainedModel trained{result.best ? std::move(*result.best) : std::move(result.model), std::nullopt};
  if (result.best) {
    out << "selected epoch " << result.best_epoch << " (validation R@1 " << *result.best_val_r1 << ")\n";
  }
  model::save_checkpoint(dir / "model.mqck", trained.model);
  if (!eval_records.empty()) {
    trained.evaluation = retrieval::evaluate(trained.model, eval_records, features, vocab, eval_options(c));
  }
  return trained;
}

int cmd_gen_synth(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  data::SyntheticConfig sc;
  sc.scenes = c.count("scenes");
  sc.group_size = c.count("group_size");
  sc.grid = c.count("grid");
  sc.objects_per_scene = c.count("objects");
  sc.global_dim = static_cast<std::uint32_t>(c.count("global_dim"));
  sc.region_dim = static_cast<std::uint32_t>(c.count("region_dim"));
  sc.regions = static_cast<std::uint32_t>(c.count("regions"));
  sc.feature_noise = c.real("feature_noise");
  sc.trace_noise = c.real("trace_noise");
  sc.word_duration = c.real("word_duration");
  sc.word_gap = c.real("word_gap");
  sc.sample_rate = c.real("sample_rate");
  sc.seed = seed_of(c);
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const data::SyntheticCorpus corpus = data::generate_synthetic(sc);

  const auto split = data::split_by_groups(corpus.scenes, c.count("eval_groups"));
  const std::set<std::string> eval_ids(split.eval.begin(), split.eval.end());
  std::set<std::string> val_ids;
  if (c.count("val_groups") > 0) {
    std::vector<data::Scene> rest;
    for (const auto& s : corpus.scenes) {
      if (!eval_ids.contains(s.image_id)) rest.push_back(s);
    }
    const auto v = data::split_by_groups(rest, c.count("val_groups"));
    val_ids.insert(v.eval.begin(), v.eval.end());
  }
  std::vector<data::NarrativeRecord> train_records;
  std::vector<data::NarrativeRecord> val_records;
  std::vector<data::NarrativeRecord> eval_records;
  for (const auto& r : corpus.narratives) {
    if (eval_ids.contains(r.image_id)) {
      eval_records.push_back(r);
    } else if (val_ids.contains(r.image_id)) {
      val_records.push_back(r);
    } else {
      train_records.push_back(r);
    }
  }

  data::save_scenes(dir / "scenes.jsonl", corpus.scenes);
  data::save_narratives(dir / "narratives.jsonl", corpus.narratives);
  data::save_narratives(dir / "train.jsonl", train_records);
  if (!val_records.empty()) data::save_narratives(dir / "val.jsonl", val_records);
  data::save_narratives(dir / "eval.jsonl", eval_records);
  data::write_features(dir / "features.bin", corpus.features);
  out << "generated " << corpus.scenes.size() << " scenes: " << train_records.size() << " train, "
      << val_records.size() << " validation, " << eval_records.size() << " eval\n";
  return 0;
}

int cmd_build_vocab(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const auto records = data::load_narratives(c.required_path("narrative_file"));
  const data::Vocabulary vocab = vocabulary_for(c, records);
  vocab.save(dir / "vocab.txt");
  out << "vocabulary of " << vocab.size() << " tokens from " << records.size() << " captions\n";
  return 0;
}

int cmd_train(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const data::FeatureSet features = data::read_features(c.required_path("feature_file"));
  const auto train_records = data::load_narratives(c.required_path("narrative_file"));
  std::vector<data::NarrativeRecord> val_records;
  if (!c.raw("val_narrative_file").empty()) val_records = data::load_narratives(c.path("val_narrative_file"));
  std::vector<data::NarrativeRecord> eval_records;
  if (!c.raw("eval_narrative_file").empty()) eval_records = data::load_narratives(c.path("eval_narrative_file"));
  const bool fixed_vocab = !c.raw("vocab_file").empty();

  const std::size_t resplits = c.count("resplits");
  if (resplits == 0) {
    const data::Vocabulary vocab =
        fixed_vocab ? data::Vocabulary::load(c.path("vocab_file")) : vocabulary_for(c, train_records);
    if (!fixed_vocab) vocab.save(dir / "vocab.txt");
    const TrainedModel trained = train_once(c, dir, train_records, val_records, eval_records, features, vocab, out);
    if (trained.evaluation) {
      const std::string report =
          retrieval::format_report(trained.evaluation->metrics, "evaluation on " + c.raw("eval_narrative_file"));
      write_text(dir / "metrics.txt", report);
      write_text(dir / "ranks.txt", ranks_text(*trained.evaluation, eval_records));
      out << report;
    }
    return 0;
  }

  // Re-split mode: pool every record, hold out random whole groups per split.
  const auto groups = groups_by_image(c.required_path("scene_file"));
  std::vector<data::NarrativeRecord> pool = train_records;
  pool.insert(pool.end(), val_records.begin(), val_records.end());
  pool.insert(pool.end(), eval_records.begin(), eval_records.end());
  std::vector<data::Scene> scenes;
  for (const auto& s : data::load_scenes(c.path("scene_file"))) {
    if (std::any_of(pool.begin(), pool.end(), [&](const auto& r) { return r.image_id == s.image_id; })) {
      scenes.push_back(s);
    }
  }
  std::vector<retrieval::Metrics> metrics;
  for (std::size_t s = 0; s < resplits; ++s) {
    const auto split = data::split_by_groups(scenes, c.count("eval_groups"), mqir::mix_seed(seed_of(c), s));
    const std::set<std::string> held(split.eval.begin(), split.eval.end());
    const auto tr = select(pool, held, false);
    const auto ev = select(pool, held, true);
    const fs::path split_dir = dir / ("split-" + std::to_string(s));
    fs::create_directories(split_dir);
    const data::Vocabulary vocab = fixed_vocab ? data::Vocabulary::load(c.path("vocab_file")) : vocabulary_for(c, tr);
    vocab.save(split_dir / "vocab.txt");
    data::save_narratives(split_dir / "train.jsonl", tr);
    data::save_narratives(split_dir / "eval.jsonl", ev);
    out << "split " << s << ": " << tr.size() << " train, " << ev.size() << " eval\n";
    const TrainedModel trained = train_once(c, split_dir, tr, {}, ev, features, vocab, out);
    write_text(split_dir / "metrics.txt", retrieval::format_report(trained.evaluation->metrics, "split " + std::to_string(s)));
    write_text(split_dir / "ranks.txt", ranks_text(*trained.evaluation, ev));
    metrics.push_back(trained.evaluation->metrics);
  }
  const std::string summary = retrieval::format_split_summary(retrieval::summarize_splits(metrics));
  write_text(dir / "resplit.txt", summary);
  out << summary;
  return 0;
}

int cmd_evaluate(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const auto m = model::load_checkpoint(c.required_path("checkpoint"));
  const auto records = data::load_narratives(c.required_path("eval_narrative_file"));
  const data::FeatureSet features = data::read_features(c.required_path("feature_file"));
  const auto vocab = data::Vocabulary::load(c.required_path("vocab_file"));
  const auto e = retrieval::evaluate(m, records, features, vocab, eval_options(c));
  const std::string report = retrieval::format_report(e.metrics, "evaluation on " + c.raw("eval_narrative_file"));
  write_text(dir / "metrics.txt", report);
  write_text(dir / "ranks.txt", ranks_text(e, records));
  out << report;
  return 0;
}

int cmd_build_index(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const auto index = retrieval::build_index(c.required_path("checkpoint"), c.required_path("feature_file"));
  retrieval::save_index(dir / "index.mqix", index);
  out << "indexed " << index.size() << " images (" << index.dim() << "-d) into " << (dir / "index.mqix").string()
      << "\n";
  return 0;
}

std::shared_ptr<const service::QueryEngine> make_engine(const RunConfig& c) {
  const fs::path ckpt = c.required_path("checkpoint");
  auto m = model::load_checkpoint(ckpt);
  const std::string id = model::checkpoint_id(ckpt);
  auto vocab = data::Vocabulary::load(c.required_path("vocab_file"));
  retrieval::RetrievalIndex index;
  if (!c.raw("index_file").empty()) {
    index = retrieval::load_index(c.path("index_file"));
    if (index.provenance().checkpoint != id) {
      throw std::runtime_error("index " + c.raw("index_file") + " was built from checkpoint " +
                               index.provenance().checkpoint + ", not " + id);
    }
  } else {
    index = retrieval::build_index(ckpt, c.required_path("feature_file"));
  }
  service::EngineOptions o;
  o.padding = {c.real("t_p"), c.real("s_p")};
  o.default_k = c.count("k");
  o.seconds_per_word = c.real("seconds_per_word");
  return std::make_shared<const service::QueryEngine>(std::move(m), std::move(vocab), std::move(index), id, o);
}

int cmd_query(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const auto engine = make_engine(c);
  const auto request = service::parse_query_request(read_text(c.required_path("request_file")));
  const std::string body = service::response_json(engine->handle(request));
  write_text(dir / "response.json", body + "\n");
  out << body << "\n";
  return 0;
}

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

int cmd_serve(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const std::int64_t port = c.integer("port");
  if (port < 0 || port > 65535) {
    throw ConfigError("port: expected 0 to 65535");
  }
  service::QueryService svc([c] { return load_service_state(c); });
  g_stop = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const int bound = svc.start(c.text("host"), static_cast<int>(port));
  out << "listening on http://" << c.text("host") << ":" << bound << std::endl;
  svc.wait_loaded();
  if (!svc.ready()) {
    out << "loading failed: " << svc.load_error() << std::endl;
  } else {
    out << "ready" << std::endl;
  }
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  svc.stop();
  return 0;
}

using Command = int (*)(const RunConfig&, const fs::path&, std::ostream&);

struct Subcommand {
  std::string name;
  std::string help;
  std::vector<std::string> sections;
  Command run;
};

const std::vector<Subcommand>& subcommands() {
  static const std::vector<Subcommand> list = {
      {"gen-synth", "generate a grouped synthetic corpus with features and narratives", {"run", "synth"},
       cmd_gen_synth},
      {"build-vocab", "build a word-piece vocabulary from training captions", {"run", "paths", "vocab"},
       cmd_build_vocab},
      {"train", "train a matcher, then evaluate it", {"run", "paths", "synth", "vocab", "model", "train", "eval"},
       cmd_train},
      {"evaluate", "rank evaluation narratives against their images", {"run", "paths", "eval"}, cmd_evaluate},
      {"build-index", "encode every image of a feature file", {"run", "paths"}, cmd_build_index},
      {"query", "answer one request file", {"run", "paths", "eval", "service"}, cmd_query},
      {"serve", "serve queries over HTTP", {"run", "paths", "eval", "service"}, cmd_serve},
  };
  return list;
}

}  // namespace

std::optional<std::string> process_environment(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

model::ModelConfig model_config(const RunConfig& c, const data::FeatureSet& features, std::size_t vocab_size) {
  model::ModelConfig m;
  m.vocab_size = vocab_size;
  m.d_model = c.count("d_model");
  m.image_layers = c.count("image_layers");
  m.query_layers = c.count("query_layers");
  m.heads = c.count("heads");
  m.filter = c.count("filter");
  m.embed_hidden = c.count("embed_hidden");
  m.pooler_hidden = c.count("pooler_hidden");
  m.embedding_dim = c.count("embedding_dim");
  m.dropout = c.real("dropout");
  m.global_dim = features.global_dim();
  m.region_dim = features.region_dim();
  m.regions = features.regions();
  m.max_tokens = c.count("max_tokens");
  m.text_position = c.flag("text_position");
  m.image_location = c.flag("image_location");
  try {
    m.query_mode = model::parse_query_mode(c.text("query_mode"));
    m.init = model::parse_init_scheme(c.text("init"));
    m.validate();
  } catch (const model::ConfigError& e) {
    throw ConfigError(e.what());
  }
  return m;
}

train::TrainConfig train_config(const RunConfig& c, const fs::path& output_dir) {
  train::TrainConfig t;
  t.batch_size = c.count("batch_size");
  t.epochs = c.count("epochs");
  t.max_steps = c.count("max_steps");
  t.seed = seed_of(c);
  t.base_lr = c.real("lr");
  t.warmup_epochs = c.real("warmup");
  t.decay_factor = c.real("decay");
  t.decay_every = c.real("decay_every");
  t.clip_norm = c.real("clip");
  t.padding = {c.real("t_p"), c.real("s_p")};
  t.permute_regions = c.flag("permute_regions");
  t.group_batches = c.flag("group_batches");
  t.eval_every = c.count("eval_every");
  t.checkpoint_every = c.count("checkpoint_every");
  t.output_dir = output_dir;
  if (t.batch_size == 0 || t.epochs == 0 || !(t.base_lr > 0.0)) {
    throw ConfigError("batch_size, epochs and lr must be positive");
  }
  return t;
}

retrieval::EvalOptions eval_options(const RunConfig& c) {
  retrieval::EvalOptions o;
  o.use_traces = c.flag("use_traces");
  o.padding = {c.real("t_p"), c.real("s_p")};
  o.folds = c.count("folds");
  o.threads = c.count("threads");
  if (o.folds == 0) {
    throw ConfigError("folds must be at least 1");
  }
  return o;
}

service::ServiceState load_service_state(const RunConfig& c) {
  service::ServiceState s;
  s.engine = make_engine(c);
  if (!c.raw("scene_file").empty()) {
    s.scenes = std::make_shared<const service::SceneStore>(data::load_scenes(c.path("scene_file")));
  }
  auto sections = c.sections();
  std::erase_if(sections, [](const auto& kv) {
    return kv.first != "run" && kv.first != "paths" && kv.first != "eval" && kv.first != "service";
  });
  s.meta_json = service::meta_json(*s.engine, sections);
  return s;
}

int run_cli(int argc, const char* const argv[], std::ostream& out, std::ostream& err, const EnvLookup& env) {
  CLI::App app{"mqir: image retrieval from a caption and a mouse trace", "mqir"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::string run_dir;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::App*> apps;

  for (const auto& sub : subcommands()) {
    CLI::App* a = app.add_subcommand(sub.name, sub.help);
    apps[sub.name] = a;
    a->add_option("--config", config_file, "key = value file with [section] headers");
    a->add_option("--run-dir", run_dir, "write artifacts here instead of a new timestamped directory");
    for (const auto& spec : key_specs()) {
      if (std::find(sub.sections.begin(), sub.sections.end(), spec.section) == sub.sections.end()) continue;
      const std::string name = "--" + flag_name(spec.key);
      const std::string help = spec.help + " [" + spec.default_value + "]";
      if (spec.kind == ValueKind::flag) {
        a->add_flag_function(name + ",!--no-" + flag_name(spec.key),
                             [&flags, key = spec.key](std::int64_t n) { flags[key] = n > 0 ? "true" : "false"; },
                             help)
            ->group(spec.section);
      } else {
        a->add_option_function<std::string>(name, [&flags, key = spec.key](const std::string& v) { flags[key] = v; },
                                            help)
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
            ->group(spec.section);
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    for (const auto& [name, a] : apps) {
      if (a->parsed()) {
        err << a->help();
        return 2;
      }
    }
    err << app.help();
    return 2;
  }

  const Subcommand* chosen = nullptr;
  for (const auto& sub : subcommands()) {
    if (apps[sub.name]->parsed()) chosen = &sub;
  }

  RunConfig config;
  fs::path dir;
  try {
    if (!config_file.empty()) config.merge_file(config_file);
    config.merge_environment(env);
    for (const auto& [key, value] : flags) config.set(key, value);
    dir = make_run_dir(config, run_dir);
    write_text(dir / "effective.conf", "# mqir " + chosen->name + "\n" + config.to_text());
    out << "run directory: " << dir.string() << "\n";
    return chosen->run(config, dir, out);
  } catch (const ConfigError& e) {
    err << "mqir " << chosen->name << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "mqir " << chosen->name << ": error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mqir::cli
