#include "mqir/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "mqir/numerics/random.hpp"

namespace mqir::data {

using nlohmann::json;

namespace {

constexpr std::size_t kTypes = kShapeNames.size() * kColorNames.size();

double binomial(std::size_t n, std::size_t k) {
  double c = 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    c = c * static_cast<double>(n - i) / static_cast<double>(i + 1);
  }
  return c;
}

std::string scene_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene-%05zu", index);
  return buf;
}

struct Point2 {
  double x;
  double y;
};

/// Noise-free pointer position while the object's words are spoken: a small
/// loop around the cell centre that never leaves the cell.
Point2 dwell_position(const SceneObject& obj, std::size_t grid, double elapsed) {
  const double cell = 1.0 / static_cast<double>(grid);
  const double cx = (static_cast<double>(obj.col) + 0.5) * cell;
  const double cy = (static_cast<double>(obj.row) + 0.5) * cell;
  const double radius = 0.3 * cell;
  const double phase = 2.0 * std::numbers::pi * elapsed / 0.75;
  return {cx + radius * std::sin(phase), cy - radius * std::cos(phase)};
}

struct Span {
  double start;
  double end;
};

NarrativeRecord make_narrative(const Scene& scene, const SyntheticConfig& cfg, Rng& rng) {
  NarrativeRecord r;
  r.image_id = scene.image_id;
  std::vector<Span> spans;
  std::size_t w = 0;
  auto add_word = [&](std::string_view word) {
    const double start = static_cast<double>(w) * (cfg.word_duration + cfg.word_gap);
    r.timed_words.push_back({std::string(word), start, start + cfg.word_duration});
    ++w;
  };
  for (std::size_t j = 0; j < scene.objects.size(); ++j) {
    const SceneObject& obj = scene.objects[j];
    if (j > 0) {
      add_word("and");
    }
    add_word(kColorNames[obj.color]);
    const double start = r.timed_words.back().t_start;
    add_word(kShapeNames[obj.shape]);
    spans.push_back({start, r.timed_words.back().t_end});
  }
  for (std::size_t i = 0; i < r.timed_words.size(); ++i) {
    r.caption += (i ? " " : "") + r.timed_words[i].word;
  }

  const double total = r.timed_words.back().t_end;
  for (std::size_t k = 0;; ++k) {
    const double t = static_cast<double>(k) / cfg.sample_rate;
    if (t > total) {
      break;
    }
    Point2 p{0.5, 0.5};
    std::size_t j = 0;
    while (j < spans.size() && t > spans[j].end) {
      ++j;
    }
    if (j < spans.size() && t >= spans[j].start) {
      p = dwell_position(scene.objects[j], scene.grid, t - spans[j].start);
    } else {
      const Span& prev = spans[j - 1];
      const Point2 a = dwell_position(scene.objects[j - 1], scene.grid, prev.end - prev.start);
      const Point2 b = dwell_position(scene.objects[j], scene.grid, 0.0);
      const double f = (t - prev.end) / (spans[j].start - prev.end);
      p = {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)};
    }
    if (cfg.trace_noise > 0.0) {
      p.x += cfg.trace_noise * rng.normal();
      p.y += cfg.trace_noise * rng.normal();
    }
    r.trace.points.push_back(geometry::clip_point({p.x, p.y, t}));
  }
  validate_record(r);
  return r;
}

FeatureRecord make_features(const Scene& scene, const SyntheticConfig& cfg, Rng& rng) {
  std::vector<std::size_t> order(scene.objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  rng.shuffle(order);
  std::vector<std::vector<float>> vectors;
  std::vector<geometry::TraceBox> boxes;
  std::vector<double> mean(cfg.region_dim, 0.0);
  for (std::size_t i : order) {
    const SceneObject& obj = scene.objects[i];
    std::vector<float> v(cfg.region_dim);
    for (std::size_t d = 0; d < cfg.region_dim; ++d) {
      double x = (d == obj.shape || d == kShapeNames.size() + obj.color) ? 1.0 : 0.0;
      if (cfg.feature_noise > 0.0) {
        x += cfg.feature_noise * rng.normal();
      }
      v[d] = static_cast<float>(x);
      mean[d] += static_cast<double>(v[d]);
    }
    vectors.push_back(std::move(v));
    boxes.push_back(cell_box(obj.row, obj.col, scene.grid));
  }
  std::vector<float> global(cfg.global_dim);
  for (std::size_t d = 0; d < cfg.global_dim; ++d) {
    global[d] = static_cast<float>(mean[d] / static_cast<double>(vectors.size()));
  }
  return make_feature_record(scene.image_id, std::move(global), vectors, boxes, cfg.regions,
                             cfg.region_dim);
}

}  // namespace

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("synthetic config: " + what); };
  if (group_size < 2) {
    fail("group_size must be at least 2");
  }
  if (scenes == 0 || scenes % group_size != 0) {
    fail("scenes must be a positive multiple of group_size");
  }
  if (objects_per_scene == 0 || objects_per_scene > kTypes) {
    fail("objects_per_scene must be between 1 and " + std::to_string(kTypes));
  }
  if (objects_per_scene > regions) {
    fail("objects_per_scene exceeds the region count");
  }
  if (grid == 0 || grid * grid < objects_per_scene ||
      binomial(grid * grid, objects_per_scene) < static_cast<double>(group_size)) {
    fail("grid too small to place " + std::to_string(objects_per_scene) + " objects in " +
         std::to_string(group_size) + " distinct layouts");
  }
  if (region_dim < kShapeNames.size() + kColorNames.size()) {
    fail("region_dim must be at least " + std::to_string(kShapeNames.size() + kColorNames.size()));
  }
  if (global_dim != region_dim) {
    fail("global_dim must equal region_dim (the global feature is the region mean)");
  }
  if (!(feature_noise >= 0.0) || !(trace_noise >= 0.0)) {
    fail("noise levels must be non-negative");
  }
  if (!(word_duration > 0.0) || !(word_gap > 0.0) || !(sample_rate > 0.0)) {
    fail("word_duration, word_gap and sample_rate must be positive");
  }
}

geometry::TraceBox cell_box(std::size_t row, std::size_t col, std::size_t grid) {
  const double cell = 1.0 / static_cast<double>(grid);
  return geometry::TraceBox::from_corners(static_cast<double>(col) * cell,
                                          static_cast<double>(row) * cell,
                                          static_cast<double>(col + 1) * cell,
                                          static_cast<double>(row + 1) * cell);
}

std::string object_phrase(const SceneObject& object) {
  return std::string(kColorNames.at(object.color)) + " " + std::string(kShapeNames.at(object.shape));
}

SyntheticCorpus generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  Rng rng(config.seed);
  SyntheticCorpus corpus;
  corpus.features = FeatureSet(config.global_dim, config.region_dim, config.regions);
  const std::size_t cells = config.grid * config.grid;
  const std::size_t groups = config.scenes / config.group_size;

  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<std::size_t> types(kTypes);
    for (std::size_t i = 0; i < kTypes; ++i) {
      types[i] = i;
    }
    rng.shuffle(types);
    types.resize(config.objects_per_scene);
    std::sort(types.begin(), types.end());

    std::set<std::vector<std::size_t>> layouts;
    for (std::size_t s = 0; s < config.group_size; ++s) {
      std::vector<std::size_t> chosen;
      for (;;) {
        std::vector<std::size_t> all(cells);
        for (std::size_t i = 0; i < cells; ++i) {
          all[i] = i;
        }
        rng.shuffle(all);
        chosen.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(config.objects_per_scene));
        std::vector<std::size_t> key = chosen;
        std::sort(key.begin(), key.end());
        if (layouts.insert(key).second) {
          break;
        }
      }
      Scene scene;
      scene.image_id = scene_id(g * config.group_size + s);
      scene.group = g;
      scene.grid = config.grid;
      for (std::size_t j = 0; j < types.size(); ++j) {
        // Type index is color-major so captions list colors in a fixed order.
        scene.objects.push_back({types[j] % kShapeNames.size(), types[j] / kShapeNames.size(),
                                 chosen[j] / config.grid, chosen[j] % config.grid});
      }
      corpus.narratives.push_back(make_narrative(scene, config, rng));
      corpus.features.add(make_features(scene, config, rng));
      corpus.scenes.push_back(std::move(scene));
    }
  }
  return corpus;
}

GroupSplit split_by_groups(const std::vector<Scene>& scenes, std::size_t eval_groups,
                           std::optional<std::uint64_t> shuffle_seed) {
  std::vector<std::size_t> groups;
  for (const Scene& s : scenes) {
    if (std::find(groups.begin(), groups.end(), s.group) == groups.end()) {
      groups.push_back(s.group);
    }
  }
  if (eval_groups == 0 || eval_groups >= groups.size()) {
    throw std::invalid_argument("split_by_groups: need between 1 and " +
                                std::to_string(groups.size() - 1) + " evaluation groups");
  }
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    rng.shuffle(groups);
  }
  const std::set<std::size_t> held_out(groups.end() - static_cast<std::ptrdiff_t>(eval_groups),
                                       groups.end());
  GroupSplit split;
  for (const Scene& s : scenes) {
    (held_out.contains(s.group) ? split.eval : split.train).push_back(s.image_id);
  }
  return split;
}

void save_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write scene file " + path.string());
  }
  for (const Scene& s : scenes) {
    json objects = json::array();
    for (const SceneObject& o : s.objects) {
      objects.push_back({{"shape", kShapeNames[o.shape]},
                         {"color", kColorNames[o.color]},
                         {"row", o.row},
                         {"col", o.col}});
    }
    json obj = {{"image_id", s.image_id}, {"group", s.group}, {"grid", s.grid}, {"objects", objects}};
    out << obj.dump() << '\n';
  }
}

namespace {

template <std::size_t N>
std::size_t name_index(const std::array<std::string_view, N>& names, const std::string& name,
                       const std::string& where) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    throw FormatError(where + ": unknown name '" + name + "'");
  }
  return static_cast<std::size_t>(it - names.begin());
}

}  // namespace

std::vector<Scene> load_scenes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw FormatError("cannot open scene file " + path.string());
  }
  std::vector<Scene> scenes;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    const std::string where = "line " + std::to_string(line_number);
    try {
      const json obj = json::parse(line);
      Scene s;
      s.image_id = obj.at("image_id").get<std::string>();
      s.group = obj.at("group").get<std::size_t>();
      s.grid = obj.at("grid").get<std::size_t>();
      if (s.grid == 0) {
        throw FormatError(where + ": grid: must be positive");
      }
      for (const json& o : obj.at("objects")) {
        SceneObject so;
        so.shape = name_index(kShapeNames, o.at("shape").get<std::string>(), where + ": shape");
        so.color = name_index(kColorNames, o.at("color").get<std::string>(), where + ": color");
        so.row = o.at("row").get<std::size_t>();
        so.col = o.at("col").get<std::size_t>();
        if (so.row >= s.grid || so.col >= s.grid) {
          throw FormatError(where + ": objects: cell outside the grid");
        }
        s.objects.push_back(so);
      }
      scenes.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return scenes;
}

}  // namespace mqir::data
