#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mqir/data/features.hpp"
#include "mqir/data/narrative.hpp"
#include "mqir/geometry/trace_geometry.hpp"

namespace mqir::data {

inline constexpr std::array<std::string_view, 6> kShapeNames = {"circle", "square", "triangle",
                                                                "star",   "diamond", "cross"};
inline constexpr std::array<std::string_view, 6> kColorNames = {"red",    "green",  "blue",
                                                                "yellow", "purple", "orange"};

struct SyntheticConfig {
  std::size_t scenes = 256;
  std::size_t group_size = 4;
  std::size_t grid = 4;               // grid x grid cells
  std::size_t objects_per_scene = 3;
  std::uint32_t global_dim = 64;
  std::uint32_t region_dim = 64;
  std::uint32_t regions = 16;
  double feature_noise = 0.1;         // std of Gaussian noise on region features
  double trace_noise = 0.02;          // std of Gaussian noise on trace points
  double word_duration = 0.35;        // seconds a word is spoken
  double word_gap = 0.05;             // silence between words
  double sample_rate = 20.0;          // trace samples per second
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on an unusable combination.
  void validate() const;
};

struct SceneObject {
  std::size_t shape = 0;
  std::size_t color = 0;
  std::size_t row = 0;
  std::size_t col = 0;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
  std::string image_id;
  std::size_t group = 0;
  std::size_t grid = 0;
  std::vector<SceneObject> objects;  // caption order

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct SyntheticCorpus {
  std::vector<Scene> scenes;
  std::vector<NarrativeRecord> narratives;  // parallel to scenes
  FeatureSet features;                      // same order as scenes
};

/// Normalised box of grid cell (row, col); rows grow downwards.
geometry::TraceBox cell_box(std::size_t row, std::size_t col, std::size_t grid);

std::string object_phrase(const SceneObject& object);

SyntheticCorpus generate_synthetic(const SyntheticConfig& config);

struct GroupSplit {
  std::vector<std::string> train;
  std::vector<std::string> eval;
};

/// Assigns whole groups to the evaluation side. Without a seed the last
/// `eval_groups` groups are held out; with one, the held-out groups are drawn
/// at random.
GroupSplit split_by_groups(const std::vector<Scene>& scenes, std::size_t eval_groups,
                           std::optional<std::uint64_t> shuffle_seed = std::nullopt);

/// One JSON object per line: image_id, group, grid, objects [[shape, color, row, col]].
void save_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes);
std::vector<Scene> load_scenes(const std::filesystem::path& path);

}  // namespace mqir::data
