#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mqir/data/synthetic.hpp"

namespace mqir::service {

inline constexpr std::size_t kThumbnailSize = 256;

/// 8-bit RGB raster, row-major from the top-left corner.
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return rgb.data() + 3 * (y * width + x); }
};

/// The scene's objects drawn inside their grid cells on a white canvas.
Raster render_scene(const data::Scene& scene, std::size_t size = kThumbnailSize);

/// PNG bytes of the raster (no timestamps, so identical rasters give
/// identical files).
std::string encode_png(const Raster& raster);

/// Scenes by image id, for serving thumbnails.
class SceneStore {
 public:
  SceneStore() = default;
  explicit SceneStore(std::vector<data::Scene> scenes);

  const data::Scene* find(const std::string& image_id) const;
  std::size_t size() const { return scenes_.size(); }

 private:
  std::vector<data::Scene> scenes_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

}  // namespace mqir::service
