#include "mqir/service/render.hpp"

#include <png.h>

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mqir::service {

namespace {

// Same order as data::kColorNames.
constexpr std::array<std::array<std::uint8_t, 3>, 6> kPalette{{
    {220, 40, 40},   // red
    {40, 160, 60},   // green
    {40, 80, 220},   // blue
    {235, 200, 20},  // yellow
    {140, 60, 180},  // purple
    {245, 140, 30},  // orange
}};

struct Point {
  double x;
  double y;
};

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) {
      in = !in;
    }
  }
  return in;
}

/// Membership test in shape-local coordinates u, v in [-1, 1].
bool inside_shape(std::size_t shape, double u, double v) {
  switch (shape) {
    case 0:  // circle
      return u * u + v * v <= 1.0;
    case 1:  // square
      return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case 2: {  // triangle, apex up
      static const std::vector<Point> tri{{0.0, -1.0}, {1.0, 0.85}, {-1.0, 0.85}};
      return inside_polygon(tri, u, v);
    }
    case 3: {  // five-pointed star
      static const std::vector<Point> star = [] {
        std::vector<Point> p;
        for (int i = 0; i < 10; ++i) {
          const double r = i % 2 == 0 ? 1.0 : 0.42;
          const double a = -std::numbers::pi / 2 + i * std::numbers::pi / 5;
          p.push_back({r * std::cos(a), r * std::sin(a)});
        }
        return p;
      }();
      return inside_polygon(star, u, v);
    }
    case 4:  // diamond
      return std::abs(u) + std::abs(v) <= 1.0;
    case 5:  // cross
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    default:
      throw std::invalid_argument("render: unknown shape index " + std::to_string(shape));
  }
}

}  // namespace

Raster render_scene(const data::Scene& scene, std::size_t size) {
  Raster r{size, size, std::vector<std::uint8_t>(3 * size * size, 255)};
  for (const auto& obj : scene.objects) {
    if (obj.color >= kPalette.size()) {
      throw std::invalid_argument("render: unknown color index " + std::to_string(obj.color));
    }
    const auto cell = data::cell_box(obj.row, obj.col, scene.grid);
    // Pixel centres strictly inside the cell rectangle.
    const auto x0 = static_cast<std::size_t>(std::ceil(cell.xmin * static_cast<double>(size)));
    const auto x1 = static_cast<std::size_t>(std::floor(cell.xmax * static_cast<double>(size)));
    const auto y0 = static_cast<std::size_t>(std::ceil(cell.ymin * static_cast<double>(size)));
    const auto y1 = static_cast<std::size_t>(std::floor(cell.ymax * static_cast<double>(size)));
    const double cx = 0.5 * (cell.xmin + cell.xmax) * static_cast<double>(size);
    const double cy = 0.5 * (cell.ymin + cell.ymax) * static_cast<double>(size);
    // Shapes fill 70% of the cell.
    const double half = 0.35 * (cell.xmax - cell.xmin) * static_cast<double>(size);
    for (std::size_t y = y0; y < std::min(y1, size); ++y) {
      for (std::size_t x = x0; x < std::min(x1, size); ++x) {
        const double u = (static_cast<double>(x) + 0.5 - cx) / half;
        const double v = (static_cast<double>(y) + 0.5 - cy) / half;
        if (inside_shape(obj.shape, u, v)) {
          std::uint8_t* p = r.rgb.data() + 3 * (y * size + x);
          p[0] = kPalette[obj.color][0];
          p[1] = kPalette[obj.color][1];
          p[2] = kPalette[obj.color][2];
        }
      }
    }
  }
  return r;
}

std::string encode_png(const Raster& raster) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) {
    throw std::runtime_error("png: cannot create writer");
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png: cannot create info");
  }
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t length) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), length);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width), static_cast<png_uint_32>(raster.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < raster.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(raster.rgb.data() + 3 * y * raster.width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

SceneStore::SceneStore(std::vector<data::Scene> scenes) : scenes_(std::move(scenes)) {
  for (std::size_t i = 0; i < scenes_.size(); ++i) {
    if (!lookup_.emplace(scenes_[i].image_id, i).second) {
      throw std::invalid_argument("duplicate scene id '" + scenes_[i].image_id + "'");
    }
  }
}

const data::Scene* SceneStore::find(const std::string& image_id) const {
  auto it = lookup_.find(image_id);
  return it == lookup_.end() ? nullptr : &scenes_[it->second];
}

}  // namespace mqir::service
