#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace mqir::geometry {

/// One pointer sample: normalised canvas position and seconds since the
/// session started.
struct TracePoint {
  double x = 0.0;
  double y = 0.0;
  double t = 0.0;

  friend bool operator==(const TracePoint&, const TracePoint&) = default;
};

/// Time-ordered pointer samples.
struct MouseTrace {
  std::vector<TracePoint> points;

  friend bool operator==(const MouseTrace&, const MouseTrace&) = default;
};

/// A vocabulary id with the interval of the word it came from.
struct TimedToken {
  std::int32_t token_id = 0;
  double t_start = 0.0;
  double t_end = 0.0;

  friend bool operator==(const TimedToken&, const TimedToken&) = default;
};

/// Normalised box in the canonical order (xmin, ymin, xmax, ymax, area).
/// The same layout is used for image regions and for trace boxes.
struct TraceBox {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 1.0;
  double ymax = 1.0;
  double area = 1.0;

  static TraceBox whole_canvas() { return {0.0, 0.0, 1.0, 1.0, 1.0}; }
  static TraceBox from_corners(double xmin, double ymin, double xmax, double ymax);

  std::array<float, 5> as_features() const;

  friend bool operator==(const TraceBox&, const TraceBox&) = default;
};

inline constexpr double kDefaultTemporalPadding = 0.1;  // seconds
inline constexpr double kDefaultSpatialPadding = 0.05;  // canvas fraction

struct Padding {
  double temporal = kDefaultTemporalPadding;
  double spatial = kDefaultSpatialPadding;
};

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

double clip_unit(double v);

/// Clips coordinates to [0, 1]; timestamps are left untouched.
TracePoint clip_point(TracePoint p);

/// Throws GeometryError unless timestamps are non-decreasing and non-negative.
void validate_trace(const MouseTrace& trace);

/// Points with t in the closed interval [t1 - t_p, t2 + t_p], order preserved.
std::vector<TracePoint> slice_trace(const MouseTrace& trace, double t1, double t2,
                                    double temporal_padding);

/// Tightest box around `points`, grown by `spatial_padding` on every side and
/// clipped to the unit square. Throws GeometryError on an empty list.
TraceBox box_from_points(std::span<const TracePoint> points, double spatial_padding);

/// One box per token; a token whose padded interval covers no point gets the
/// whole-canvas box.
std::vector<TraceBox> boxes_for_query(std::span<const TimedToken> tokens, const MouseTrace& trace,
                                      Padding padding);

}  // namespace mqir::geometry
