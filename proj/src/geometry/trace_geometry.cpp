#include "mqir/geometry/trace_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mqir::geometry {

double clip_unit(double v) { return std::clamp(v, 0.0, 1.0); }

TracePoint clip_point(TracePoint p) {
  p.x = clip_unit(p.x);
  p.y = clip_unit(p.y);
  return p;
}

TraceBox TraceBox::from_corners(double xmin, double ymin, double xmax, double ymax) {
  return {xmin, ymin, xmax, ymax, (xmax - xmin) * (ymax - ymin)};
}

std::array<float, 5> TraceBox::as_features() const {
  return {static_cast<float>(xmin), static_cast<float>(ymin), static_cast<float>(xmax),
          static_cast<float>(ymax), static_cast<float>(area)};
}

void validate_trace(const MouseTrace& trace) {
  for (std::size_t i = 0; i < trace.points.size(); ++i) {
    const double t = trace.points[i].t;
    if (!std::isfinite(t) || t < 0.0) {
      throw GeometryError("trace point " + std::to_string(i) + " has invalid time " +
                          std::to_string(t));
    }
    if (i > 0 && t < trace.points[i - 1].t) {
      throw GeometryError("trace timestamps decrease at point " + std::to_string(i));
    }
  }
}

std::vector<TracePoint> slice_trace(const MouseTrace& trace, double t1, double t2,
                                    double temporal_padding) {
  if (t1 > t2 || temporal_padding < 0.0) {
    throw GeometryError("slice_trace needs t1 <= t2 and non-negative padding");
  }
  const double lo = t1 - temporal_padding;
  const double hi = t2 + temporal_padding;
  const auto& pts = trace.points;
  // Timestamps are sorted, so the slice is one contiguous run.
  auto first = std::lower_bound(pts.begin(), pts.end(), lo,
                                [](const TracePoint& p, double v) { return p.t < v; });
  auto last = std::upper_bound(first, pts.end(), hi,
                               [](double v, const TracePoint& p) { return v < p.t; });
  return {first, last};
}

TraceBox box_from_points(std::span<const TracePoint> points, double spatial_padding) {
  if (points.empty()) {
    throw GeometryError("box_from_points needs at least one point");
  }
  if (spatial_padding < 0.0) {
    throw GeometryError("spatial padding must be non-negative");
  }
  double xmin = points.front().x;
  double xmax = xmin;
  double ymin = points.front().y;
  double ymax = ymin;
  for (const TracePoint& p : points) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  return TraceBox::from_corners(clip_unit(xmin - spatial_padding), clip_unit(ymin - spatial_padding),
                                clip_unit(xmax + spatial_padding), clip_unit(ymax + spatial_padding));
}

std::vector<TraceBox> boxes_for_query(std::span<const TimedToken> tokens, const MouseTrace& trace,
                                      Padding padding) {
  std::vector<TraceBox> boxes;
  boxes.reserve(tokens.size());
  for (const TimedToken& tok : tokens) {
    const std::vector<TracePoint> seg =
        slice_trace(trace, tok.t_start, tok.t_end, padding.temporal);
    boxes.push_back(seg.empty() ? TraceBox::whole_canvas() : box_from_points(seg, padding.spatial));
  }
  return boxes;
}

}  // namespace mqir::geometry
