#pragma once

#include <algorithm>
#include <array>

namespace tacnet {

/// Axis-aligned box in normalized [0,1] frame coordinates, corners (x1,y1)-(x2,y2).
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool valid() const { return x1 < x2 && y1 < y2; }

  static Box from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
  Box clipped() const {
    return {std::clamp(x1, 0.0, 1.0), std::clamp(y1, 0.0, 1.0), std::clamp(x2, 0.0, 1.0), std::clamp(y2, 0.0, 1.0)};
  }
  std::array<double, 4> as_array() const { return {x1, y1, x2, y2}; }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection over union; 0 for disjoint or zero-area boxes.
inline double spatial_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace tacnet
