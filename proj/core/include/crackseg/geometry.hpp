#pragma once

#include <cstdint>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

// Axis-aligned box, (x1, y1, x2, y2) in continuous pixel coordinates.
// x2/y2 are exclusive bounds; a pixel (row r, col c) spans [c,c+1)x[r,r+1).
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool degenerate() const { return !(width() > 0.0) || !(height() > 0.0); }
  bool operator==(const Box& o) const { return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2; }
};

Box clip_box(const Box& b, double width, double height);

// Intersection over union of positive-area boxes; throws on degenerate input.
double box_iou(const Box& a, const Box& b);

// |a&b| / |a|b|; throws when both masks are empty or shapes differ.
double mask_iou(const Mask& a, const Mask& b);

// Tight bounds of the set pixels, integer-grid box (min_c, min_r, max_c+1, max_r+1).
// Throws on an empty mask.
Box tight_bbox(const Mask& mask);

/// Greedy NMS. Order: score descending, ties broken by lexicographically
// smaller (x1,y1,x2,y2), so the result is independent of input order.
std::vector<int64_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                         double iou_threshold);

// Pixel-center even-odd point-in-polygon test.
bool point_in_polygon(double x, double y, const std::vector<std::pair<double, double>>& poly);

}  // namespace crackseg
