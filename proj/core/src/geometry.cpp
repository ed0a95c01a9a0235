#include "crackseg/geometry.hpp"

#include <algorithm>
#include <stdexcept>
#include <tuple>

namespace crackseg {

Box clip_box(const Box& b, double width, double height) {
  Box out;
  out.x1 = std::clamp(b.x1, 0.0, width);
  out.y1 = std::clamp(b.y1, 0.0, height);
  out.x2 = std::clamp(b.x2, 0.0, width);
  out.y2 = std::clamp(b.y2, 0.0, height);
  return out;
}

double box_iou(const Box& a, const Box& b) {
  if (a.degenerate() || b.degenerate()) throw std::invalid_argument("box_iou: degenerate box");
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double iw = std::max(0.0, ix2 - ix1);
  const double ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

double mask_iou(const Mask& a, const Mask& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw std::invalid_argument("mask_iou: shape mismatch");
  int64_t inter = 0, uni = 0;
  const auto& ra = a.raw();
  const auto& rb = b.raw();
  for (size_t i = 0; i < ra.size(); ++i) {
    inter += (ra[i] && rb[i]) ? 1 : 0;
    uni += (ra[i] || rb[i]) ? 1 : 0;
  }
  if (uni == 0) throw std::invalid_argument("mask_iou: both masks empty");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Box tight_bbox(const Mask& mask) {
  int64_t min_r = mask.height(), max_r = -1, min_c = mask.width(), max_c = -1;
  for (int64_t r = 0; r < mask.height(); ++r)
    for (int64_t c = 0; c < mask.width(); ++c)
      if (mask.at(r, c)) {
        min_r = std::min(min_r, r);
        max_r = std::max(max_r, r);
        min_c = std::min(min_c, c);
        max_c = std::max(max_c, c);
      }
  if (max_r < 0) throw std::invalid_argument("tight_bbox: empty mask");
  return Box{static_cast<double>(min_c), static_cast<double>(min_r), static_cast<double>(max_c + 1),
             static_cast<double>(max_r + 1)};
}

std::vector<int64_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                         double iou_threshold) {
  std::vector<int64_t> order(boxes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    const Box& ba = boxes[static_cast<size_t>(a)];
    const Box& bb = boxes[static_cast<size_t>(b)];
    return std::tie(ba.x1, ba.y1, ba.x2, ba.y2) < std::tie(bb.x1, bb.y1, bb.x2, bb.y2);
  });
  std::vector<int64_t> keep;
  std::vector<char> suppressed(boxes.size(), 0);
  for (size_t i = 0; i < order.size(); ++i) {
    const int64_t a = order[i];
    if (suppressed[static_cast<size_t>(a)]) continue;
    keep.push_back(a);
    for (size_t j = i + 1; j < order.size(); ++j) {
      const int64_t b = order[j];
      if (suppressed[static_cast<size_t>(b)]) continue;
      if (box_iou(boxes[static_cast<size_t>(a)], boxes[static_cast<size_t>(b)]) > iou_threshold)
        suppressed[static_cast<size_t>(b)] = 1;
    }
  }
  return keep;
}

bool point_in_polygon(double x, double y, const std::vector<std::pair<double, double>>& poly) {
  bool inside = false;
  const size_t n = poly.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[i].first, yi = poly[i].second;
    const double xj = poly[j].first, yj = poly[j].second;
    if ((yi > y) != (yj > y)) {
      const double x_cross = (xj - xi) * (y - yi) / (yj - yi) + xi;
      if (x < x_cross) inside = !inside;
    }
  }
  return inside;
}

}  // namespace crackseg
