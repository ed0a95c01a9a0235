#include "crackseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crackseg {

namespace {

int64_t sample_height(const Sample& s) { return s.image.size(1); }
int64_t sample_width(const Sample& s) { return s.image.size(2); }

}  // namespace

Sample hflip(const Sample& sample) {
  const int64_t h = sample_height(sample), w = sample_width(sample);
  Sample out;
  out.scene_level = sample.scene_level;
  out.image = Tensor({3, h, w});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t r = 0; r < h; ++r)
      for (int64_t x = 0; x < w; ++x) out.image.at3(c, r, x) = sample.image.at3(c, r, w - 1 - x);
  for (const auto& m : sample.masks) {
    Mask fm(h, w);
    for (int64_t r = 0; r < h; ++r)
      for (int64_t x = 0; x < w; ++x) fm.at(r, x) = m.at(r, w - 1 - x);
    out.masks.push_back(std::move(fm));
  }
  for (const auto& b : sample.boxes)
    out.boxes.push_back(Box{static_cast<double>(w) - b.x2, b.y1, static_cast<double>(w) - b.x1,
                            b.y2});
  return out;
}

Sample vflip(const Sample& sample) {
  const int64_t h = sample_height(sample), w = sample_width(sample);
  Sample out;
  out.scene_level = sample.scene_level;
  out.image = Tensor({3, h, w});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t r = 0; r < h; ++r)
      for (int64_t x = 0; x < w; ++x) out.image.at3(c, r, x) = sample.image.at3(c, h - 1 - r, x);
  for (const auto& m : sample.masks) {
    Mask fm(h, w);
    for (int64_t r = 0; r < h; ++r)
      for (int64_t x = 0; x < w; ++x) fm.at(r, x) = m.at(h - 1 - r, x);
    out.masks.push_back(std::move(fm));
  }
  for (const auto& b : sample.boxes)
    out.boxes.push_back(Box{b.x1, static_cast<double>(h) - b.y2, b.x2,
                            static_cast<double>(h) - b.y1});
  return out;
}

Sample rotate90(const Sample& sample) {
  // Clockwise quarter turn: point (x, y) maps to (H - y, x), so the output is
  // W tall and H wide.
  const int64_t h = sample_height(sample), w = sample_width(sample);
  Sample out;
  out.scene_level = sample.scene_level;
  out.image = Tensor({3, w, h});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t r = 0; r < h; ++r)
      for (int64_t x = 0; x < w; ++x) out.image.at3(c, x, h - 1 - r) = sample.image.at3(c, r, x);
  for (const auto& m : sample.masks) {
    Mask fm(w, h);
    for (int64_t r = 0; r < h; ++r)
      for (int64_t x = 0; x < w; ++x) fm.at(x, h - 1 - r) = m.at(r, x);
    out.masks.push_back(std::move(fm));
  }
  for (const auto& b : sample.boxes)
    out.boxes.push_back(Box{static_cast<double>(h) - b.y2, b.x1, static_cast<double>(h) - b.y1,
                            b.x2});
  return out;
}

Sample crop(const Sample& sample, int64_t x0, int64_t y0, int64_t w, int64_t h) {
  const int64_t ih = sample_height(sample), iw = sample_width(sample);
  if (w < 1 || h < 1 || x0 < 0 || y0 < 0 || x0 + w > iw || y0 + h > ih)
    throw std::invalid_argument("crop: window outside image");
  Sample out;
  out.scene_level = sample.scene_level;
  out.image = Tensor({3, h, w});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t r = 0; r < h; ++r)
      for (int64_t x = 0; x < w; ++x) out.image.at3(c, r, x) = sample.image.at3(c, y0 + r, x0 + x);
  const bool had_instances = !sample.masks.empty();
  for (const auto& m : sample.masks) {
    Mask cm(h, w);
    int64_t count = 0;
    for (int64_t r = 0; r < h; ++r)
      for (int64_t x = 0; x < w; ++x) {
        cm.at(r, x) = m.at(y0 + r, x0 + x);
        count += cm.at(r, x);
      }
    if (count == 0) continue;
    out.boxes.push_back(tight_bbox(cm));
    out.masks.push_back(std::move(cm));
  }
  if (had_instances && out.masks.empty()) out.flagged_empty = true;
  return out;
}

Sample apply(const AugmentPolicy& policy, const Sample& sample, Rng& draw) {
  if (sample.masks.size() != sample.boxes.size())
    throw std::invalid_argument("apply: masks and boxes length mismatch");
  Sample current = sample;
  for (const auto& op : policy.ops) {
    if (op.p < 0.0 || op.p > 1.0) throw std::invalid_argument("apply: probability outside [0, 1]");
    if (!draw.bernoulli(op.p)) continue;
    const bool was_flagged = current.flagged_empty;
    switch (op.kind) {
      case AugmentKind::hflip:
        current = hflip(current);
        break;
      case AugmentKind::vflip:
        current = vflip(current);
        break;
      case AugmentKind::rotate90:
        current = rotate90(current);
        break;
      case AugmentKind::random_crop: {
        if (op.min_fraction <= 0.0 || op.min_fraction > 1.0)
          throw std::invalid_argument("apply: min_fraction outside (0, 1]");
        const int64_t ih = sample_height(current), iw = sample_width(current);
        const int64_t min_w = std::max<int64_t>(
            1, static_cast<int64_t>(std::ceil(op.min_fraction * static_cast<double>(iw))));
        const int64_t min_h = std::max<int64_t>(
            1, static_cast<int64_t>(std::ceil(op.min_fraction * static_cast<double>(ih))));
        const int64_t w = min_w + static_cast<int64_t>(draw.uniform_int(
                                      static_cast<uint64_t>(iw - min_w + 1)));
        const int64_t h = min_h + static_cast<int64_t>(draw.uniform_int(
                                      static_cast<uint64_t>(ih - min_h + 1)));
        const int64_t x0 = static_cast<int64_t>(draw.uniform_int(static_cast<uint64_t>(iw - w + 1)));
        const int64_t y0 = static_cast<int64_t>(draw.uniform_int(static_cast<uint64_t>(ih - h + 1)));
        current = crop(current, x0, y0, w, h);
        break;
      }
    }
    current.flagged_empty = current.flagged_empty || was_flagged;
  }
  return current;
}

}  // namespace crackseg
