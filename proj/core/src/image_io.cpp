#include "crackseg/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "crackseg/errors.hpp"

namespace crackseg {

Tensor load_image_rgb(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw ValidationError("cannot read image: " + path);
  Tensor out({3, bgr.rows, bgr.cols});
  for (int r = 0; r < bgr.rows; ++r) {
    const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c) {
      out.at3(0, r, c) = row[c][2] / 255.0;
      out.at3(1, r, c) = row[c][1] / 255.0;
      out.at3(2, r, c) = row[c][0] / 255.0;
    }
  }
  return out;
}

void save_image_rgb(const Tensor& image, const std::string& path) {
  if (image.dim() != 3 || image.size(0) != 3)
    throw std::invalid_argument("save_image_rgb: expects a (3,H,W) tensor");
  const int h = static_cast<int>(image.size(1));
  const int w = static_cast<int>(image.size(2));
  cv::Mat bgr(h, w, CV_8UC3);
  for (int r = 0; r < h; ++r) {
    cv::Vec3b* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < w; ++c) {
      auto to8 = [&](int ch) {
        const double v = std::clamp(image.at3(ch, r, c), 0.0, 1.0);
        return static_cast<uint8_t>(std::lround(v * 255.0));
      };
      row[c] = cv::Vec3b(to8(2), to8(1), to8(0));
    }
  }
  if (!cv::imwrite(path, bgr)) throw std::runtime_error("cannot write image: " + path);
}

Tensor render_overlay(const Tensor& image, const std::vector<Detection>& detections) {
  static const std::array<std::array<double, 3>, 6> palette = {{{0.90, 0.12, 0.15},
                                                                {0.13, 0.55, 0.95},
                                                                {0.15, 0.80, 0.25},
                                                                {0.95, 0.75, 0.10},
                                                                {0.70, 0.25, 0.85},
                                                                {0.95, 0.45, 0.10}}};
  Tensor out = image;
  const int64_t h = image.size(1), w = image.size(2);
  for (size_t i = 0; i < detections.size(); ++i) {
    const auto& color = palette[i % palette.size()];
    const Detection& det = detections[i];

    for (int64_t r = 0; r < h; ++r)
      for (int64_t c = 0; c < w; ++c) {
        if (!det.mask.at(r, c)) continue;
        for (int ch = 0; ch < 3; ++ch)
          out.at3(ch, r, c) = 0.5 * out.at3(ch, r, c) + 0.5 * color[ch];
      }

    const int64_t x1 = std::clamp<int64_t>(std::llround(det.box.x1), 0, w);
    const int64_t y1 = std::clamp<int64_t>(std::llround(det.box.y1), 0, h);
    const int64_t x2 = std::clamp<int64_t>(std::llround(det.box.x2), 0, w);
    const int64_t y2 = std::clamp<int64_t>(std::llround(det.box.y2), 0, h);
    auto paint = [&](int64_t r, int64_t c) {
      if (r < 0 || r >= h || c < 0 || c >= w) return;
      for (int ch = 0; ch < 3; ++ch) out.at3(ch, r, c) = color[ch];
    };
    for (int64_t c = x1; c < x2; ++c)
      for (int64_t t = 0; t < 2; ++t) {
        paint(y1 + t, c);
        paint(y2 - 1 - t, c);
      }
    for (int64_t r = y1; r < y2; ++r)
      for (int64_t t = 0; t < 2; ++t) {
        paint(r, x1 + t);
        paint(r, x2 - 1 - t);
      }
  }
  return out;
}

}  // namespace crackseg
