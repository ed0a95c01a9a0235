#pragma once

#include <string>
#include <vector>

#include "crackseg/heads.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

// Decodes an 8-bit raster image into a (3,H,W) tensor with values in [0, 1],
// channels in RGB order.
Tensor load_image_rgb(const std::string& path);

// Writes a (3,H,W) tensor in [0, 1] as an 8-bit PNG (or whatever the path
// extension selects).
void save_image_rgb(const Tensor& image, const std::string& path);

// Copies the image and draws each detection's mask (alpha-blended) and box
// outline in a distinct color.
Tensor render_overlay(const Tensor& image, const std::vector<Detection>& detections);

}  // namespace crackseg
