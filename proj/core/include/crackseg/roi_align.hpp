#pragma once

#include "crackseg/backbones.hpp"
#include "crackseg/geometry.hpp"
#include "crackseg/graph.hpp"
#include "crackseg/tensor.hpp"

namespace crackseg {

// Pools the RoI onto an output_size x output_size grid. Every bin averages
// samples_per_bin^2 bilinear samples taken at regular positions inside the
// bin; coordinates are never quantized. The roi is given in the feature
// map's own coordinate system.
Tensor roi_align(const Tensor& feature, const Box& roi, int output_size, int samples_per_bin);

// RoIAligns the (image-coordinate) roi at every pyramid level and fuses the
// per-level grids by element-wise max.
nn::NodePtr adaptive_feature_pooling(nn::Graph& g, const FeaturePyramid& pyramid, const Box& roi,
                                     int output_size, int samples_per_bin);

// Maps an image-coordinate box onto a feature level by dividing by stride.
Box scale_box(const Box& box, double factor);

}  // namespace crackseg
