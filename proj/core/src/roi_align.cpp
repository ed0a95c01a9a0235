#include "crackseg/roi_align.hpp"

#include <stdexcept>

namespace crackseg {

Tensor roi_align(const Tensor& feature, const Box& roi, int output_size, int samples_per_bin) {
  nn::Graph g(false);
  nn::NodePtr leaf = nn::make_leaf(feature, false);
  return g.roi_align(leaf, roi, output_size, samples_per_bin)->value;
}

Box scale_box(const Box& box, double factor) {
  return Box{box.x1 * factor, box.y1 * factor, box.x2 * factor, box.y2 * factor};
}

nn::NodePtr adaptive_feature_pooling(nn::Graph& g, const FeaturePyramid& pyramid, const Box& roi,
                                     int output_size, int samples_per_bin) {
  if (pyramid.levels.empty()) throw std::invalid_argument("adaptive_feature_pooling: no levels");
  if (roi.degenerate()) throw std::invalid_argument("adaptive_feature_pooling: degenerate roi");
  nn::NodePtr fused;
  for (size_t i = 0; i < pyramid.levels.size(); ++i) {
    const Box scaled = scale_box(roi, 1.0 / pyramid.strides[i]);
    nn::NodePtr pooled = g.roi_align(pyramid.levels[i], scaled, output_size, samples_per_bin);
    fused = fused ? g.elem_max(fused, pooled) : pooled;
  }
  return fused;
}

}  // namespace crackseg
