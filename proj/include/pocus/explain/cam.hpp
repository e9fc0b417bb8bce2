#pragma once

#include <opencv2/core.hpp>
#include <span>
#include <string>
#include <vector>

#include "pocus/models/classifier.hpp"
#include "pocus/types.hpp"

namespace pocus::explain {

enum class CamSource { kCam, kGradCam };
std::string to_string(CamSource s);

// Non-negative activation grid, row-major (y, x).
struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<float> values;
  int class_id = 0;
  CamSource source = CamSource::kCam;
  bool zero = false;  // identically zero map

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  float max() const;
};

// Rectified weighted channel sum of maps (h, w, C), no upsampling.
Heatmap weighted_map(const nn::Tensor& maps, std::span<const float> weights, int class_id, CamSource source);

// Separable linear interpolation with one knot per cell, placed on a pixel
// inside the cell's footprint. Outputs are convex combinations of cell
// values, so the maximum stays in the footprint of the maximal cell.
Heatmap upsample(const Heatmap& low, int size = kFrameSize);

// image is (224, 224, 3) or (1, 224, 224, 3). class_id < 0 selects the
// predicted class. UnsupportedError unless the head is GAP -> dense.
Heatmap cam(const models::Classifier& model, const nn::Tensor& image, int class_id);

// Channel weights are the spatial mean of d logit[class] / d features.
// UnsupportedError for models without (h, w, C) feature maps.
Heatmap grad_cam(const models::Classifier& model, const nn::Tensor& image, int class_id);

// cam for GAP heads, grad_cam otherwise.
Heatmap model_heatmap(const models::Classifier& model, const nn::Tensor& image, int class_id);
// Cell-wise mean of the members' model_heatmap maps. class_id must be >= 0
// so every member explains the same class.
Heatmap ensemble_heatmap(std::span<const models::Classifier* const> models, const nn::Tensor& image, int class_id);

// Grad-CAM channel weights from a feature gradient (h, w, C) or (1, h, w, C).
std::vector<float> spatial_mean(const nn::Tensor& gradient);

struct MaxPoint {
  int x = 0;
  int y = 0;
  bool uniform = false;  // constant map; (0, 0) reported
};
// Global maximum; ties resolve in raster order (smallest y, then x).
MaxPoint max_activation_point(const Heatmap& hm);

// Heatmap scaled by its maximum, JET colour-mapped and blended:
// out = (1 - alpha) * image + alpha * colour. 8-bit BGR result.
cv::Mat overlay(const nn::Tensor& image, const Heatmap& hm, double alpha);
// JET colour image of the normalised heatmap, 8-bit BGR.
cv::Mat colorize(const Heatmap& hm);

double cosine_similarity(std::span<const float> a, std::span<const float> b);

}  // namespace pocus::explain
