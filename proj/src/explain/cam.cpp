#include "pocus/explain/cam.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <opencv2/imgproc.hpp>

#include "pocus/data/frames.hpp"
#include "pocus/error.hpp"

namespace pocus::explain {

std::string to_string(CamSource s) { return s == CamSource::kCam ? "cam" : "grad_cam"; }

float Heatmap::max() const { return values.empty() ? 0.0f : *std::max_element(values.begin(), values.end()); }

Heatmap weighted_map(const nn::Tensor& maps, std::span<const float> weights, int class_id, CamSource source) {
  if (maps.rank() != 3) throw ValidationError("activation maps must be (h, w, C), got " + nn::shape_string(maps.shape()));
  const int h = maps.dim(0), w = maps.dim(1), c = maps.dim(2);
  if (static_cast<int>(weights.size()) != c) {
    throw ValidationError(fmt::format("{} channel weights for {} channels", weights.size(), c));
  }
  Heatmap hm{h, w, std::vector<float>(static_cast<std::size_t>(h) * w, 0.0f), class_id, source, false};
  for (int p = 0; p < h * w; ++p) {
    double s = 0;
    const float* a = maps.data() + static_cast<std::size_t>(p) * c;
    for (int k = 0; k < c; ++k) s += double(weights[k]) * a[k];
    hm.values[p] = s > 0 ? static_cast<float>(s) : 0.0f;
  }
  hm.zero = hm.max() == 0.0f;
  return hm;
}

namespace {

// Output pixel -> (left cell, weight of right cell). Knot j sits at pixel
// floor((j + 0.5) * size / n), inside the footprint of cell j; constant
// beyond the outer knots.
std::vector<std::pair<int, double>> knot_weights(int n, int size) {
  std::vector<int> knot(n);
  for (int j = 0; j < n; ++j) knot[j] = static_cast<int>(std::floor((j + 0.5) * size / n));
  std::vector<std::pair<int, double>> out(size);
  int j = 0;
  for (int i = 0; i < size; ++i) {
    while (j + 1 < n && knot[j + 1] <= i) ++j;
    if (i <= knot[0]) {
      out[i] = {0, 0.0};
    } else if (j + 1 >= n) {
      out[i] = {n - 1, 0.0};
    } else {
      out[i] = {j, double(i - knot[j]) / (knot[j + 1] - knot[j])};
    }
  }
  return out;
}

}  // namespace

Heatmap upsample(const Heatmap& low, int size) {
  if (low.values.empty()) throw ValidationError("empty heatmap");
  const auto wy = knot_weights(low.height, size), wx = knot_weights(low.width, size);
  Heatmap out = low;
  out.height = out.width = size;
  out.values.assign(static_cast<std::size_t>(size) * size, 0.0f);
  for (int y = 0; y < size; ++y) {
    const auto [y0, fy] = wy[y];
    const int y1 = std::min(y0 + 1, low.height - 1);
    for (int x = 0; x < size; ++x) {
      const auto [x0, fx] = wx[x];
      const int x1 = std::min(x0 + 1, low.width - 1);
      const double top = (1 - fx) * low.at(y0, x0) + fx * low.at(y0, x1);
      const double bottom = (1 - fx) * low.at(y1, x0) + fx * low.at(y1, x1);
      out.values[static_cast<std::size_t>(y) * size + x] = static_cast<float>((1 - fy) * top + fy * bottom);
    }
  }
  return out;
}

namespace {

nn::Tensor as_batch(const models::Classifier& model, const nn::Tensor& image) {
  if (model.config().arch == models::Arch::kVideo3d || model.config().arch == models::Arch::kSegmentEnc) {
    throw UnsupportedError("heatmaps need a frame model with spatial feature maps");
  }
  if (image.rank() == 3) return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  if (image.rank() == 4 && image.dim(0) == 1) return image;
  throw ValidationError("heatmaps take one image, got " + nn::shape_string(image.shape()));
}

int resolve_class(const models::ForwardOutput& out, int class_id, int n_classes) {
  if (class_id < 0) {
    const auto p = out.probabilities.values();
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  }
  if (class_id >= n_classes) throw BoundsError(fmt::format("class {} out of range", class_id));
  return class_id;
}

nn::Tensor first_item(const nn::Tensor& features) {
  std::vector<int> shape(features.shape().begin() + 1, features.shape().end());
  return features.reshaped(shape);
}

}  // namespace

Heatmap cam(const models::Classifier& model, const nn::Tensor& image, int class_id) {
  if (!model.has_gap_head()) {
    throw UnsupportedError(fmt::format("cam needs a GAP -> dense head; {} has none (use grad_cam)",
                                       models::to_string(model.config().arch)));
  }
  const auto out = model.forward_with_features(as_batch(model, image));
  const int c = resolve_class(out, class_id, model.n_classes());
  const nn::Tensor& kernel = model.output_layer().kernel();  // (channels, n_classes)
  std::vector<float> w(kernel.dim(0));
  for (int k = 0; k < kernel.dim(0); ++k) w[k] = kernel[static_cast<std::size_t>(k) * kernel.dim(1) + c];
  return upsample(weighted_map(first_item(out.features), w, c, CamSource::kCam));
}

std::vector<float> spatial_mean(const nn::Tensor& gradient) {
  const nn::Tensor g = gradient.rank() == 4 ? first_item(gradient) : gradient;
  if (g.rank() != 3) throw ValidationError("gradient must be (h, w, C)");
  const int hw = g.dim(0) * g.dim(1), c = g.dim(2);
  std::vector<double> acc(c, 0.0);
  for (int p = 0; p < hw; ++p) {
    for (int k = 0; k < c; ++k) acc[k] += g[static_cast<std::size_t>(p) * c + k];
  }
  std::vector<float> out(c);
  for (int k = 0; k < c; ++k) out[k] = static_cast<float>(acc[k] / hw);
  return out;
}

Heatmap grad_cam(const models::Classifier& model, const nn::Tensor& image, int class_id) {
  const auto out = model.forward_with_features(as_batch(model, image));
  if (out.features.rank() != 4) throw UnsupportedError("grad_cam needs (h, w, C) feature maps");
  const int c = resolve_class(out, class_id, model.n_classes());
  const nn::Tensor grad = model.logit_gradient(out.features, c);
  return upsample(weighted_map(first_item(out.features), spatial_mean(grad), c, CamSource::kGradCam));
}

Heatmap model_heatmap(const models::Classifier& model, const nn::Tensor& image, int class_id) {
  return model.has_gap_head() ? cam(model, image, class_id) : grad_cam(model, image, class_id);
}

Heatmap ensemble_heatmap(std::span<const models::Classifier* const> models, const nn::Tensor& image, int class_id) {
  if (models.empty()) throw ValidationError("ensemble of zero models");
  if (class_id < 0 && models.size() > 1) throw ValidationError("ensemble heatmaps need an explicit class");
  Heatmap acc = model_heatmap(*models[0], image, class_id);
  for (std::size_t m = 1; m < models.size(); ++m) {
    const Heatmap hm = model_heatmap(*models[m], image, class_id);
    for (std::size_t i = 0; i < hm.values.size(); ++i) acc.values[i] += hm.values[i];
  }
  for (float& v : acc.values) v /= static_cast<float>(models.size());
  acc.zero = acc.max() == 0.0f;
  return acc;
}

MaxPoint max_activation_point(const Heatmap& hm) {
  if (hm.values.empty()) throw ValidationError("empty heatmap");
  const auto lo = std::min_element(hm.values.begin(), hm.values.end());
  // first maximum, i.e. raster order (minmax_element would give the last)
  const auto hi = std::max_element(hm.values.begin(), hm.values.end());
  if (*lo == *hi) return {0, 0, true};
  const auto idx = static_cast<int>(hi - hm.values.begin());
  return {idx % hm.width, idx / hm.width, false};
}

cv::Mat colorize(const Heatmap& hm) {
  const float m = hm.max();
  cv::Mat gray(hm.height, hm.width, CV_8U);
  for (int y = 0; y < hm.height; ++y) {
    for (int x = 0; x < hm.width; ++x) {
      const float v = m > 0 ? hm.at(y, x) / m : 0.0f;
      gray.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  cv::Mat colour;
  cv::applyColorMap(gray, colour, cv::COLORMAP_JET);
  return colour;
}

cv::Mat overlay(const nn::Tensor& image, const Heatmap& hm, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must be in [0, 1]");
  const nn::Tensor img = image.rank() == 4 ? first_item(image) : image;
  if (img.rank() != 3 || img.dim(0) != hm.height || img.dim(1) != hm.width) {
    throw ValidationError(fmt::format("image {} does not match heatmap {}x{}", nn::shape_string(img.shape()),
                                      hm.height, hm.width));
  }
  const cv::Mat base = data::to_bgr8(img);
  const cv::Mat colour = colorize(hm);
  cv::Mat out;
  cv::addWeighted(base, 1.0 - alpha, colour, alpha, 0.0, out);
  return out;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ValidationError("cosine of vectors with different lengths");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  if (aa == 0 || bb == 0) return aa == bb ? 1.0 : 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace pocus::explain
