#include "pocus/data/augment.hpp"

#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "pocus/data/dataset.hpp"
#include "pocus/error.hpp"
#include "pocus/util.hpp"

namespace pocus::data {

nlohmann::json to_json(const AugmentationPolicy& p) {
  return {{"h_flip", p.h_flip},
          {"v_flip", p.v_flip},
          {"max_rotation_deg", p.max_rotation_deg},
          {"max_translation_frac", p.max_translation_frac},
          {"seed", p.rng_seed}};
}

AugmentationPolicy policy_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("augment config must be an object");
  AugmentationPolicy p;
  for (const auto& [k, v] : j.items()) {
    if (k != "h_flip" && k != "v_flip" && k != "max_rotation_deg" && k != "max_translation_frac" && k != "seed") {
      throw ConfigError("unknown key augment." + k);
    }
  }
  try {
    p.h_flip = j.value("h_flip", p.h_flip);
    p.v_flip = j.value("v_flip", p.v_flip);
    p.max_rotation_deg = j.value("max_rotation_deg", p.max_rotation_deg);
    p.max_translation_frac = j.value("max_translation_frac", p.max_translation_frac);
    p.rng_seed = j.value("seed", p.rng_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("augment config: ") + e.what());
  }
  p.validate();
  return p;
}

AugmentationPolicy AugmentationPolicy::identity() {
  AugmentationPolicy p;
  p.h_flip = false;
  p.v_flip = false;
  p.max_rotation_deg = 0.0;
  p.max_translation_frac = 0.0;
  return p;
}

bool AugmentationPolicy::is_identity() const {
  return !h_flip && !v_flip && max_rotation_deg == 0.0 && max_translation_frac == 0.0;
}

void AugmentationPolicy::validate() const {
  if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 10.0)) {
    throw ConfigError("augment: max_rotation_deg must be in [0, 10]");
  }
  if (!(max_translation_frac >= 0.0 && max_translation_frac <= 0.10)) {
    throw ConfigError("augment: max_translation_frac must be in [0, 0.10]");
  }
}

bool AugmentParams::is_identity() const {
  return !h_flip && !v_flip && rotation_deg == 0.0 && shift_x_frac == 0.0 && shift_y_frac == 0.0;
}

AugmentParams draw_augment_params(const AugmentationPolicy& policy, std::mt19937_64& rng) {
  policy.validate();
  // Draw every component unconditionally so that enabling one transform
  // does not shift the random stream of the others.
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const bool hf = coin(rng), vf = coin(rng);
  const double rot = unit(rng), sx = unit(rng), sy = unit(rng);
  AugmentParams p;
  p.h_flip = policy.h_flip && hf;
  p.v_flip = policy.v_flip && vf;
  p.rotation_deg = rot * policy.max_rotation_deg;
  p.shift_x_frac = sx * policy.max_translation_frac;
  p.shift_y_frac = sy * policy.max_translation_frac;
  return p;
}

nn::Tensor apply_augmentation(const nn::Tensor& image, const AugmentParams& params) {
  if (image.rank() != 3) throw ValidationError("apply_augmentation: need (H, W, C) image");
  if (params.is_identity()) return image;
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  cv::Mat src(h, w, CV_32FC(c), const_cast<float*>(image.data()));
  cv::Mat work = src.clone();
  if (params.h_flip && params.v_flip) {
    cv::flip(work, work, -1);
  } else if (params.h_flip) {
    cv::flip(work, work, 1);
  } else if (params.v_flip) {
    cv::flip(work, work, 0);
  }
  if (params.rotation_deg != 0.0 || params.shift_x_frac != 0.0 || params.shift_y_frac != 0.0) {
    const cv::Point2f centre((w - 1) / 2.0f, (h - 1) / 2.0f);
    cv::Mat m = cv::getRotationMatrix2D(centre, params.rotation_deg, 1.0);
    m.at<double>(0, 2) += params.shift_x_frac * w;
    m.at<double>(1, 2) += params.shift_y_frac * h;
    cv::Mat warped;
    cv::warpAffine(work, warped, m, work.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    work = warped;
  }
  nn::Tensor out(image.shape());
  for (int y = 0; y < h; ++y) {
    std::copy_n(work.ptr<float>(y), static_cast<std::size_t>(w) * c,
                out.data() + static_cast<std::size_t>(y) * w * c);
  }
  return out;
}

nn::Tensor apply_augmentation_clip(const nn::Tensor& item, const AugmentParams& params) {
  if (item.rank() == 3) return apply_augmentation(item, params);
  if (item.rank() != 4) throw ValidationError("apply_augmentation_clip: need rank 3 or 4");
  std::vector<nn::Tensor> frames;
  for (int t = 0; t < item.dim(0); ++t) {
    frames.push_back(
        apply_augmentation(item.slice_rows(t, t + 1).reshaped({item.dim(1), item.dim(2), item.dim(3)}),
                           params));
  }
  return nn::stack(frames);
}

FrameSample augment(const FrameSample& sample, const AugmentationPolicy& policy) {
  policy.validate();
  const std::uint64_t key =
      stable_hash(sample.video_id) ^ (static_cast<std::uint64_t>(sample.frame_index) << 32);
  std::mt19937_64 rng(derive_seed(policy.rng_seed, key));
  FrameSample out = sample;
  out.pixels = apply_augmentation(sample.pixels, draw_augment_params(policy, rng));
  return out;
}

}  // namespace pocus::data
