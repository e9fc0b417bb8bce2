#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <random>

#include "pocus/nn/tensor.hpp"

namespace pocus::data {

struct FrameSample;

// Random transforms applied to training frames. Flips fire with
// probability 1/2 each when enabled; rotation and translation are drawn
// uniformly from [-bound, bound].
struct AugmentationPolicy {
  bool h_flip = true;
  bool v_flip = true;
  double max_rotation_deg = 10.0;
  double max_translation_frac = 0.10;
  std::uint64_t rng_seed = 0;

  static AugmentationPolicy identity();
  bool is_identity() const;
  // Throws ConfigError when a bound is negative or above 10 deg / 0.10.
  void validate() const;
};

nlohmann::json to_json(const AugmentationPolicy& p);
// Keys h_flip, v_flip, max_rotation_deg, max_translation_frac, seed; unknown
// keys and out-of-range bounds are ConfigErrors.
AugmentationPolicy policy_from_json(const nlohmann::json& j);

// One concrete draw of the policy.
struct AugmentParams {
  bool h_flip = false;
  bool v_flip = false;
  double rotation_deg = 0.0;
  double shift_x_frac = 0.0;  // fraction of width, positive moves content right
  double shift_y_frac = 0.0;

  bool is_identity() const;
};

AugmentParams draw_augment_params(const AugmentationPolicy& policy, std::mt19937_64& rng);

// Applies params to an (H, W, C) image. Rotation is about the centre with
// bilinear sampling; uncovered pixels replicate the border.
nn::Tensor apply_augmentation(const nn::Tensor& image, const AugmentParams& params);

// Applies the same draw to every frame of a (T, H, W, C) clip, or to a
// single (H, W, C) image.
nn::Tensor apply_augmentation_clip(const nn::Tensor& item, const AugmentParams& params);

// Seeded by (policy.rng_seed, video_id, frame_index): the same sample and
// policy always give the same output.
FrameSample augment(const FrameSample& sample, const AugmentationPolicy& policy);

}  // namespace pocus::data
