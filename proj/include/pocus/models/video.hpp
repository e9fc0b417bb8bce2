#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pocus/data/manifest.hpp"
#include "pocus/nn/tensor.hpp"
#include "pocus/types.hpp"

namespace pocus::models {

inline constexpr double kChunkHz = 5.0;
inline constexpr int kChunkLen = 5;

// chunk_len consecutive preprocessed frames of one video, (T, 224, 224, 3).
struct VideoChunk {
  std::string video_id;
  int chunk_index = 0;
  Label label = Label::kCovid;
  nn::Tensor frames;
};

// Splits sampled frames into non-overlapping chunks; the remainder is
// dropped. Too few frames gives an empty list and a warning.
std::vector<VideoChunk> chunk_frames(const std::string& video_id, Label label,
                                     std::span<const nn::Tensor> frames, int chunk_len = kChunkLen);

// Samples the whole video at target_hz (no frame cap), crops, preprocesses
// and chunks it.
std::vector<VideoChunk> chunk_video(const data::RecordingMeta& rec, double target_hz = kChunkHz,
                                    int chunk_len = kChunkLen);

// Per-frame segmentation-encoder features: 560 little-endian float32 values
// in <frame cache path with .feat suffix>.
inline constexpr int kSegmentFeatureDim = 560;
std::filesystem::path segment_feature_path(const std::filesystem::path& frame_cache_entry);
void write_segment_features(const std::filesystem::path& path, std::span<const float> features);
// Throws ValidationError on wrong length or non-finite values.
std::vector<float> read_segment_features(const std::filesystem::path& path,
                                         int expected_dim = kSegmentFeatureDim);

}  // namespace pocus::models
