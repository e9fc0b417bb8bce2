#include "pocus/models/video.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstring>

#include "pocus/data/frames.hpp"
#include "pocus/error.hpp"
#include "pocus/util.hpp"

namespace pocus::models {

std::vector<VideoChunk> chunk_frames(const std::string& video_id, Label label,
                                     std::span<const nn::Tensor> frames, int chunk_len) {
  if (chunk_len <= 0) throw ConfigError("chunk_len must be positive");
  std::vector<VideoChunk> out;
  const int n = static_cast<int>(frames.size()) / chunk_len;
  if (n == 0) {
    spdlog::warn("video {}: {} frames, too short for one chunk of {}", video_id, frames.size(),
                 chunk_len);
    return out;
  }
  for (int c = 0; c < n; ++c) {
    const auto first = frames.subspan(static_cast<std::size_t>(c) * chunk_len, chunk_len);
    for (const auto& f : first) {
      if (!f.same_shape(first[0])) {
        throw ValidationError("video " + video_id + ": frames of a chunk differ in shape");
      }
    }
    out.push_back(VideoChunk{video_id, c, label, nn::stack(first)});
  }
  return out;
}

std::vector<VideoChunk> chunk_video(const data::RecordingMeta& rec, double target_hz, int chunk_len) {
  if (rec.kind != MediaKind::kVideo) throw ValidationError(rec.id + " is not a video");
  std::vector<nn::Tensor> frames;
  for (const auto& raw : data::extract_frames(rec, target_hz, 0)) {
    frames.push_back(data::preprocess(data::crop_square(raw.image, rec.crop)));
  }
  return chunk_frames(rec.id, rec.label, frames, chunk_len);
}

std::filesystem::path segment_feature_path(const std::filesystem::path& frame_cache_entry) {
  std::filesystem::path p = frame_cache_entry;
  p.replace_extension(".feat");
  return p;
}

void write_segment_features(const std::filesystem::path& path, std::span<const float> features) {
  for (float v : features) {
    if (!std::isfinite(v)) throw ValidationError("non-finite feature value for " + path.string());
  }
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(features.data()),
                                           features.size_bytes()));
}

std::vector<float> read_segment_features(const std::filesystem::path& path, int expected_dim) {
  const std::string bytes = read_file(path);
  if (bytes.size() != static_cast<std::size_t>(expected_dim) * sizeof(float)) {
    throw ValidationError(fmt::format("{}: {} bytes, expected {} float32 values", path.string(),
                                      bytes.size(), expected_dim));
  }
  std::vector<float> out(expected_dim);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  for (float v : out) {
    if (!std::isfinite(v)) throw ValidationError(path.string() + ": non-finite feature value");
  }
  return out;
}

}  // namespace pocus::models
