#pragma once

#include <opencv2/core.hpp>
#include <opencv2/videoio.hpp>
#include <optional>
#include <vector>

#include "pocus/data/manifest.hpp"
#include "pocus/nn/tensor.hpp"

namespace pocus::data {

inline constexpr double kDefaultTargetHz = 3.0;
inline constexpr int kDefaultMaxFrames = 30;

struct RawFrame {
  cv::Mat image;  // decoder output, BGR or grayscale
  int index = 0;  // frame number in the source video
  double timestamp = 0.0;  // seconds
};

// Sampling stride in source frames: round(fps / target_hz), at least 1.
// Throws ConfigError when fps < target_hz or either is non-positive.
int frame_stride(double fps, double target_hz);

// Source frame numbers kept from a video of total_frames frames: 0, stride,
// 2*stride, ... truncated to max_frames (max_frames <= 0 disables the cap).
std::vector<int> sampled_indices(int total_frames, double fps, double target_hz, int max_frames);

// Decodes a video and keeps the sampled frames. The cap keeps the head of
// the video. Throws IoError for unreadable files.
std::vector<RawFrame> extract_frames(const RecordingMeta& rec, double target_hz = kDefaultTargetHz,
                                     int max_frames = kDefaultMaxFrames);

// FFmpeg backend when OpenCV has it. Check isOpened().
cv::VideoCapture open_video(const std::filesystem::path& path);

// Same, from an already-opened file path and explicit fps.
std::vector<RawFrame> extract_frames_from_file(const std::filesystem::path& path, double fps,
                                               double target_hz, int max_frames);

// Largest centred square when window is empty, else exactly the window.
// Throws BoundsError when the window leaves the frame, ValidationError when
// it is not square.
cv::Mat crop_square(const cv::Mat& frame, const std::optional<CropWindow>& window = std::nullopt);

// Square image -> (224, 224, 3) RGB tensor in [0, 1]. Downsampling uses area
// averaging; grayscale is replicated to three channels.
nn::Tensor preprocess(const cv::Mat& square);

// Inverse of preprocess for visualisation: (H, W, 3) RGB in [0,1] -> 8-bit BGR.
cv::Mat to_bgr8(const nn::Tensor& pixels);

// Reads a still image (any OpenCV-supported format). Throws IoError.
cv::Mat read_image(const std::filesystem::path& path);

}  // namespace pocus::data
