#include "pocus/data/frames.hpp"

#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>
#include <opencv2/videoio/registry.hpp>

#include "pocus/error.hpp"
#include "pocus/types.hpp"

namespace pocus::data {

int frame_stride(double fps, double target_hz) {
  if (!(fps > 0) || !(target_hz > 0)) throw ConfigError("fps and target rate must be positive");
  if (fps < target_hz) {
    throw ConfigError("video fps " + std::to_string(fps) + " is below the target rate " +
                      std::to_string(target_hz));
  }
  return std::max(1, static_cast<int>(std::lround(fps / target_hz)));
}

std::vector<int> sampled_indices(int total_frames, double fps, double target_hz, int max_frames) {
  const int stride = frame_stride(fps, target_hz);
  std::vector<int> out;
  for (int i = 0; i < total_frames; i += stride) {
    if (max_frames > 0 && static_cast<int>(out.size()) >= max_frames) break;
    out.push_back(i);
  }
  return out;
}

cv::VideoCapture open_video(const std::filesystem::path& path) {
  static const bool ffmpeg = cv::videoio_registry::hasBackend(cv::CAP_FFMPEG);
  return cv::VideoCapture(path.string(), ffmpeg ? cv::CAP_FFMPEG : cv::CAP_ANY);
}

std::vector<RawFrame> extract_frames_from_file(const std::filesystem::path& path, double fps,
                                               double target_hz, int max_frames) {
  const int stride = frame_stride(fps, target_hz);
  cv::VideoCapture cap = open_video(path);
  if (!cap.isOpened()) throw IoError("cannot open video " + path.string());
  std::vector<RawFrame> out;
  cv::Mat frame;
  for (int index = 0; cap.read(frame); ++index) {
    if (index % stride != 0) continue;
    if (max_frames > 0 && static_cast<int>(out.size()) >= max_frames) break;
    out.push_back({frame.clone(), index, index / fps});
  }
  if (out.empty()) throw IoError("no decodable frames in " + path.string());
  return out;
}

std::vector<RawFrame> extract_frames(const RecordingMeta& rec, double target_hz, int max_frames) {
  if (rec.kind != MediaKind::kVideo) {
    throw ValidationError("extract_frames: '" + rec.id + "' is not a video");
  }
  if (!rec.fps) throw ConfigError("extract_frames: '" + rec.id + "' has no fps");
  if (!std::filesystem::exists(rec.path)) throw IoError("video not found: " + rec.path.string());
  return extract_frames_from_file(rec.path, *rec.fps, target_hz, max_frames);
}

cv::Mat crop_square(const cv::Mat& frame, const std::optional<CropWindow>& window) {
  if (frame.empty()) throw ValidationError("crop_square: empty frame");
  if (!window) {
    const int side = std::min(frame.cols, frame.rows);
    const int x = (frame.cols - side) / 2;
    const int y = (frame.rows - side) / 2;
    return frame(cv::Rect(x, y, side, side)).clone();
  }
  const CropWindow& w = *window;
  if (w.w != w.h) throw ValidationError("crop window must be square");
  if (w.x < 0 || w.y < 0 || w.w <= 0 || w.x + w.w > frame.cols || w.y + w.h > frame.rows) {
    throw BoundsError("crop window (" + std::to_string(w.x) + "," + std::to_string(w.y) + "," +
                      std::to_string(w.w) + "," + std::to_string(w.h) + ") exceeds " +
                      std::to_string(frame.cols) + "x" + std::to_string(frame.rows) + " frame");
  }
  return frame(cv::Rect(w.x, w.y, w.w, w.h)).clone();
}

nn::Tensor preprocess(const cv::Mat& square) {
  if (square.empty()) throw ValidationError("preprocess: empty image");
  if (square.cols != square.rows) {
    throw ValidationError("preprocess: input must be square, got " + std::to_string(square.cols) +
                          "x" + std::to_string(square.rows));
  }
  cv::Mat rgb;
  switch (square.channels()) {
    case 1: cv::cvtColor(square, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(square, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(square, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw ValidationError("preprocess: unsupported channel count");
  }
  double scale = 1.0 / 255.0;
  if (rgb.depth() == CV_16U) scale = 1.0 / 65535.0;
  else if (rgb.depth() == CV_32F || rgb.depth() == CV_64F) scale = 1.0;
  cv::Mat as_float;
  rgb.convertTo(as_float, CV_32FC3, scale);
  cv::Mat resized;
  const int interp = square.cols >= kFrameSize ? cv::INTER_AREA : cv::INTER_LINEAR;
  cv::resize(as_float, resized, cv::Size(kFrameSize, kFrameSize), 0, 0, interp);
  nn::Tensor out({kFrameSize, kFrameSize, kFrameChannels});
  for (int y = 0; y < kFrameSize; ++y) {
    const float* row = resized.ptr<float>(y);
    std::copy_n(row, kFrameSize * kFrameChannels, out.data() + y * kFrameSize * kFrameChannels);
  }
  for (float& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

cv::Mat to_bgr8(const nn::Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(2) != 3) throw ValidationError("to_bgr8: need (H,W,3)");
  const int h = pixels.dim(0), w = pixels.dim(1);
  cv::Mat rgb(h, w, CV_32FC3, const_cast<float*>(pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  cv::Mat out;
  bgr.convertTo(out, CV_8UC3, 255.0);
  return out;
}

cv::Mat read_image(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) throw IoError("cannot read image " + path.string());
  return img;
}

}  // namespace pocus::data
