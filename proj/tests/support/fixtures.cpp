#include "support/fixtures.hpp"

#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>
#include <stdexcept>

namespace pocus::testing {

TempDir::TempDir() {
  std::random_device rd;
  const auto base = std::filesystem::temp_directory_path();
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto candidate = base / ("pocus_test_" + std::to_string(rd()) + std::to_string(rd()));
    if (std::filesystem::create_directory(candidate)) {
      path_ = candidate;
      return;
    }
  }
  throw std::runtime_error("cannot create temp dir");
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

int synthetic_level(int frame_index) { return (frame_index * 3) % 250; }

void write_synthetic_video(const std::filesystem::path& path, double fps, int n_frames, int width,
                           int height) {
  cv::VideoWriter writer(path.string(), cv::VideoWriter::fourcc('M', 'J', 'P', 'G'), fps,
                         cv::Size(width, height), true);
  if (!writer.isOpened()) throw std::runtime_error("cannot open video writer " + path.string());
  for (int i = 0; i < n_frames; ++i) {
    const int v = synthetic_level(i);
    cv::Mat frame(height, width, CV_8UC3, cv::Scalar(v, v, v));
    cv::rectangle(frame, cv::Rect(0, 0, 16, 16), cv::Scalar(255, 255, 255), cv::FILLED);
    writer.write(frame);
  }
}

nn::Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, float lo, float hi) {
  nn::Tensor t(std::move(shape));
  std::uniform_real_distribution<float> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

nn::Tensor blob_image(int cx, int cy, float background) {
  nn::Tensor t({224, 224, 3}, background);
  for (int y = 0; y < 224; ++y) {
    for (int x = 0; x < 224; ++x) {
      const double d2 = double(x - cx) * (x - cx) + double(y - cy) * (y - cy);
      const float v = background + (1.0f - background) * static_cast<float>(std::exp(-d2 / 200.0));
      for (int c = 0; c < 3; ++c) t[(static_cast<std::size_t>(y) * 224 + x) * 3 + c] = v;
    }
  }
  return t;
}

}  // namespace pocus::testing
