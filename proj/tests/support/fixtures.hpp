#pragma once

#include <filesystem>
#include <opencv2/core.hpp>
#include <random>
#include <string>
#include <vector>

#include "pocus/nn/tensor.hpp"

namespace pocus::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// MJPG .avi whose frame i is a flat gray level (i * 3) % 250 with a white
// square in the top-left corner; decoded frames stay identifiable.
void write_synthetic_video(const std::filesystem::path& path, double fps, int n_frames,
                           int width = 320, int height = 240);
// Gray level written into frame i by write_synthetic_video.
int synthetic_level(int frame_index);

nn::Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, float lo = -1.0f,
                         float hi = 1.0f);

// (224, 224, 3) image in [0,1] with a bright blob centred at (cx, cy).
nn::Tensor blob_image(int cx, int cy, float background = 0.1f);

}  // namespace pocus::testing
