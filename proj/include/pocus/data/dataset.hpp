#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pocus/data/manifest.hpp"
#include "pocus/nn/tensor.hpp"
#include "pocus/types.hpp"

namespace pocus::data {

// One preprocessed frame: (224, 224, 3) RGB in [0, 1].
struct FrameSample {
  std::string video_id;
  int frame_index = 0;
  nn::Tensor pixels;
  Label label = Label::kCovid;
};

// Pixel-free view of a sample, enough for splitting and auditing.
struct FrameRecord {
  std::string video_id;
  int frame_index = 0;
  Label label = Label::kCovid;
  std::uint64_t fingerprint = 0;  // hash of the pixel bytes
};

struct DatasetOptions {
  double target_hz = 3.0;
  int max_frames = 30;
  bool include_uninformative = false;
};

class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<FrameSample> samples);

  const std::vector<FrameSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const FrameSample& operator[](std::size_t i) const { return samples_[i]; }

  std::array<int, kNumClasses> class_counts() const;
  const std::vector<FrameRecord>& index() const { return index_; }

 private:
  std::vector<FrameSample> samples_;
  std::vector<FrameRecord> index_;
};

std::uint64_t pixel_fingerprint(const nn::Tensor& pixels);

// Throws ValidationError unless pixels are (224, 224, 3) with values in [0, 1].
void validate_frame(const FrameSample& sample);

// Extracts, crops and preprocesses every eligible recording. Convex-probe
// recordings of the three diagnostic classes are kept; uninformative
// recordings are kept (any probe) only when include_uninformative is set.
// Throws Error when nothing remains.
Dataset build_dataset(const std::vector<RecordingMeta>& manifest, const DatasetOptions& options);

// Frame cache: <root>/<label>/<video_id>_frame<index:03d>.png
std::filesystem::path frame_cache_path(const std::filesystem::path& root, const FrameSample& s);
void write_frame_cache(const Dataset& dataset, const std::filesystem::path& root);
Dataset load_frame_cache(const std::filesystem::path& root);

std::string format_class_counts(const std::array<int, kNumClasses>& counts);

}  // namespace pocus::data
