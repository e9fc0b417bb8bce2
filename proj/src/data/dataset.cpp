#include "pocus/data/dataset.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <opencv2/imgcodecs.hpp>
#include <regex>
#include <set>

#include "pocus/data/frames.hpp"
#include "pocus/error.hpp"
#include "pocus/util.hpp"

namespace pocus::data {

std::uint64_t pixel_fingerprint(const nn::Tensor& pixels) {
  return stable_hash(std::string_view(reinterpret_cast<const char*>(pixels.data()),
                                      pixels.size() * sizeof(float)));
}

Dataset::Dataset(std::vector<FrameSample> samples) : samples_(std::move(samples)) {
  std::set<std::pair<std::string, int>> keys;
  index_.reserve(samples_.size());
  for (const auto& s : samples_) {
    validate_frame(s);
    if (!keys.emplace(s.video_id, s.frame_index).second) {
      throw ValidationError(fmt::format("duplicate frame ({}, {})", s.video_id, s.frame_index));
    }
    index_.push_back({s.video_id, s.frame_index, s.label, pixel_fingerprint(s.pixels)});
  }
}

std::array<int, kNumClasses> Dataset::class_counts() const {
  std::array<int, kNumClasses> counts{};
  for (const auto& s : samples_) ++counts[index_of(s.label)];
  return counts;
}

void validate_frame(const FrameSample& sample) {
  const auto& shape = sample.pixels.shape();
  if (shape != std::vector<int>{kFrameSize, kFrameSize, kFrameChannels}) {
    throw ValidationError("frame " + sample.video_id + ": pixel grid must be 224x224x3, got " +
                          nn::shape_string(shape));
  }
  for (float v : sample.pixels.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ValidationError("frame " + sample.video_id + ": pixel value outside [0, 1]");
    }
  }
  if (sample.frame_index < 0) throw ValidationError("negative frame index");
}

Dataset build_dataset(const std::vector<RecordingMeta>& manifest, const DatasetOptions& options) {
  std::vector<FrameSample> samples;
  for (const auto& rec : manifest) {
    const bool uninformative = rec.label == Label::kUninformative;
    if (uninformative ? !options.include_uninformative : rec.probe != Probe::kConvex) continue;
    if (rec.kind == MediaKind::kImage) {
      const cv::Mat img = read_image(rec.path);
      samples.push_back({rec.id, 0, preprocess(crop_square(img, rec.crop)), rec.label});
      continue;
    }
    for (const auto& f : extract_frames(rec, options.target_hz, options.max_frames)) {
      samples.push_back({rec.id, f.index, preprocess(crop_square(f.image, rec.crop)), rec.label});
    }
  }
  if (samples.empty()) throw Error("build_dataset: no eligible (convex-probe) recordings");
  Dataset ds(std::move(samples));
  spdlog::info("dataset: {} frames ({})", ds.size(), format_class_counts(ds.class_counts()));
  return ds;
}

std::filesystem::path frame_cache_path(const std::filesystem::path& root, const FrameSample& s) {
  return root / std::string(to_string(s.label)) /
         fmt::format("{}_frame{:03d}.png", s.video_id, s.frame_index);
}

void write_frame_cache(const Dataset& dataset, const std::filesystem::path& root) {
  for (const auto& s : dataset.samples()) {
    const auto path = frame_cache_path(root, s);
    std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), to_bgr8(s.pixels))) {
      throw IoError("cannot write frame " + path.string());
    }
  }
}

Dataset load_frame_cache(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw IoError("frame cache not found: " + root.string());
  static const std::regex kName(R"(^(.+)_frame(\d{3,})\.png$)");
  std::vector<std::filesystem::path> files;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto dir = root / std::string(to_string(label_from_index(c)));
    if (!std::filesystem::is_directory(dir)) continue;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<FrameSample> samples;
  for (const auto& path : files) {
    std::smatch m;
    const std::string name = path.filename().string();
    if (!std::regex_match(name, m, kName)) continue;
    const auto label = parse_label(path.parent_path().filename().string());
    cv::Mat img = read_image(path);
    FrameSample s;
    s.video_id = m[1];
    s.frame_index = std::stoi(m[2]);
    s.label = *label;
    s.pixels = preprocess(img);
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw IoError("frame cache is empty: " + root.string());
  return Dataset(std::move(samples));
}

std::string format_class_counts(const std::array<int, kNumClasses>& counts) {
  std::string out;
  for (int c = 0; c < kNumClasses; ++c) {
    if (c) out += ", ";
    out += fmt::format("{}={}", to_string(label_from_index(c)), counts[c]);
  }
  return out;
}

}  // namespace pocus::data
