#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pocus/types.hpp"

namespace pocus::data {

// Square region (pixels) that excludes measure bars and burnt-in text.
struct CropWindow {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

struct RecordingMeta {
  std::string id;
  std::filesystem::path path;
  Label label = Label::kCovid;
  Probe probe = Probe::kConvex;
  MediaKind kind = MediaKind::kVideo;
  std::string source;
  std::optional<double> fps;  // videos only
  std::optional<CropWindow> crop;
  std::string notes;
};

// Column order of the manifest CSV header.
inline constexpr std::string_view kManifestHeader =
    "id,path,label,probe,kind,source,fps,crop_x,crop_y,crop_w,crop_h,notes";

// Reads a manifest; relative paths are resolved against the manifest's
// directory. Throws SchemaError for a missing column and ValidationError
// (with the 1-based data row) for bad values or duplicate ids.
std::vector<RecordingMeta> load_manifest(const std::filesystem::path& path);
std::vector<RecordingMeta> parse_manifest(std::string_view csv_text,
                                          const std::filesystem::path& base_dir = {});
std::string format_manifest(const std::vector<RecordingMeta>& records);

}  // namespace pocus::data
