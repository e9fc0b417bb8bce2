#include "pocus/types.hpp"

#include "pocus/error.hpp"

namespace pocus {

namespace {
constexpr std::array<std::string_view, kNumClasses> kLabelNames = {
    "covid", "pneumonia", "healthy", "uninformative"};
}

std::string_view to_string(Label label) { return kLabelNames.at(index_of(label)); }

std::string_view to_string(Probe probe) {
  return probe == Probe::kConvex ? "convex" : "linear";
}

std::string_view to_string(MediaKind kind) {
  return kind == MediaKind::kVideo ? "video" : "image";
}

std::optional<Label> parse_label(std::string_view s) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (kLabelNames[i] == s) return static_cast<Label>(i);
  }
  return std::nullopt;
}

std::optional<Probe> parse_probe(std::string_view s) {
  if (s == "convex") return Probe::kConvex;
  if (s == "linear") return Probe::kLinear;
  return std::nullopt;
}

std::optional<MediaKind> parse_media_kind(std::string_view s) {
  if (s == "video") return MediaKind::kVideo;
  if (s == "image") return MediaKind::kImage;
  return std::nullopt;
}

char label_letter(Label label) {
  static constexpr char kLetters[] = {'C', 'P', 'H', 'U'};
  return kLetters[index_of(label)];
}

Label label_from_index(int index) {
  if (index < 0 || index >= kNumClasses) {
    throw ValidationError("class index out of range: " + std::to_string(index));
  }
  return static_cast<Label>(index);
}

}  // namespace pocus
