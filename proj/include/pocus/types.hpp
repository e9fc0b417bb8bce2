#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace pocus {

// Class indices are fixed: they are the column order of every probability
// vector produced by a classifier.
enum class Label : int { kCovid = 0, kPneumonia = 1, kHealthy = 2, kUninformative = 3 };

inline constexpr int kNumClasses = 4;
inline constexpr int kNumDiagnosticClasses = 3;
inline constexpr int kFrameSize = 224;
inline constexpr int kFrameChannels = 3;

enum class Probe { kConvex, kLinear };
enum class MediaKind { kVideo, kImage };

std::string_view to_string(Label label);
std::string_view to_string(Probe probe);
std::string_view to_string(MediaKind kind);

std::optional<Label> parse_label(std::string_view s);
std::optional<Probe> parse_probe(std::string_view s);
std::optional<MediaKind> parse_media_kind(std::string_view s);

// Single-letter abbreviation used in CAM analyses (C, P, H, U).
char label_letter(Label label);

inline int index_of(Label label) { return static_cast<int>(label); }
Label label_from_index(int index);

}  // namespace pocus
