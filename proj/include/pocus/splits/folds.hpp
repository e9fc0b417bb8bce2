#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pocus/data/dataset.hpp"
#include "pocus/types.hpp"

namespace pocus::splits {

// Video-level fold assignment. Every frame of a video lives in one fold.
struct FoldAssignment {
  int n_folds = 5;
  std::map<std::string, int> mapping;  // video_id -> fold in [0, n_folds)

  // Throws BoundsError for unknown videos.
  int fold_of(const std::string& video_id) const;
  std::vector<std::string> videos_in(int fold) const;
  friend bool operator==(const FoldAssignment&, const FoldAssignment&) = default;
};

// Greedy stratified grouping: per class, videos are taken largest first
// (ties in seeded random order) and each goes to the fold holding the fewest
// frames of that class (then fewest frames overall, then lowest index).
// A local search of video moves and swaps then lowers the worst per-fold
// class-share deviation (refine_balance). Classes with fewer videos than
// folds are assigned best-effort with a logged warning; the audit reports
// which folds lack them.
FoldAssignment stratified_group_kfold(std::span<const data::FrameRecord> frames, int n_folds,
                                      std::uint64_t seed, bool refine_balance = true);

struct AuditReport {
  int n_folds = 0;
  std::vector<std::string> unassigned_videos;
  std::vector<std::string> leakage;
  std::vector<std::string> warnings;
  std::vector<std::array<int, kNumClasses>> fold_class_counts;
  std::vector<int> fold_video_counts;
  std::array<double, kNumClasses> global_share{};
  // |fold share - global share| / global share, per fold and class; 0 for
  // classes absent from the dataset.
  std::vector<std::array<double, kNumClasses>> relative_deviation;
  double max_relative_deviation = 0.0;
  double tolerance = 0.10;

  bool ok() const { return unassigned_videos.empty() && leakage.empty(); }
  bool balanced() const { return max_relative_deviation <= tolerance; }
  std::string summary() const;
};

// Checks grouping (no frame key or pixel content shared across folds),
// coverage, and per-fold class frame shares against `tolerance`.
AuditReport audit_folds(std::span<const data::FrameRecord> frames, const FoldAssignment& assignment,
                        double tolerance = 0.10);

// {"n_folds": 5, "assignment": {video_id: fold}} with sorted keys.
std::string to_json(const FoldAssignment& assignment);
FoldAssignment assignment_from_json(std::string_view text);
void save_split(const std::filesystem::path& path, const FoldAssignment& assignment);
FoldAssignment load_split(const std::filesystem::path& path);
// SHA-256 of the canonical serialization; recorded in checkpoint sidecars.
std::string split_hash(const FoldAssignment& assignment);

}  // namespace pocus::splits
