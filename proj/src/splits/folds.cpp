#include "pocus/splits/folds.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <numeric>
#include <unordered_map>

#include "pocus/error.hpp"
#include "pocus/util.hpp"

namespace pocus::splits {

using nlohmann::json;

int FoldAssignment::fold_of(const std::string& video_id) const {
  auto it = mapping.find(video_id);
  if (it == mapping.end()) throw BoundsError("video '" + video_id + "' has no fold");
  return it->second;
}

std::vector<std::string> FoldAssignment::videos_in(int fold) const {
  std::vector<std::string> out;
  for (const auto& [v, f] : mapping)
    if (f == fold) out.push_back(v);
  return out;
}

namespace {

struct VideoInfo {
  std::string id;
  Label label;
  int frames = 0;
};

std::vector<VideoInfo> group_videos(std::span<const data::FrameRecord> frames) {
  std::map<std::string, VideoInfo> by_id;
  for (const auto& f : frames) {
    auto [it, inserted] = by_id.try_emplace(f.video_id, VideoInfo{f.video_id, f.label, 0});
    if (!inserted && it->second.label != f.label) {
      throw ValidationError("video '" + f.video_id + "' has frames with different labels");
    }
    ++it->second.frames;
  }
  std::vector<VideoInfo> out;
  for (auto& [id, info] : by_id) out.push_back(std::move(info));
  return out;
}

// Max relative share deviation, then the sum of squares as tie-break.
struct Imbalance {
  double worst = 0.0;
  double total = 0.0;
  bool better_than(const Imbalance& o) const {
    if (worst < o.worst - 1e-12) return true;
    return worst <= o.worst + 1e-12 && total < o.total - 1e-12;
  }
};

using Counts = std::vector<std::array<int, kNumClasses>>;

Imbalance imbalance(const Counts& counts, const std::array<double, kNumClasses>& global) {
  Imbalance out;
  for (const auto& fold : counts) {
    const int n = std::accumulate(fold.begin(), fold.end(), 0);
    for (int c = 0; c < kNumClasses; ++c) {
      if (global[c] == 0.0) continue;
      const double d = n ? std::abs(double(fold[c]) / n - global[c]) / global[c] : 1.0;
      out.worst = std::max(out.worst, d);
      out.total += d * d;
    }
  }
  return out;
}

// Local search after the greedy pass: single moves and pairwise swaps of
// videos between folds, kept while they lower the imbalance. No fold is
// ever emptied.
void refine(const std::vector<VideoInfo>& videos, std::vector<int>& fold_of, Counts& counts) {
  std::array<double, kNumClasses> global{};
  double all = 0.0;
  for (const auto& v : videos) {
    global[index_of(v.label)] += v.frames;
    all += v.frames;
  }
  for (auto& g : global) g /= all;
  const int k = static_cast<int>(counts.size());
  std::vector<int> members(k, 0);
  for (int f : fold_of) ++members[f];
  Imbalance best = imbalance(counts, global);
  auto shift = [&](const VideoInfo& v, int from, int to) {
    counts[from][index_of(v.label)] -= v.frames;
    counts[to][index_of(v.label)] += v.frames;
  };
  const std::size_t n = videos.size();
  for (int round = 0; round < 200; ++round) {
    bool improved = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (int to = 0; to < k; ++to) {
        const int from = fold_of[i];
        if (to == from || members[from] == 1) continue;
        shift(videos[i], from, to);
        const Imbalance cand = imbalance(counts, global);
        if (cand.better_than(best)) {
          best = cand;
          fold_of[i] = to;
          --members[from];
          ++members[to];
          improved = true;
        } else {
          shift(videos[i], to, from);
        }
      }
      for (std::size_t j = i + 1; j < n; ++j) {
        const int a = fold_of[i], b = fold_of[j];
        if (a == b) continue;
        shift(videos[i], a, b);
        shift(videos[j], b, a);
        const Imbalance cand = imbalance(counts, global);
        if (cand.better_than(best)) {
          best = cand;
          std::swap(fold_of[i], fold_of[j]);
          improved = true;
        } else {
          shift(videos[i], b, a);
          shift(videos[j], a, b);
        }
      }
    }
    if (!improved) break;
  }
}

}  // namespace

FoldAssignment stratified_group_kfold(std::span<const data::FrameRecord> frames, int n_folds,
                                      std::uint64_t seed, bool refine_balance) {
  if (n_folds < 2) throw ConfigError("n_folds must be at least 2");
  const auto videos = group_videos(frames);
  if (static_cast<int>(videos.size()) < n_folds) {
    throw ConfigError(fmt::format("{} videos cannot fill {} folds", videos.size(), n_folds));
  }
  FoldAssignment out;
  out.n_folds = n_folds;
  Counts class_frames(n_folds, std::array<int, kNumClasses>{});
  std::vector<int> fold_of(videos.size(), 0);
  std::vector<int> total_frames(n_folds, 0);
  std::mt19937_64 rng(seed);

  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < videos.size(); ++i)
      if (index_of(videos[i].label) == c) members.push_back(i);
    if (members.empty()) continue;
    if (static_cast<int>(members.size()) < n_folds) {
      spdlog::warn("class {} has {} videos for {} folds; some folds will lack it",
                   to_string(label_from_index(c)), members.size(), n_folds);
    }
    std::shuffle(members.begin(), members.end(), rng);
    std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return videos[a].frames > videos[b].frames;
    });
    for (std::size_t vi : members) {
      const VideoInfo* v = &videos[vi];
      int best = 0;
      for (int f = 1; f < n_folds; ++f) {
        const auto key = std::pair(class_frames[f][c], total_frames[f]);
        const auto best_key = std::pair(class_frames[best][c], total_frames[best]);
        if (key < best_key) best = f;
      }
      fold_of[vi] = best;
      class_frames[best][c] += v->frames;
      total_frames[best] += v->frames;
    }
  }
  if (refine_balance) refine(videos, fold_of, class_frames);
  for (std::size_t i = 0; i < videos.size(); ++i) out.mapping[videos[i].id] = fold_of[i];
  return out;
}

AuditReport audit_folds(std::span<const data::FrameRecord> frames, const FoldAssignment& assignment,
                        double tolerance) {
  AuditReport r;
  r.n_folds = assignment.n_folds;
  r.tolerance = tolerance;
  r.fold_class_counts.assign(r.n_folds, std::array<int, kNumClasses>{});
  r.fold_video_counts.assign(r.n_folds, 0);
  r.relative_deviation.assign(r.n_folds, std::array<double, kNumClasses>{});

  for (const auto& [video, fold] : assignment.mapping) {
    if (fold < 0 || fold >= r.n_folds) {
      r.leakage.push_back(fmt::format("video {} mapped to invalid fold {}", video, fold));
    } else {
      ++r.fold_video_counts[fold];
    }
  }

  std::set<std::string> unassigned;
  std::map<std::pair<std::string, int>, int> key_fold;
  std::unordered_map<std::uint64_t, std::pair<const data::FrameRecord*, int>> content_fold;
  std::array<int, kNumClasses> totals{};
  for (const auto& f : frames) {
    auto it = assignment.mapping.find(f.video_id);
    if (it == assignment.mapping.end()) {
      unassigned.insert(f.video_id);
      continue;
    }
    const int fold = it->second;
    if (fold < 0 || fold >= r.n_folds) continue;
    if (!key_fold.emplace(std::pair(f.video_id, f.frame_index), fold).second) {
      r.leakage.push_back(fmt::format("frame key ({}, {}) appears more than once", f.video_id,
                                      f.frame_index));
    }
    auto [cit, fresh] = content_fold.try_emplace(f.fingerprint, &f, fold);
    if (!fresh && cit->second.second != fold) {
      const auto* other = cit->second.first;
      r.leakage.push_back(fmt::format("identical pixels in {}#{} (fold {}) and {}#{} (fold {})",
                                      other->video_id, other->frame_index, cit->second.second,
                                      f.video_id, f.frame_index, fold));
    }
    ++r.fold_class_counts[fold][index_of(f.label)];
    ++totals[index_of(f.label)];
  }
  r.unassigned_videos.assign(unassigned.begin(), unassigned.end());

  const int grand = std::accumulate(totals.begin(), totals.end(), 0);
  for (int c = 0; c < kNumClasses; ++c) r.global_share[c] = grand ? double(totals[c]) / grand : 0.0;
  for (int f = 0; f < r.n_folds; ++f) {
    const auto& counts = r.fold_class_counts[f];
    const int fold_total = std::accumulate(counts.begin(), counts.end(), 0);
    if (fold_total == 0) {
      r.warnings.push_back(fmt::format("fold {} is empty", f));
      r.max_relative_deviation = std::max(r.max_relative_deviation, 1.0);
      continue;
    }
    for (int c = 0; c < kNumClasses; ++c) {
      if (totals[c] == 0) continue;
      if (counts[c] == 0) {
        r.warnings.push_back(
            fmt::format("fold {} has no {} frames", f, to_string(label_from_index(c))));
      }
      const double share = double(counts[c]) / fold_total;
      const double dev = std::abs(share - r.global_share[c]) / r.global_share[c];
      r.relative_deviation[f][c] = dev;
      r.max_relative_deviation = std::max(r.max_relative_deviation, dev);
    }
  }
  return r;
}

std::string AuditReport::summary() const {
  std::string out = fmt::format("folds={} leakage={} unassigned={} max_share_deviation={:.3f} (tol {:.2f})\n",
                                n_folds, leakage.size(), unassigned_videos.size(),
                                max_relative_deviation, tolerance);
  for (int f = 0; f < n_folds; ++f) {
    out += fmt::format("  fold {}: videos={} frames=", f, fold_video_counts[f]);
    for (int c = 0; c < kNumClasses; ++c) {
      out += fmt::format("{}{}={}", c ? " " : "", label_letter(label_from_index(c)),
                         fold_class_counts[f][c]);
    }
    out += '\n';
  }
  for (const auto& l : leakage) out += "  LEAK: " + l + '\n';
  for (const auto& u : unassigned_videos) out += "  UNASSIGNED: " + u + '\n';
  for (const auto& w : warnings) out += "  warning: " + w + '\n';
  return out;
}

std::string to_json(const FoldAssignment& assignment) {
  json j;
  j["n_folds"] = assignment.n_folds;
  j["assignment"] = json::object();
  for (const auto& [v, f] : assignment.mapping) j["assignment"][v] = f;
  return j.dump(2);
}

FoldAssignment assignment_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("split file is not valid JSON: ") + e.what());
  }
  if (!j.contains("n_folds")) throw SchemaError("split file is missing 'n_folds'");
  if (!j.contains("assignment")) throw SchemaError("split file is missing 'assignment'");
  FoldAssignment a;
  a.n_folds = j.at("n_folds").get<int>();
  for (const auto& [v, f] : j.at("assignment").items()) {
    const int fold = f.get<int>();
    if (fold < 0 || fold >= a.n_folds) {
      throw ValidationError(fmt::format("video {} has fold {} outside [0, {})", v, fold, a.n_folds));
    }
    a.mapping[v] = fold;
  }
  return a;
}

void save_split(const std::filesystem::path& path, const FoldAssignment& assignment) {
  write_file_atomic(path, to_json(assignment) + "\n");
}

FoldAssignment load_split(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("split file not found: " + path.string());
  return assignment_from_json(read_file(path));
}

std::string split_hash(const FoldAssignment& assignment) { return sha256_hex(to_json(assignment)); }

}  // namespace pocus::splits
