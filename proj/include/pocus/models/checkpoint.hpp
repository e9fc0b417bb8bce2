#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "pocus/models/classifier.hpp"

namespace pocus::models {

struct CheckpointMeta {
  ClassifierConfig config;
  int fold = -1;
  std::uint64_t seed = 0;
  int epoch = 0;  // epoch whose weights were kept; 0 = initial weights
  nlohmann::json val_metrics = nlohmann::json::object();
  std::string split_hash;
};

// <dir>/<arch>_fold<K>.bin
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Arch arch, int fold);
// The .json sidecar next to a checkpoint.
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

nlohmann::json to_json(const CheckpointMeta& meta);
CheckpointMeta meta_from_json(const nlohmann::json& j);

// Weights then sidecar, each written to a temporary file and renamed.
void save_checkpoint(const std::filesystem::path& path, const Classifier& model,
                     const CheckpointMeta& meta);
CheckpointMeta load_checkpoint_meta(const std::filesystem::path& path);

struct LoadedCheckpoint {
  Classifier model;
  CheckpointMeta meta;
};
// IoError naming the file when the weights or sidecar are missing.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pocus::models
