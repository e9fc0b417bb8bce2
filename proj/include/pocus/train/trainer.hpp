#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pocus/data/augment.hpp"
#include "pocus/data/dataset.hpp"
#include "pocus/eval/report.hpp"
#include "pocus/models/checkpoint.hpp"
#include "pocus/models/classifier.hpp"
#include "pocus/splits/folds.hpp"

namespace pocus::train {

struct EarlyStopping {
  bool enabled = true;
  int patience = 5;
  bool restore_best_weights = true;
};

// Keys under `train.*`: epochs, batch_size, learning_rate, seed,
// early_stopping.{enabled, patience, restore_best_weights}.
struct TrainConfig {
  int epochs = 40;
  int batch_size = 8;
  double learning_rate = 1e-4;
  EarlyStopping early_stopping;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError
};

nlohmann::json to_json(const TrainConfig& config);
// Missing keys keep their defaults; unknown keys are a ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0, val_loss = 0, train_acc = 0, val_acc = 0;
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
  double initial_val_loss = 0;
  int best_epoch = 0;  // 0 when no epoch beat the initial weights
  bool stopped_early = false;

  // One JSON object per line: {epoch, train_loss, val_loss, train_acc, val_acc}.
  std::string to_jsonl() const;
};

// Indexable training material. `item(i, policy)` returns sample i, augmented
// when policy is non-null.
struct ItemSource {
  std::vector<int> labels;
  std::function<nn::Tensor(std::size_t, const data::AugmentationPolicy*)> item;
  std::size_t size() const { return labels.size(); }
};

ItemSource frame_source(const data::Dataset& dataset, std::vector<std::size_t> rows);

// Called after every epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochLog&)>;

// Mini-batch training with per-epoch validation. The validation loss of the
// initial weights is the early-stopping baseline; training halts once
// `patience` consecutive epochs (at least one) fail to lower the best value,
// and the best weights are restored.
// TrainingError naming the class when a class seen in the data has no
// training samples, and naming the epoch when the loss is not finite.
TrainingLog fit(models::Classifier& model, const ItemSource& train, const ItemSource& val,
                const TrainConfig& config, const data::AugmentationPolicy& policy,
                const EpochCallback& on_epoch = {});

struct FoldRows {
  std::vector<std::size_t> train, held_out;
};
FoldRows fold_rows(const data::Dataset& dataset, const splits::FoldAssignment& assignment, int fold_k);

// Trains on every fold except fold_k, validating on fold_k. Augmentation
// touches training frames only.
TrainingLog train_fold(models::Classifier& model, const data::Dataset& dataset,
                       const splits::FoldAssignment& assignment, int fold_k, const TrainConfig& config,
                       const data::AugmentationPolicy& policy, const EpochCallback& on_epoch = {});

// ValidationError unless the checkpoint was trained on this split.
void require_matching_split(const models::CheckpointMeta& meta, const splits::FoldAssignment& assignment);

struct CvConfig {
  models::ClassifierConfig model;
  TrainConfig train;
  data::AugmentationPolicy augment;
  std::filesystem::path out_dir;
  eval::EvalOptions eval;
  bool resume = true;
  std::vector<int> folds;  // empty = all
};

struct FoldOutcome {
  int fold = 0;
  std::filesystem::path checkpoint;
  bool trained = false;  // false when reused from disk
  TrainingLog log;
  eval::MetricsReport frames, videos;
};

struct CvResult {
  std::vector<FoldOutcome> folds;
  nlohmann::json aggregate_frames, aggregate_videos;
};

// Per fold: train (or reuse a checkpoint whose split hash matches), write
// <out>/<arch>_fold<K>.bin + .json + .log.jsonl, evaluate on the held-out
// videos into <out>/fold<K>/. Writes <out>/aggregate.json (mean ± sample
// std across folds).
CvResult run_cross_validation(const data::Dataset& dataset, const splits::FoldAssignment& assignment,
                              const CvConfig& config);

}  // namespace pocus::train
