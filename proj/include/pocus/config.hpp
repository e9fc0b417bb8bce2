#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>

#include "pocus/data/augment.hpp"
#include "pocus/data/dataset.hpp"
#include "pocus/eval/report.hpp"
#include "pocus/explain/mmd.hpp"
#include "pocus/models/classifier.hpp"
#include "pocus/train/trainer.hpp"

namespace pocus {

struct SplitSettings {
  int n_folds = 5;
  std::uint64_t seed = 0;
  bool refine_balance = true;
  double tolerance = 0.10;
};

struct UncertaintySettings {
  int n_passes = 10;
  std::uint64_t seed = 0;
  double dropout_rate = -1.0;  // < 0: the model's own rate
};

// One JSON file, sections:
//   data      target_hz, max_frames, include_uninformative
//   augment   see data::policy_from_json
//   model     see models::config_from_json
//   train     see train::train_config_from_json
//   eval      exclude_uninformative
//   splits    n_folds, seed, refine_balance, tolerance
//   mmd       n_resamples, seed, null, exact_when_small, threads
//   uncertainty  n_passes, seed, dropout_rate
//   service   see service::service_config_from_json (checked when serving)
// Missing sections keep defaults. Unknown sections or keys are ConfigErrors.
struct AppConfig {
  data::DatasetOptions data;
  data::AugmentationPolicy augment;
  models::ClassifierConfig model = models::default_config(models::Arch::kVggCam);
  train::TrainConfig train;
  eval::EvalOptions eval;
  SplitSettings splits;
  explain::ResamplingOptions mmd;
  UncertaintySettings uncertainty;
  nlohmann::json service = nlohmann::json::object();
};

AppConfig app_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AppConfig& c);
AppConfig load_app_config(const std::filesystem::path& path);

// The explicit path when given, else $POCUS_CONFIG, else nothing.
std::optional<std::filesystem::path> config_path(const std::optional<std::filesystem::path>& explicit_path);

}  // namespace pocus
