#include "pocus/train/trainer.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "pocus/error.hpp"
#include "pocus/types.hpp"
#include "pocus/util.hpp"

namespace pocus::train {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be positive");
  if (early_stopping.patience < 0) throw ConfigError("train.early_stopping.patience must be >= 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"early_stopping",
           {{"enabled", c.early_stopping.enabled},
            {"patience", c.early_stopping.patience},
            {"restore_best_weights", c.early_stopping.restore_best_weights}}}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  static const std::set<std::string> known{"epochs", "batch_size", "learning_rate", "seed", "early_stopping"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown key train." + k);
  }
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    if (j.contains("early_stopping")) {
      const auto& e = j.at("early_stopping");
      for (const auto& [k, v] : e.items()) {
        if (k != "enabled" && k != "patience" && k != "restore_best_weights") {
          throw ConfigError("unknown key train.early_stopping." + k);
        }
      }
      c.early_stopping.enabled = e.value("enabled", c.early_stopping.enabled);
      c.early_stopping.patience = e.value("patience", c.early_stopping.patience);
      c.early_stopping.restore_best_weights = e.value("restore_best_weights", c.early_stopping.restore_best_weights);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainingLog::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    out += nlohmann::json{{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss},
                          {"train_acc", e.train_acc},
                          {"val_acc", e.val_acc}}
               .dump();
    out += "\n";
  }
  return out;
}

ItemSource frame_source(const data::Dataset& dataset, std::vector<std::size_t> rows) {
  ItemSource src;
  for (std::size_t r : rows) src.labels.push_back(index_of(dataset[r].label));
  src.item = [&dataset, rows = std::move(rows)](std::size_t i, const data::AugmentationPolicy* policy) {
    const data::FrameSample& s = dataset[rows.at(i)];
    return policy ? data::augment(s, *policy).pixels : s.pixels;
  };
  return src;
}

namespace {

std::string class_name(int c, int n_classes) {
  return n_classes == kNumClasses ? std::string(to_string(label_from_index(c))) : std::to_string(c);
}

nn::Tensor gather(const ItemSource& src, std::span<const std::size_t> idx, const data::AugmentationPolicy* policy) {
  std::vector<nn::Tensor> items;
  items.reserve(idx.size());
  for (std::size_t i : idx) items.push_back(src.item(i, policy));
  return nn::stack(items);
}

std::vector<int> labels_of(const ItemSource& src, std::span<const std::size_t> idx) {
  std::vector<int> out;
  for (std::size_t i : idx) out.push_back(src.labels[i]);
  return out;
}

models::StepResult evaluate_all(const models::Classifier& model, const ItemSource& src, int batch_size) {
  double loss = 0, acc = 0;
  std::vector<std::size_t> idx(src.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t b = 0; b < idx.size(); b += batch_size) {
    const std::span<const std::size_t> part(idx.data() + b, std::min<std::size_t>(batch_size, idx.size() - b));
    const auto r = model.evaluate_batch(gather(src, part, nullptr), labels_of(src, part));
    loss += r.loss * part.size();
    acc += r.accuracy * part.size();
  }
  return {loss / src.size(), acc / src.size()};
}

}  // namespace

TrainingLog fit(models::Classifier& model, const ItemSource& train, const ItemSource& val,
                const TrainConfig& config, const data::AugmentationPolicy& policy, const EpochCallback& on_epoch) {
  config.validate();
  policy.validate();
  if (train.size() == 0) throw TrainingError("training set is empty");
  if (val.size() == 0) throw TrainingError("validation set is empty");
  const int k = model.n_classes();
  std::vector<int> train_count(k, 0);
  std::set<int> seen;
  for (int y : train.labels) {
    if (y < 0 || y >= k) throw ValidationError(fmt::format("label {} outside {} classes", y, k));
    ++train_count[y];
    seen.insert(y);
  }
  for (int y : val.labels) seen.insert(y);
  for (int c : seen) {
    if (c >= 0 && c < k && train_count[c] == 0) {
      throw TrainingError(fmt::format("class '{}' has no training samples", class_name(c, k)));
    }
  }

  TrainingLog log;
  log.initial_val_loss = evaluate_all(model, val, config.batch_size).loss;
  double best = log.initial_val_loss;
  nn::NamedTensors best_state;
  if (config.early_stopping.restore_best_weights) best_state = model.state();
  int wait = 0;

  nn::Adam optimizer(static_cast<float>(config.learning_rate));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, 2 * epoch));
    nn::Rng dropout_rng(derive_seed(config.seed, 2 * epoch + 1));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    data::AugmentationPolicy epoch_policy = policy;
    epoch_policy.rng_seed = derive_seed(policy.rng_seed ^ config.seed, epoch);
    const data::AugmentationPolicy* aug = policy.is_identity() ? nullptr : &epoch_policy;

    double loss = 0, acc = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::span<const std::size_t> part(order.data() + b,
                                              std::min<std::size_t>(config.batch_size, order.size() - b));
      const auto r = model.train_step(gather(train, part, aug), labels_of(train, part), optimizer, dropout_rng);
      if (!std::isfinite(r.loss)) throw TrainingError(fmt::format("loss diverged (non-finite) at epoch {}", epoch));
      loss += r.loss * part.size();
      acc += r.accuracy * part.size();
    }
    const auto v = evaluate_all(model, val, config.batch_size);
    if (!std::isfinite(v.loss)) throw TrainingError(fmt::format("validation loss diverged (non-finite) at epoch {}", epoch));
    const EpochLog e{epoch, loss / train.size(), v.loss, acc / train.size(), v.accuracy};
    log.epochs.push_back(e);
    spdlog::debug("epoch {}: loss {:.4f} acc {:.3f} val_loss {:.4f} val_acc {:.3f}", epoch, e.train_loss,
                  e.train_acc, e.val_loss, e.val_acc);

    if (e.val_loss < best) {
      best = e.val_loss;
      log.best_epoch = epoch;
      wait = 0;
      if (config.early_stopping.restore_best_weights) best_state = model.state();
    } else if (config.early_stopping.enabled && ++wait >= std::max(1, config.early_stopping.patience)) {
      log.stopped_early = epoch < config.epochs;
      break;
    }
    if (on_epoch && !on_epoch(e)) break;
  }
  if (config.early_stopping.enabled && config.early_stopping.restore_best_weights && !log.epochs.empty()) {
    model.load_state(best_state);
  }
  return log;
}

FoldRows fold_rows(const data::Dataset& dataset, const splits::FoldAssignment& assignment, int fold_k) {
  if (fold_k < 0 || fold_k >= assignment.n_folds) {
    throw BoundsError(fmt::format("fold {} outside [0, {})", fold_k, assignment.n_folds));
  }
  FoldRows rows;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (assignment.fold_of(dataset[i].video_id) == fold_k ? rows.held_out : rows.train).push_back(i);
  }
  return rows;
}

TrainingLog train_fold(models::Classifier& model, const data::Dataset& dataset,
                       const splits::FoldAssignment& assignment, int fold_k, const TrainConfig& config,
                       const data::AugmentationPolicy& policy, const EpochCallback& on_epoch) {
  FoldRows rows = fold_rows(dataset, assignment, fold_k);
  return fit(model, frame_source(dataset, std::move(rows.train)), frame_source(dataset, std::move(rows.held_out)),
             config, policy, on_epoch);
}

void require_matching_split(const models::CheckpointMeta& meta, const splits::FoldAssignment& assignment) {
  const std::string h = splits::split_hash(assignment);
  if (meta.split_hash != h) {
    throw ValidationError(fmt::format("checkpoint of fold {} was trained on split {} but the split in use is {}",
                                      meta.fold, meta.split_hash.empty() ? "<none>" : meta.split_hash, h));
  }
}

CvResult run_cross_validation(const data::Dataset& dataset, const splits::FoldAssignment& assignment,
                              const CvConfig& config) {
  config.model.validate();
  config.train.validate();
  std::filesystem::create_directories(config.out_dir);
  const std::string hash = splits::split_hash(assignment);
  std::vector<int> folds = config.folds;
  if (folds.empty()) {
    folds.resize(assignment.n_folds);
    std::iota(folds.begin(), folds.end(), 0);
  }

  CvResult result;
  std::vector<eval::MetricsReport> frame_reports, video_reports;
  for (int k : folds) {
    FoldOutcome out;
    out.fold = k;
    out.checkpoint = models::checkpoint_path(config.out_dir, config.model.arch, k);
    const FoldRows rows = fold_rows(dataset, assignment, k);
    std::optional<models::Classifier> model;
    if (config.resume && std::filesystem::exists(out.checkpoint) &&
        std::filesystem::exists(models::sidecar_path(out.checkpoint))) {
      auto loaded = models::load_checkpoint(out.checkpoint);
      require_matching_split(loaded.meta, assignment);
      spdlog::info("fold {}: reusing {}", k, out.checkpoint.string());
      model.emplace(std::move(loaded.model));
    } else {
      if (config.resume) spdlog::info("fold {}: no checkpoint at {}, training", k, out.checkpoint.string());
      models::ClassifierConfig mc = config.model;
      mc.init_seed = derive_seed(config.model.init_seed ^ config.train.seed, k);
      model.emplace(models::build_classifier(mc));
      TrainConfig tc = config.train;
      tc.seed = derive_seed(config.train.seed, 100 + k);
      out.log = train_fold(*model, dataset, assignment, k, tc, config.augment);
      out.trained = true;
      models::CheckpointMeta meta;
      meta.config = mc;
      meta.fold = k;
      meta.seed = tc.seed;
      meta.epoch = out.log.best_epoch;
      meta.split_hash = hash;
      meta.val_metrics = {{"val_loss", out.log.initial_val_loss}};
      if (out.log.best_epoch) {
        const auto& best = out.log.epochs[out.log.best_epoch - 1];
        meta.val_metrics = {{"val_loss", best.val_loss}, {"val_acc", best.val_acc}};
      }
      models::save_checkpoint(out.checkpoint, *model, meta);
      std::string log_path = out.checkpoint.string();
      log_path.replace(log_path.size() - 4, 4, ".log.jsonl");
      write_file_atomic(log_path, out.log.to_jsonl());
    }
    const auto res = eval::evaluate(eval::single_model(*model), dataset, rows.held_out, config.eval,
                                    config.train.batch_size);
    out.frames = res.frames;
    out.videos = res.videos;
    const auto dir = config.out_dir / fmt::format("fold{}", k);
    eval::write_report(dir, res.frames, "frame_");
    eval::write_report(dir, res.videos, "video_");
    frame_reports.push_back(res.frames);
    video_reports.push_back(res.videos);
    result.folds.push_back(std::move(out));
  }
  result.aggregate_frames = eval::aggregate_reports(frame_reports);
  result.aggregate_videos = eval::aggregate_reports(video_reports);
  write_file_atomic(config.out_dir / "aggregate.json",
                    nlohmann::json{{"split_hash", hash},
                                   {"frames", result.aggregate_frames},
                                   {"videos", result.aggregate_videos}}
                        .dump(2));
  return result;
}

}  // namespace pocus::train
