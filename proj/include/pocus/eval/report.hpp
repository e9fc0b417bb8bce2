#pragma once

#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pocus/data/dataset.hpp"
#include "pocus/eval/metrics.hpp"
#include "pocus/models/classifier.hpp"

namespace pocus::eval {

struct ClassReport {
  std::string name;
  int class_index = 0;
  ClassMetrics metrics;
  std::optional<RocCurve> roc;  // missing when the class has no positives or no negatives
  std::vector<PrPoint> pr;
  std::optional<OperatingPoint> max_accuracy;
};

struct MetricsReport {
  ConfusionMatrix confusion;  // all model classes; excluded rows stay empty
  std::vector<ClassReport> classes;  // reported classes only
  double accuracy = 0;
  double balanced_accuracy = 0;  // mean of reported recalls
  long n_samples = 0;
  bool exclude_uninformative = false;
  std::vector<std::string> warnings;
};

struct EvalOptions {
  bool exclude_uninformative = true;
  std::vector<std::string> class_names;  // defaults to the Label names
};

// probs is (N, K). With exclude_uninformative, samples whose true label is
// the uninformative class are dropped and metrics cover the other classes,
// while predictions stay argmax over all K columns.
MetricsReport evaluate_predictions(std::span<const int> labels, const nn::Tensor& probs,
                                   const EvalOptions& options = {});

struct FramePrediction {
  std::string video_id;
  int frame_index = 0;
  std::vector<double> probs;
  int label = -1;  // -1 when unknown
};

struct VideoPrediction {
  std::string video_id;
  std::vector<double> probs;  // mean over frames
  int pred_class = 0;
  int n_frames = 0;
  int label = -1;
};

// Mean of the frame probabilities per video, then argmax. Videos come back
// sorted by id. ValidationError for mismatched vector lengths or a video
// whose frames disagree on the label.
std::vector<VideoPrediction> aggregate_video(std::span<const FramePrediction> frames);

// Row-wise mean of equally shaped probability matrices (double accumulator).
nn::Tensor ensemble_mean(std::span<const nn::Tensor> probabilities);
nn::Tensor ensemble_predict(std::span<const models::Classifier* const> models, const nn::Tensor& batch);

// Maps a batch (B, ...) to probabilities (B, K).
using Predictor = std::function<nn::Tensor(const nn::Tensor&)>;
Predictor single_model(const models::Classifier& model);
Predictor ensemble(std::vector<const models::Classifier*> models);

struct EvaluationResult {
  MetricsReport frames;
  MetricsReport videos;
  std::vector<FramePrediction> frame_predictions;
  std::vector<VideoPrediction> video_predictions;
};

// Runs the predictor over the selected samples (all when indices is empty)
// in batches, then scores frames and videos.
EvaluationResult evaluate(const Predictor& predictor, const data::Dataset& dataset,
                          std::span<const std::size_t> indices = {}, const EvalOptions& options = {},
                          int batch_size = 8);

// Mean and sample standard deviation (n-1) of one metric across folds.
struct Summary {
  double mean = 0;
  double std = 0;
  int n = 0;
};
Summary summarize(std::span<const double> values);
// "0.93 ± 0.05"
std::string format_summary(const Summary& s, int decimals = 2);

// Fold aggregate: accuracy, balanced accuracy, and per class recall,
// precision, f1, specificity, mcc, auc.
nlohmann::json aggregate_reports(std::span<const MetricsReport> reports);

nlohmann::json to_json(const MetricsReport& report);
std::string roc_csv(const RocCurve& curve);
std::string pr_csv(const std::vector<PrPoint>& curve);
std::string confusion_csv(const ConfusionMatrix& cm);
std::string confusion_normalized_csv(const ConfusionMatrix& cm, bool by_row);

// <dir>/<prefix>report.json, <prefix>confusion.csv,
// <prefix>confusion_rownorm.csv, <prefix>confusion_colnorm.csv,
// <prefix>roc_<class>.csv, <prefix>pr_<class>.csv and, with plots,
// <prefix>roc.png, <prefix>pr.png, <prefix>confusion.png.
void write_report(const std::filesystem::path& dir, const MetricsReport& report,
                  const std::string& prefix = "", bool plots = true);

}  // namespace pocus::eval
