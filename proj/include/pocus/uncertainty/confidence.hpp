#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pocus/data/dataset.hpp"
#include "pocus/models/classifier.hpp"

namespace pocus::uncertainty {

enum class Kind { kEpistemic, kAleatoric };
std::string to_string(Kind kind);

struct ConfidenceScore {
  double value = 1.0;
  Kind kind = Kind::kEpistemic;
  int winning_class = 0;
  double raw_std = 0.0;  // sample std (n - 1) of the winning-class probability
  std::vector<double> mean_probs;
};

// c = 1 - 2 sigma. ValidationError when sigma leaves [0, 0.5] by more than
// 1e-9; smaller overshoot is clipped.
double confidence_from_std(double sigma);

// stack is (n_passes, B, K). Winning class = argmax of the pass mean, ties
// to the lowest index. raw_std above 0.5 gives c = 0.
std::vector<ConfidenceScore> confidence_from_passes(const nn::Tensor& stack, Kind kind);

// Passes of every model concatenated along the pass axis; model m uses seed
// derive_seed(options.seed, m).
nn::Tensor stochastic_stack(std::span<const models::Classifier* const> models, const nn::Tensor& batch,
                            const models::StochasticOptions& options);

// MC dropout. dropout_rate < 0 keeps each model's configured rate.
std::vector<ConfidenceScore> epistemic_confidence(const models::Classifier& model, const nn::Tensor& batch,
                                                  int n_passes = 10, std::uint64_t seed = 0,
                                                  double dropout_rate = -1.0);
// Test-time augmentation with dropout off.
std::vector<ConfidenceScore> aleatoric_confidence(const models::Classifier& model, const nn::Tensor& batch,
                                                  const data::AugmentationPolicy& policy, int n_passes = 10,
                                                  std::uint64_t seed = 0);

struct Correlation {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided, t with n - 2 dof
  std::size_t n = 0;
  bool degenerate = false;  // a zero-variance input; rho and p undefined
  std::optional<double> mean_conf_correct;
  std::optional<double> mean_conf_wrong;
};

// Pearson correlation with a two-sided p-value. ValidationError for fewer
// than 3 pairs or mismatched lengths.
Correlation pearson(std::span<const double> x, std::span<const double> y);
// Point-biserial correlation between confidence and 0/1 correctness plus
// the two group means.
Correlation correlate_with_correctness(std::span<const double> scores, std::span<const int> correct);

nlohmann::json to_json(const Correlation& c);

// One row of the confidence CSV.
struct ConfidenceRow {
  std::string video_id;
  int frame_index = 0;
  int pred_class = 0;
  std::optional<double> epistemic_c;
  std::optional<double> aleatoric_c;
  std::optional<bool> correct;  // unknown label -> empty
};

inline constexpr std::string_view kConfidenceHeader = "video_id,frame_index,pred_class,epistemic_c,aleatoric_c,correct";
// pred_class written as the class name; missing values as empty fields.
std::string confidence_csv(std::span<const ConfidenceRow> rows);
std::vector<ConfidenceRow> parse_confidence_csv(std::string_view csv);

struct ScoringOptions {
  int n_passes = 10;
  std::uint64_t seed = 0;
  double dropout_rate = -1.0;
  bool epistemic = true;
  bool aleatoric = true;
  data::AugmentationPolicy policy;  // aleatoric transforms (the training policy)
  int batch_size = 8;
};

// Scores the dataset rows (all when empty) with an ensemble. pred_class is
// the argmax of the deterministic ensemble mean; the epistemic/aleatoric
// winning class may differ and is not reported here.
std::vector<ConfidenceRow> score_dataset(std::span<const models::Classifier* const> models, const data::Dataset& dataset,
                                         std::span<const std::size_t> rows, const ScoringOptions& options);

// {n, epistemic: Correlation, aleatoric: Correlation, inter: Correlation,
//  mean_epistemic, mean_aleatoric}; blocks are omitted when their inputs
// are missing or too few.
nlohmann::json analyze(std::span<const ConfidenceRow> rows);

}  // namespace pocus::uncertainty
