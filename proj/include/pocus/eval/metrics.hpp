#pragma once

#include <span>
#include <string>
#include <vector>

namespace pocus::eval {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int n_classes, std::vector<std::string> class_names = {});

  int n_classes() const { return k_; }
  const std::vector<std::string>& class_names() const { return names_; }
  long at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }
  void add(int truth, int pred, long n = 1);
  long total() const;
  long trace() const;
  long row_sum(int truth) const;
  long col_sum(int pred) const;
  // Row-normalised (sensitivity view) and column-normalised (precision
  // view); empty rows/columns stay 0.
  std::vector<double> row_normalized() const;
  std::vector<double> col_normalized() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int k_ = 0;
  std::vector<std::string> names_;
  std::vector<long> counts_;
};

// ValidationError on length mismatch or labels outside [0, n_classes).
ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> pred, int n_classes,
                                 std::vector<std::string> class_names = {});

// One-vs-rest metrics. A zero denominator yields 0 and the metric's name in
// `degenerate` rather than NaN.
struct ClassMetrics {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double recall = 0, precision = 0, f1 = 0, specificity = 0, mcc = 0;
  std::vector<std::string> degenerate;
  bool is_degenerate(const std::string& metric) const;
};
ClassMetrics per_class_metrics(const ConfusionMatrix& cm, int class_k);

struct RocPoint {
  double threshold = 0;  // positive iff score >= threshold
  double fpr = 0;
  double tpr = 0;
};
struct RocCurve {
  std::vector<RocPoint> points;  // decreasing threshold, from (0,0) to (1,1)
  double auc = 0;
};
// Thresholds sweep the unique scores; the first point uses a threshold just
// above the largest score. Trapezoidal AUC, which equals the Mann-Whitney
// estimate with ties counted 1/2. ValidationError unless both classes occur.
RocCurve roc_curve(std::span<const int> labels, std::span<const double> scores);
// P(score_pos > score_neg) + 1/2 P(equal), by enumerating all pairs.
double pairwise_auc(std::span<const int> labels, std::span<const double> scores);

struct PrPoint {
  double threshold = 0;
  double recall = 0;
  double precision = 0;
};
// Starts with the (recall 0, precision 1) anchor, then one point per unique
// score in decreasing order until recall reaches 1. Needs >= 1 positive.
std::vector<PrPoint> pr_curve(std::span<const int> labels, std::span<const double> scores);

struct OperatingPoint {
  double threshold = 0;
  double fpr = 0;
  double tpr = 0;
  double accuracy = 0;
};
// Threshold with the highest binarised accuracy; ties go to the lower
// false-positive rate. Candidates are the ROC thresholds.
OperatingPoint max_accuracy_point(std::span<const int> labels, std::span<const double> scores);

// Index of the largest value; ties resolve to the lowest index.
int argmax(std::span<const double> values);
int argmax(std::span<const float> values);

}  // namespace pocus::eval
