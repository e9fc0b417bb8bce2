#include "pocus/eval/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pocus/error.hpp"

namespace pocus::eval {

ConfusionMatrix::ConfusionMatrix(int n_classes, std::vector<std::string> class_names)
    : k_(n_classes), names_(std::move(class_names)), counts_(static_cast<std::size_t>(n_classes) * n_classes, 0) {
  if (n_classes < 2) throw ValidationError("confusion matrix needs at least 2 classes");
  if (names_.empty()) {
    for (int i = 0; i < k_; ++i) names_.push_back(std::to_string(i));
  }
  if (static_cast<int>(names_.size()) != k_) throw ValidationError("class name count mismatch");
}

void ConfusionMatrix::add(int truth, int pred, long n) {
  if (truth < 0 || truth >= k_ || pred < 0 || pred >= k_) {
    throw ValidationError(fmt::format("label pair ({}, {}) outside {} classes", truth, pred, k_));
  }
  counts_[static_cast<std::size_t>(truth) * k_ + pred] += n;
}

long ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), 0L); }

long ConfusionMatrix::trace() const {
  long t = 0;
  for (int i = 0; i < k_; ++i) t += at(i, i);
  return t;
}

long ConfusionMatrix::row_sum(int truth) const {
  long s = 0;
  for (int j = 0; j < k_; ++j) s += at(truth, j);
  return s;
}

long ConfusionMatrix::col_sum(int pred) const {
  long s = 0;
  for (int i = 0; i < k_; ++i) s += at(i, pred);
  return s;
}

std::vector<double> ConfusionMatrix::row_normalized() const {
  std::vector<double> out(counts_.size(), 0.0);
  for (int i = 0; i < k_; ++i) {
    const long r = row_sum(i);
    if (!r) continue;
    for (int j = 0; j < k_; ++j) out[static_cast<std::size_t>(i) * k_ + j] = double(at(i, j)) / r;
  }
  return out;
}

std::vector<double> ConfusionMatrix::col_normalized() const {
  std::vector<double> out(counts_.size(), 0.0);
  for (int j = 0; j < k_; ++j) {
    const long c = col_sum(j);
    if (!c) continue;
    for (int i = 0; i < k_; ++i) out[static_cast<std::size_t>(i) * k_ + j] = double(at(i, j)) / c;
  }
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> pred, int n_classes,
                                 std::vector<std::string> class_names) {
  if (truth.size() != pred.size()) {
    throw ValidationError(fmt::format("{} true labels vs {} predictions", truth.size(), pred.size()));
  }
  ConfusionMatrix cm(n_classes, std::move(class_names));
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
  return cm;
}

bool ClassMetrics::is_degenerate(const std::string& metric) const {
  return std::find(degenerate.begin(), degenerate.end(), metric) != degenerate.end();
}

ClassMetrics per_class_metrics(const ConfusionMatrix& cm, int k) {
  if (k < 0 || k >= cm.n_classes()) throw BoundsError(fmt::format("class {} out of range", k));
  ClassMetrics m;
  m.tp = cm.at(k, k);
  m.fn = cm.row_sum(k) - m.tp;
  m.fp = cm.col_sum(k) - m.tp;
  m.tn = cm.total() - m.tp - m.fn - m.fp;
  auto ratio = [&](double num, double den, const char* name) {
    if (den == 0) {
      m.degenerate.emplace_back(name);
      return 0.0;
    }
    return num / den;
  };
  m.recall = ratio(m.tp, m.tp + m.fn, "recall");
  m.precision = ratio(m.tp, m.tp + m.fp, "precision");
  m.specificity = ratio(m.tn, m.tn + m.fp, "specificity");
  m.f1 = ratio(2.0 * m.tp, 2.0 * m.tp + m.fp + m.fn, "f1");
  const double den = double(m.tp + m.fp) * double(m.tp + m.fn) * double(m.tn + m.fp) * double(m.tn + m.fn);
  m.mcc = ratio(double(m.tp) * m.tn - double(m.fp) * m.fn, std::sqrt(den), "mcc");
  return m;
}

namespace {

struct Counted {
  std::vector<double> thresholds;  // unique scores, decreasing
  std::vector<long> tp, fp;        // cumulative at each threshold
  long pos = 0, neg = 0;
};

Counted sweep(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) {
    throw ValidationError(fmt::format("{} labels vs {} scores", labels.size(), scores.size()));
  }
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("binary labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw ValidationError("scores must be finite");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  Counted c;
  long tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (labels[order[i]] ? tp : fp) += 1;
    const bool last_of_value = i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]];
    if (last_of_value) {
      c.thresholds.push_back(scores[order[i]]);
      c.tp.push_back(tp);
      c.fp.push_back(fp);
    }
  }
  c.pos = tp;
  c.neg = fp;
  return c;
}

double above_max(const Counted& c) {
  return c.thresholds.empty() ? std::numeric_limits<double>::infinity()
                              : std::nextafter(c.thresholds.front(), std::numeric_limits<double>::infinity());
}

}  // namespace

RocCurve roc_curve(std::span<const int> labels, std::span<const double> scores) {
  const Counted c = sweep(labels, scores);
  if (c.pos == 0 || c.neg == 0) {
    throw ValidationError("ROC needs at least one positive and one negative sample");
  }
  RocCurve r;
  r.points.push_back({above_max(c), 0.0, 0.0});
  for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
    r.points.push_back({c.thresholds[i], double(c.fp[i]) / c.neg, double(c.tp[i]) / c.pos});
  }
  for (std::size_t i = 1; i < r.points.size(); ++i) {
    const auto& a = r.points[i - 1];
    const auto& b = r.points[i];
    r.auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  return r;
}

double pairwise_auc(std::span<const int> labels, std::span<const double> scores) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
    }
  }
  if (!pairs) throw ValidationError("AUC needs at least one positive and one negative sample");
  return wins / pairs;
}

std::vector<PrPoint> pr_curve(std::span<const int> labels, std::span<const double> scores) {
  const Counted c = sweep(labels, scores);
  if (c.pos == 0) throw ValidationError("precision-recall curve needs at least one positive sample");
  std::vector<PrPoint> out;
  out.push_back({above_max(c), 0.0, 1.0});
  for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
    out.push_back({c.thresholds[i], double(c.tp[i]) / c.pos, double(c.tp[i]) / (c.tp[i] + c.fp[i])});
    if (c.tp[i] == c.pos) break;
  }
  return out;
}

OperatingPoint max_accuracy_point(std::span<const int> labels, std::span<const double> scores) {
  const Counted c = sweep(labels, scores);
  if (c.pos == 0 || c.neg == 0) {
    throw ValidationError("operating point needs at least one positive and one negative sample");
  }
  const double n = double(c.pos + c.neg);
  OperatingPoint best{above_max(c), 0.0, 0.0, double(c.neg) / n};
  for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
    const OperatingPoint p{c.thresholds[i], double(c.fp[i]) / c.neg, double(c.tp[i]) / c.pos,
                           double(c.tp[i] + (c.neg - c.fp[i])) / n};
    if (p.accuracy > best.accuracy || (p.accuracy == best.accuracy && p.fpr < best.fpr)) best = p;
  }
  return best;
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw ValidationError("argmax of an empty vector");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

int argmax(std::span<const float> values) {
  if (values.empty()) throw ValidationError("argmax of an empty vector");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace pocus::eval
