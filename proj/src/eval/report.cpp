#include "pocus/eval/report.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <opencv2/imgcodecs.hpp>
#include <sstream>

#include "pocus/error.hpp"
#include "pocus/eval/plots.hpp"
#include "pocus/types.hpp"
#include "pocus/util.hpp"

namespace pocus::eval {

namespace {

std::vector<std::string> default_names(int k) {
  std::vector<std::string> names;
  for (int i = 0; i < k; ++i) {
    names.emplace_back(i < kNumClasses ? std::string(to_string(label_from_index(i))) : std::to_string(i));
  }
  return names;
}

}  // namespace

MetricsReport evaluate_predictions(std::span<const int> labels, const nn::Tensor& probs,
                                   const EvalOptions& options) {
  if (probs.rank() != 2) throw ValidationError("probabilities must be (N, K)");
  const int n = probs.dim(0), k = probs.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw ValidationError(fmt::format("{} labels for {} probability rows", labels.size(), n));
  }
  const std::vector<std::string> names = options.class_names.empty() ? default_names(k) : options.class_names;
  const int excluded = options.exclude_uninformative && k > index_of(Label::kUninformative)
                           ? index_of(Label::kUninformative)
                           : -1;

  MetricsReport r;
  r.exclude_uninformative = excluded >= 0;
  r.confusion = ConfusionMatrix(k, names);
  std::vector<int> kept;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw ValidationError(fmt::format("label {} outside {} classes", labels[i], k));
    if (labels[i] == excluded) continue;
    kept.push_back(i);
    r.confusion.add(labels[i], argmax(probs.values().subspan(static_cast<std::size_t>(i) * k, k)));
  }
  r.n_samples = static_cast<long>(kept.size());
  if (kept.empty()) throw ValidationError("no samples left to evaluate");
  r.accuracy = double(r.confusion.trace()) / r.confusion.total();

  double recall_sum = 0;
  for (int c = 0; c < k; ++c) {
    if (c == excluded) continue;
    ClassReport cr;
    cr.name = names[c];
    cr.class_index = c;
    cr.metrics = per_class_metrics(r.confusion, c);
    recall_sum += cr.metrics.recall;

    std::vector<int> bin;
    std::vector<double> score;
    for (int i : kept) {
      bin.push_back(labels[i] == c);
      score.push_back(probs[static_cast<std::size_t>(i) * k + c]);
    }
    const long pos = std::count(bin.begin(), bin.end(), 1);
    if (pos > 0 && pos < static_cast<long>(bin.size())) {
      cr.roc = roc_curve(bin, score);
      cr.max_accuracy = max_accuracy_point(bin, score);
    } else {
      r.warnings.push_back(fmt::format("class {} has {} positives of {}; no ROC", cr.name, pos, bin.size()));
    }
    if (pos > 0) cr.pr = pr_curve(bin, score);
    r.classes.push_back(std::move(cr));
  }
  r.balanced_accuracy = recall_sum / r.classes.size();
  return r;
}

std::vector<VideoPrediction> aggregate_video(std::span<const FramePrediction> frames) {
  std::map<std::string, VideoPrediction> by_video;
  for (const auto& f : frames) {
    if (f.probs.empty()) throw ValidationError(fmt::format("frame {} of {} has no probabilities", f.frame_index, f.video_id));
    auto [it, inserted] = by_video.try_emplace(f.video_id);
    VideoPrediction& v = it->second;
    if (inserted) {
      v.video_id = f.video_id;
      v.probs.assign(f.probs.size(), 0.0);
      v.label = f.label;
    }
    if (v.probs.size() != f.probs.size()) throw ValidationError(fmt::format("video {}: class count differs between frames", f.video_id));
    if (v.label != f.label) throw ValidationError(fmt::format("video {}: frames carry different labels", f.video_id));
    for (std::size_t c = 0; c < f.probs.size(); ++c) v.probs[c] += f.probs[c];
    ++v.n_frames;
  }
  std::vector<VideoPrediction> out;
  for (auto& [id, v] : by_video) {
    for (double& p : v.probs) p /= v.n_frames;
    v.pred_class = argmax(std::span<const double>(v.probs));
    out.push_back(std::move(v));
  }
  return out;
}

nn::Tensor ensemble_mean(std::span<const nn::Tensor> probabilities) {
  if (probabilities.empty()) throw ValidationError("ensemble of zero models");
  std::vector<double> acc(probabilities[0].size(), 0.0);
  for (const auto& p : probabilities) {
    if (!p.same_shape(probabilities[0])) throw ValidationError("ensemble members disagree on output shape");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i];
  }
  nn::Tensor out(probabilities[0].shape());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / probabilities.size());
  return out;
}

nn::Tensor ensemble_predict(std::span<const models::Classifier* const> models, const nn::Tensor& batch) {
  std::vector<nn::Tensor> outs;
  for (const auto* m : models) outs.push_back(m->forward(batch));
  return ensemble_mean(outs);
}

Predictor single_model(const models::Classifier& model) {
  return [&model](const nn::Tensor& batch) { return model.forward(batch); };
}

Predictor ensemble(std::vector<const models::Classifier*> models) {
  if (models.empty()) throw ValidationError("ensemble of zero models");
  return [models = std::move(models)](const nn::Tensor& batch) { return ensemble_predict(models, batch); };
}

EvaluationResult evaluate(const Predictor& predictor, const data::Dataset& dataset,
                          std::span<const std::size_t> indices, const EvalOptions& options, int batch_size) {
  std::vector<std::size_t> rows(indices.begin(), indices.end());
  if (rows.empty()) {
    rows.resize(dataset.size());
    std::iota(rows.begin(), rows.end(), 0);
  }
  if (rows.empty()) throw ValidationError("nothing to evaluate");
  if (batch_size < 1) throw ConfigError("batch size must be positive");

  EvaluationResult res;
  std::vector<int> labels;
  std::vector<nn::Tensor> chunks;
  for (std::size_t b = 0; b < rows.size(); b += batch_size) {
    std::vector<nn::Tensor> items;
    for (std::size_t i = b; i < std::min(rows.size(), b + batch_size); ++i) {
      items.push_back(dataset[rows[i]].pixels);
    }
    chunks.push_back(predictor(nn::stack(items)));
  }
  const int k = chunks[0].dim(1);
  nn::Tensor probs({static_cast<int>(rows.size()), k});
  std::size_t at = 0;
  for (const auto& c : chunks) {
    std::copy(c.values().begin(), c.values().end(), probs.data() + at);
    at += c.size();
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& s = dataset[rows[i]];
    FramePrediction fp{s.video_id, s.frame_index, {}, index_of(s.label)};
    for (int c = 0; c < k; ++c) fp.probs.push_back(probs[i * k + c]);
    labels.push_back(fp.label);
    res.frame_predictions.push_back(std::move(fp));
  }
  res.frames = evaluate_predictions(labels, probs, options);

  res.video_predictions = aggregate_video(res.frame_predictions);
  std::vector<int> vlabels;
  nn::Tensor vprobs({static_cast<int>(res.video_predictions.size()), k});
  for (std::size_t v = 0; v < res.video_predictions.size(); ++v) {
    vlabels.push_back(res.video_predictions[v].label);
    for (int c = 0; c < k; ++c) vprobs[v * k + c] = static_cast<float>(res.video_predictions[v].probs[c]);
  }
  res.videos = evaluate_predictions(vlabels, vprobs, options);
  return res;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = static_cast<int>(values.size());
  if (!s.n) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.n;
  if (s.n > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (s.n - 1));
  }
  return s;
}

std::string format_summary(const Summary& s, int decimals) {
  return fmt::format("{:.{}f} ± {:.{}f}", s.mean, decimals, s.std, decimals);
}

nlohmann::json aggregate_reports(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ValidationError("no reports to aggregate");
  auto entry = [](const std::vector<double>& v) {
    const Summary s = summarize(v);
    return nlohmann::json{{"mean", s.mean}, {"std", s.std}, {"n", s.n}, {"text", format_summary(s)}, {"values", v}};
  };
  nlohmann::json j;
  std::vector<double> acc, bal;
  std::map<std::string, std::map<std::string, std::vector<double>>> per_class;
  std::vector<std::string> order;
  for (const auto& r : reports) {
    acc.push_back(r.accuracy);
    bal.push_back(r.balanced_accuracy);
    for (const auto& c : r.classes) {
      if (!per_class.count(c.name)) order.push_back(c.name);
      auto& m = per_class[c.name];
      m["recall"].push_back(c.metrics.recall);
      m["precision"].push_back(c.metrics.precision);
      m["f1"].push_back(c.metrics.f1);
      m["specificity"].push_back(c.metrics.specificity);
      m["mcc"].push_back(c.metrics.mcc);
      if (c.roc) m["auc"].push_back(c.roc->auc);
    }
  }
  j["n_folds"] = reports.size();
  j["accuracy"] = entry(acc);
  j["balanced_accuracy"] = entry(bal);
  j["classes"] = nlohmann::json::array();
  for (const auto& name : order) {
    nlohmann::json c{{"name", name}};
    for (const auto& [metric, values] : per_class[name]) c[metric] = entry(values);
    j["classes"].push_back(c);
  }
  return j;
}

namespace {

nlohmann::json metrics_json(const ClassMetrics& m) {
  return {{"tp", m.tp},         {"fp", m.fp},     {"fn", m.fn},
          {"tn", m.tn},         {"recall", m.recall}, {"precision", m.precision},
          {"f1", m.f1},         {"specificity", m.specificity}, {"mcc", m.mcc},
          {"degenerate", m.degenerate}};
}

// JSON has no infinity; the sweep's first threshold is finite anyway.
double finite(double v) { return std::isfinite(v) ? v : 1e308; }

}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["n_samples"] = r.n_samples;
  j["exclude_uninformative"] = r.exclude_uninformative;
  j["accuracy"] = r.accuracy;
  j["balanced_accuracy"] = r.balanced_accuracy;
  const ConfusionMatrix& cm = r.confusion;
  nlohmann::json grid = nlohmann::json::array();
  for (int t = 0; t < cm.n_classes(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int p = 0; p < cm.n_classes(); ++p) row.push_back(cm.at(t, p));
    grid.push_back(row);
  }
  j["confusion_matrix"] = {{"class_names", cm.class_names()}, {"counts", grid}};
  j["classes"] = nlohmann::json::array();
  for (const auto& c : r.classes) {
    nlohmann::json cj{{"name", c.name}, {"class_index", c.class_index}, {"metrics", metrics_json(c.metrics)}};
    if (c.roc) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& p : c.roc->points) pts.push_back({finite(p.threshold), p.fpr, p.tpr});
      cj["roc"] = {{"auc", c.roc->auc}, {"points", pts}};
    } else {
      cj["roc"] = nullptr;
    }
    nlohmann::json pr = nlohmann::json::array();
    for (const auto& p : c.pr) pr.push_back({finite(p.threshold), p.recall, p.precision});
    cj["pr"] = pr;
    if (c.max_accuracy) {
      const auto& m = *c.max_accuracy;
      cj["max_accuracy_point"] = {{"threshold", m.threshold}, {"fpr", m.fpr}, {"tpr", m.tpr}, {"accuracy", m.accuracy}};
    } else {
      cj["max_accuracy_point"] = nullptr;
    }
    j["classes"].push_back(cj);
  }
  j["warnings"] = r.warnings;
  return j;
}

std::string roc_csv(const RocCurve& curve) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : curve.points) {
    out += fmt::format("{},{},{}\n", format_double(p.threshold), format_double(p.fpr), format_double(p.tpr));
  }
  return out;
}

std::string pr_csv(const std::vector<PrPoint>& curve) {
  std::string out = "threshold,recall,precision\n";
  for (const auto& p : curve) {
    out += fmt::format("{},{},{}\n", format_double(p.threshold), format_double(p.recall), format_double(p.precision));
  }
  return out;
}

namespace {

std::string grid_csv(const ConfusionMatrix& cm, auto cell) {
  std::string out = "true\\pred";
  for (const auto& n : cm.class_names()) out += "," + csv_escape(n);
  out += "\n";
  for (int t = 0; t < cm.n_classes(); ++t) {
    out += csv_escape(cm.class_names()[t]);
    for (int p = 0; p < cm.n_classes(); ++p) out += "," + cell(t, p);
    out += "\n";
  }
  return out;
}

}  // namespace

std::string confusion_csv(const ConfusionMatrix& cm) {
  return grid_csv(cm, [&](int t, int p) { return std::to_string(cm.at(t, p)); });
}

std::string confusion_normalized_csv(const ConfusionMatrix& cm, bool by_row) {
  const auto v = by_row ? cm.row_normalized() : cm.col_normalized();
  return grid_csv(cm, [&](int t, int p) { return format_double(v[static_cast<std::size_t>(t) * cm.n_classes() + p]); });
}

void write_report(const std::filesystem::path& dir, const MetricsReport& report, const std::string& prefix,
                  bool plots) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / (prefix + "report.json"), to_json(report).dump(2));
  write_file_atomic(dir / (prefix + "confusion.csv"), confusion_csv(report.confusion));
  write_file_atomic(dir / (prefix + "confusion_rownorm.csv"), confusion_normalized_csv(report.confusion, true));
  write_file_atomic(dir / (prefix + "confusion_colnorm.csv"), confusion_normalized_csv(report.confusion, false));
  std::vector<Series> roc_series, pr_series;
  for (const auto& c : report.classes) {
    if (c.roc) {
      write_file_atomic(dir / (prefix + "roc_" + c.name + ".csv"), roc_csv(*c.roc));
      Series s{fmt::format("{} (AUC {:.2f})", c.name, c.roc->auc), {}, {}};
      for (const auto& p : c.roc->points) {
        s.x.push_back(p.fpr);
        s.y.push_back(p.tpr);
      }
      roc_series.push_back(std::move(s));
    }
    if (!c.pr.empty()) {
      write_file_atomic(dir / (prefix + "pr_" + c.name + ".csv"), pr_csv(c.pr));
      Series s{c.name, {}, {}};
      for (const auto& p : c.pr) {
        s.x.push_back(p.recall);
        s.y.push_back(p.precision);
      }
      pr_series.push_back(std::move(s));
    }
  }
  if (!plots) return;
  auto save = [&](const std::string& name, const cv::Mat& img) {
    if (!cv::imwrite((dir / (prefix + name)).string(), img)) throw IoError("cannot write " + (dir / (prefix + name)).string());
  };
  save("roc.png", plot_curves(roc_series, "ROC", "False positive rate", "True positive rate", true));
  save("pr.png", plot_curves(pr_series, "Precision-recall", "Recall", "Precision", false));
  save("confusion.png", plot_confusion(report.confusion, true));
}

}  // namespace pocus::eval
