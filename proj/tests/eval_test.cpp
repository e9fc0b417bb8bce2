#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>

#include "pocus/error.hpp"
#include "pocus/eval/metrics.hpp"
#include "pocus/eval/report.hpp"
#include "pocus/util.hpp"
#include "support/fixtures.hpp"

namespace pocus::eval {
namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<long>>& rows) {
  ConfusionMatrix cm(static_cast<int>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t p = 0; p < rows.size(); ++p) cm.add(int(t), int(p), rows[t][p]);
  }
  return cm;
}

nn::Tensor probs_of(const std::vector<std::vector<float>>& rows) {
  std::vector<float> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return nn::Tensor({static_cast<int>(rows.size()), static_cast<int>(rows[0].size())}, flat);
}

TEST(ConfusionMatrix, TalliesAndNormalises) {
  const std::vector<int> t{0, 0, 1, 2}, p{0, 1, 1, 2};
  const ConfusionMatrix cm = confusion_matrix(t, p, 3);
  EXPECT_EQ(cm.at(0, 1), 1);
  EXPECT_EQ(cm.at(0, 0) + cm.at(1, 1) + cm.at(2, 2), 3);
  EXPECT_EQ(cm.total(), 4);

  std::vector<int> perfect(10);
  for (int i = 0; i < 10; ++i) perfect[i] = i % 3;
  EXPECT_EQ(confusion_matrix(perfect, perfect, 3).trace(), 10);

  const ConfusionMatrix m = from_rows({{5, 0, 0}, {0, 3, 1}, {1, 0, 4}});
  const auto rn = m.row_normalized();
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(rn[k * 3 + k], per_class_metrics(m, k).recall);
  const auto cn = m.col_normalized();
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(cn[k * 3 + k], per_class_metrics(m, k).precision);
}

TEST(ConfusionMatrix, UnknownLabelIsValidationError) {
  const std::vector<int> t{0, 3}, p{0, 1};
  EXPECT_THROW(confusion_matrix(t, p, 3), ValidationError);
  const std::vector<int> short_p{0};
  EXPECT_THROW(confusion_matrix(t, short_p, 4), ValidationError);
}

TEST(PerClassMetrics, HandSubstitution) {
  const ClassMetrics m = per_class_metrics(from_rows({{5, 0, 0}, {0, 3, 1}, {1, 0, 4}}), 2);
  EXPECT_EQ(m.tp, 4);
  EXPECT_EQ(m.fp, 1);
  EXPECT_EQ(m.fn, 1);
  EXPECT_EQ(m.tn, 8);
  EXPECT_DOUBLE_EQ(m.recall, 0.8);
  EXPECT_DOUBLE_EQ(m.precision, 0.8);
  EXPECT_NEAR(m.specificity, 8.0 / 9.0, 1e-12);
  EXPECT_NEAR(m.f1, 0.8, 1e-12);
  // (4*8 - 1*1) / sqrt(5*5*9*9)
  EXPECT_NEAR(m.mcc, 31.0 / 45.0, 1e-12);
  EXPECT_NEAR(m.mcc, 0.689, 1e-3);
  EXPECT_TRUE(m.degenerate.empty());
}

TEST(PerClassMetrics, PerfectAndDegenerate) {
  const ConfusionMatrix perfect = from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 4}});
  for (int k = 0; k < 3; ++k) {
    const auto m = per_class_metrics(perfect, k);
    EXPECT_EQ(m.recall, 1);
    EXPECT_EQ(m.precision, 1);
    EXPECT_EQ(m.f1, 1);
    EXPECT_EQ(m.specificity, 1);
    EXPECT_EQ(m.mcc, 1);
  }
  // Everything predicted class 0; class 1 is never predicted.
  const auto m = per_class_metrics(from_rows({{3, 0, 0}, {2, 0, 0}, {4, 0, 0}}), 1);
  EXPECT_EQ(m.precision, 0);
  EXPECT_TRUE(m.is_degenerate("precision"));
  EXPECT_TRUE(m.is_degenerate("mcc"));
  EXPECT_FALSE(std::isnan(m.mcc));
  EXPECT_THROW(per_class_metrics(ConfusionMatrix(3), 5), BoundsError);
}

TEST(RocCurve, HandCases) {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.2};
  EXPECT_DOUBLE_EQ(roc_curve(std::vector<int>{1, 1, 0, 0}, s).auc, 1.0);
  EXPECT_DOUBLE_EQ(roc_curve(std::vector<int>{1, 0, 1, 0}, s).auc, 0.75);
  EXPECT_DOUBLE_EQ(roc_curve(std::vector<int>{0, 1, 0, 1}, s).auc, 0.25);
  const RocCurve r = roc_curve(std::vector<int>{1, 0, 1, 0}, s);
  EXPECT_EQ(r.points.front().fpr, 0);
  EXPECT_EQ(r.points.front().tpr, 0);
  EXPECT_EQ(r.points.back().fpr, 1);
  EXPECT_EQ(r.points.back().tpr, 1);
  EXPECT_GT(r.points.front().threshold, 0.9);
  EXPECT_THROW(roc_curve(std::vector<int>{1, 1, 1, 1}, s), ValidationError);
  EXPECT_THROW(roc_curve(std::vector<int>{0, 0, 0, 0}, s), ValidationError);
}

TEST(RocCurve, SweepMatchesPairwiseEstimatorOnRandomInstances) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 30);
    std::vector<int> y(n);
    std::vector<double> s(n);
    // Coarse grid forces ties.
    for (int i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng() % 2);
      s[i] = (rng() % 7) / 6.0;
    }
    y[0] = 1;
    y[1] = 0;
    const RocCurve r = roc_curve(y, s);
    ASSERT_NEAR(r.auc, pairwise_auc(y, s), 1e-9) << "trial " << trial;
    std::vector<int> inv(y.begin(), y.end());
    for (int& v : inv) v = 1 - v;
    ASSERT_NEAR(roc_curve(inv, s).auc, 1.0 - r.auc, 1e-9);
  }
}

// Direct count at one threshold: positive iff score >= t.
std::pair<double, double> recall_precision_at(const std::vector<int>& y, const std::vector<double>& s, double t) {
  int tp = 0, fp = 0, pos = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    pos += y[i];
    if (s[i] >= t) (y[i] ? tp : fp)++;
  }
  return {double(tp) / pos, tp + fp ? double(tp) / (tp + fp) : 1.0};
}

TEST(PrCurve, MatchesExhaustiveSweep) {
  const std::vector<int> y{1, 0, 1, 0};
  const std::vector<double> s{0.35, 0.4, 0.8, 0.1};
  const auto pr = pr_curve(y, s);
  // Thresholds in decreasing order: 0.8, 0.4, 0.35 (recall reaches 1 there).
  const std::vector<double> expected_t{0.8, 0.4, 0.35};
  ASSERT_EQ(pr.size(), expected_t.size() + 1);
  EXPECT_EQ(pr[0].recall, 0);
  EXPECT_EQ(pr[0].precision, 1);
  for (std::size_t i = 0; i < expected_t.size(); ++i) {
    const auto [rec, prec] = recall_precision_at(y, s, expected_t[i]);
    EXPECT_EQ(pr[i + 1].threshold, expected_t[i]);
    EXPECT_DOUBLE_EQ(pr[i + 1].recall, rec);
    EXPECT_DOUBLE_EQ(pr[i + 1].precision, prec);
  }
  EXPECT_DOUBLE_EQ(pr[3].precision, 2.0 / 3.0);
}

TEST(PrCurve, PerfectAndAllPositive) {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.2};
  for (const auto& p : pr_curve(std::vector<int>{1, 1, 0, 0}, s)) EXPECT_EQ(p.precision, 1.0);
  for (const auto& p : pr_curve(std::vector<int>{1, 1, 1, 1}, s)) EXPECT_EQ(p.precision, 1.0);
  EXPECT_EQ(pr_curve(std::vector<int>{1, 1, 1, 1}, s).back().recall, 1.0);
  EXPECT_THROW(pr_curve(std::vector<int>{0, 0, 0, 0}, s), ValidationError);
}

TEST(MaxAccuracyPoint, SeparableAndExhaustive) {
  const OperatingPoint sep = max_accuracy_point(std::vector<int>{1, 1, 0, 0}, std::vector<double>{0.9, 0.8, 0.3, 0.2});
  EXPECT_EQ(sep.accuracy, 1);
  EXPECT_EQ(sep.fpr, 0);
  EXPECT_EQ(sep.tpr, 1);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> y{1, 0, 0, 0};
    std::vector<double> s(4);
    for (int i = 0; i < 4; ++i) {
      y[i] = i == 0 ? 1 : i == 1 ? 0 : static_cast<int>(rng() % 2);
      s[i] = (rng() % 5) / 4.0;
    }
    // Enumeration over every score plus "above all".
    std::vector<double> cands(s);
    cands.push_back(2.0);
    double best_acc = -1, best_fpr = 2;
    for (double t : cands) {
      int tp = 0, tn = 0, fp = 0, neg = 0;
      for (int i = 0; i < 4; ++i) {
        neg += !y[i];
        const bool p = s[i] >= t;
        tp += p && y[i];
        tn += !p && !y[i];
        fp += p && !y[i];
      }
      const double acc = (tp + tn) / 4.0, fpr = double(fp) / neg;
      if (acc > best_acc || (acc == best_acc && fpr < best_fpr)) {
        best_acc = acc;
        best_fpr = fpr;
      }
    }
    const OperatingPoint op = max_accuracy_point(y, s);
    ASSERT_DOUBLE_EQ(op.accuracy, best_acc) << trial;
    ASSERT_DOUBLE_EQ(op.fpr, best_fpr) << trial;
  }
}

TEST(MaxAccuracyPoint, ConstantScoresGiveMajorityShare) {
  const std::vector<double> s(5, 0.4);
  const OperatingPoint a = max_accuracy_point(std::vector<int>{1, 1, 1, 0, 0}, s);
  EXPECT_NEAR(a.threshold, 0.4, 1e-12);
  EXPECT_DOUBLE_EQ(a.accuracy, 0.6);
  const OperatingPoint b = max_accuracy_point(std::vector<int>{1, 0, 0, 0, 0}, s);
  EXPECT_NEAR(b.threshold, 0.4, 1e-12);
  EXPECT_DOUBLE_EQ(b.accuracy, 0.8);
}

TEST(AggregateVideo, MeanThenArgmax) {
  const std::vector<FramePrediction> frames{{"v", 0, {0.7, 0.2, 0.1}, 0}, {"v", 1, {0.3, 0.4, 0.3}, 0},
                                            {"a", 0, {0.1, 0.6, 0.3}, 1}, {"k", 0, {0, 0, 1}, 2},
                                            {"k", 1, {0, 0, 1}, 2}};
  const auto videos = aggregate_video(frames);
  ASSERT_EQ(videos.size(), 3u);
  EXPECT_EQ(videos[0].video_id, "a");
  EXPECT_EQ(videos[0].probs, (std::vector<double>{0.1, 0.6, 0.3}));
  EXPECT_EQ(videos[0].pred_class, 1);
  const auto& v = videos[2];
  EXPECT_NEAR(v.probs[0], 0.5, 1e-12);
  EXPECT_NEAR(v.probs[1], 0.3, 1e-12);
  EXPECT_NEAR(v.probs[2], 0.2, 1e-12);
  EXPECT_EQ(v.pred_class, 0);
  EXPECT_EQ(v.n_frames, 2);
  EXPECT_EQ(videos[1].pred_class, 2);
  EXPECT_EQ(videos[1].probs[2], 1.0);

  const std::vector<FramePrediction> mixed{{"v", 0, {1, 0}, 0}, {"v", 1, {1, 0}, 1}};
  EXPECT_THROW(aggregate_video(mixed), ValidationError);
}

models::Classifier tiny_model(std::uint64_t seed) {
  auto cfg = models::default_config(models::Arch::kVggCam);
  cfg.backbone.vgg_filters = {4, 8};
  cfg.backbone.vgg_convs = {1, 1};
  cfg.normalization = models::InputNormalization::kNone;
  cfg.init_seed = seed;
  return models::build_classifier(cfg);
}

TEST(Ensemble, HandAverageAndIdenticalMembers) {
  const std::vector<nn::Tensor> two{probs_of({{0.2f, 0.8f}, {0.6f, 0.4f}}), probs_of({{0.4f, 0.6f}, {1.0f, 0.0f}})};
  const nn::Tensor m = ensemble_mean(two);
  EXPECT_NEAR(m[0], 0.3, 1e-7);
  EXPECT_NEAR(m[1], 0.7, 1e-7);
  EXPECT_NEAR(m[2], 0.8, 1e-7);
  EXPECT_NEAR(m[3], 0.2, 1e-7);

  std::mt19937_64 rng(2);
  const nn::Tensor batch = testing::random_tensor({3, 224, 224, 3}, rng, 0.0f, 1.0f);
  const models::Classifier a = tiny_model(1);
  const std::vector<const models::Classifier*> same(5, &a);
  const nn::Tensor one = a.forward(batch);
  const nn::Tensor five = ensemble_predict(same, batch);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(one[i], five[i]);

  std::vector<models::Classifier> fold;
  for (int k = 0; k < 5; ++k) fold.push_back(tiny_model(10 + k));
  std::vector<const models::Classifier*> ptrs;
  for (const auto& f : fold) ptrs.push_back(&f);
  const nn::Tensor mixed = ensemble(ptrs)(batch);
  for (int r = 0; r < 3; ++r) {
    double sum = 0;
    for (int c = 0; c < 4; ++c) sum += mixed[r * 4 + c];
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
  EXPECT_THROW(ensemble({}), ValidationError);
}

TEST(EvaluatePredictions, PerfectModel) {
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  const nn::Tensor p = probs_of({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {.9f, .1f, 0, 0}, {0, .8f, .2f, 0}, {0, 0, .7f, .3f}});
  const MetricsReport r = evaluate_predictions(y, p);
  EXPECT_EQ(r.accuracy, 1);
  EXPECT_EQ(r.balanced_accuracy, 1);
  ASSERT_EQ(r.classes.size(), 3u);
  for (const auto& c : r.classes) {
    EXPECT_EQ(c.metrics.recall, 1);
    EXPECT_EQ(c.metrics.precision, 1);
    EXPECT_EQ(c.metrics.specificity, 1);
    EXPECT_EQ(c.metrics.mcc, 1);
    ASSERT_TRUE(c.roc);
    EXPECT_EQ(c.roc->auc, 1);
  }
}

TEST(EvaluatePredictions, UninformativeExclusionSemantics) {
  // Sample 2 is truly uninformative (dropped); sample 3 is covid but
  // predicted uninformative (an error for covid).
  const std::vector<int> y{0, 1, 3, 0, 2};
  const nn::Tensor p = probs_of({{.9f, .1f, 0, 0}, {0, 1, 0, 0}, {0, 0, 0, 1}, {.2f, 0, 0, .8f}, {0, 0, 1, 0}});
  const MetricsReport r = evaluate_predictions(y, p);
  EXPECT_EQ(r.n_samples, 4);
  EXPECT_EQ(r.confusion.row_sum(3), 0);
  EXPECT_EQ(r.confusion.at(0, 3), 1);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
  ASSERT_EQ(r.classes.size(), 3u);
  EXPECT_DOUBLE_EQ(r.classes[0].metrics.recall, 0.5);
  EXPECT_DOUBLE_EQ(r.balanced_accuracy, (0.5 + 1 + 1) / 3.0);

  EvalOptions all;
  all.exclude_uninformative = false;
  const MetricsReport full = evaluate_predictions(y, p, all);
  EXPECT_EQ(full.n_samples, 5);
  EXPECT_EQ(full.classes.size(), 4u);
}

TEST(EvaluatePredictions, IdentitiesAndPermutationInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 40;
    std::vector<int> y(n);
    std::vector<std::vector<float>> rows(n, std::vector<float>(4));
    for (int i = 0; i < n; ++i) {
      y[i] = i < 4 ? i : static_cast<int>(rng() % 4);
      float s = 0;
      for (auto& v : rows[i]) s += (v = u(rng));
      for (auto& v : rows[i]) v /= s;
    }
    const MetricsReport r = evaluate_predictions(y, probs_of(rows));
    double mean_recall = 0;
    for (const auto& c : r.classes) mean_recall += c.metrics.recall;
    EXPECT_DOUBLE_EQ(r.balanced_accuracy, mean_recall / r.classes.size());
    EXPECT_DOUBLE_EQ(r.accuracy, double(r.confusion.trace()) / r.confusion.total());

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> y2;
    std::vector<std::vector<float>> rows2;
    for (int i : perm) {
      y2.push_back(y[i]);
      rows2.push_back(rows[i]);
    }
    EXPECT_EQ(to_json(r), to_json(evaluate_predictions(y2, probs_of(rows2))));
  }
}

TEST(EvaluatePredictions, TwoClassMccEqualsPearson) {
  std::mt19937_64 rng(8);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 5 + static_cast<int>(rng() % 40);
    std::vector<int> t(n), p(n);
    for (int i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng() % 2);
      p[i] = rng() % 4 ? t[i] : 1 - t[i];
    }
    // Pearson of the two 0/1 vectors.
    double mt = 0, mp = 0;
    for (int i = 0; i < n; ++i) {
      mt += t[i];
      mp += p[i];
    }
    mt /= n;
    mp /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < n; ++i) {
      sxy += (t[i] - mt) * (p[i] - mp);
      sxx += (t[i] - mt) * (t[i] - mt);
      syy += (p[i] - mp) * (p[i] - mp);
    }
    if (sxx == 0 || syy == 0) continue;
    const double pearson = sxy / std::sqrt(sxx * syy);
    const ConfusionMatrix cm = confusion_matrix(t, p, 2);
    ASSERT_NEAR(per_class_metrics(cm, 1).mcc, pearson, 1e-12);
    ASSERT_NEAR(per_class_metrics(cm, 0).mcc, pearson, 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 200);
}

TEST(Aggregate, MeanAndSampleStd) {
  const std::vector<double> v{0.8, 0.9, 1.0, 0.9, 0.9};
  const Summary s = summarize(v);
  EXPECT_NEAR(s.mean, 0.9, 1e-12);
  EXPECT_NEAR(s.std, std::sqrt(0.02 / 4), 1e-12);
  EXPECT_EQ(format_summary(s), "0.90 ± 0.07");
  EXPECT_EQ(format_summary({0.93, 0.05, 5}), "0.93 ± 0.05");

  std::vector<MetricsReport> reports;
  for (double acc : v) {
    MetricsReport r;
    r.accuracy = acc;
    r.balanced_accuracy = acc;
    reports.push_back(r);
  }
  const auto j = aggregate_reports(reports);
  EXPECT_EQ(j["accuracy"]["text"], "0.90 ± 0.07");
  EXPECT_EQ(j["n_folds"], 5);
}

TEST(Evaluate, DatasetPathAndFiles) {
  std::vector<data::FrameSample> samples;
  for (int v = 0; v < 6; ++v) {
    for (int f = 0; f < 3; ++f) {
      nn::Tensor px({224, 224, 3}, 0.1f * (v % 3) + 0.05f);
      samples.push_back({"v" + std::to_string(v), f, px, label_from_index(v % 3)});
    }
  }
  const data::Dataset ds(samples);
  // Reads the class off the pixel level.
  Predictor oracle = [](const nn::Tensor& batch) {
    nn::Tensor out({batch.dim(0), 4});
    for (int b = 0; b < batch.dim(0); ++b) {
      const int c = static_cast<int>(std::lround((batch[b * batch.row_size()] - 0.05f) / 0.1f));
      out[b * 4 + c] = 1;
    }
    return out;
  };
  const EvaluationResult res = evaluate(oracle, ds, {}, {}, 4);
  EXPECT_EQ(res.frames.accuracy, 1);
  EXPECT_EQ(res.frames.n_samples, 18);
  EXPECT_EQ(res.videos.n_samples, 6);
  EXPECT_EQ(res.videos.accuracy, 1);

  testing::TempDir dir;
  write_report(dir.path(), res.frames, "frame_");
  for (const char* f : {"frame_report.json", "frame_confusion.csv", "frame_roc_covid.csv", "frame_pr_healthy.csv",
                        "frame_roc.png", "frame_pr.png", "frame_confusion.png"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  const std::string roc = read_file(dir / "frame_roc_covid.csv");
  EXPECT_EQ(roc.rfind("threshold,fpr,tpr\n", 0), 0u);
  EXPECT_EQ(read_file(dir / "frame_pr_covid.csv").rfind("threshold,recall,precision\n", 0), 0u);
  const auto grid = parse_csv(read_file(dir / "frame_confusion.csv"));
  ASSERT_EQ(grid.size(), 5u);
  EXPECT_EQ(grid[1][1], "6");
  const auto j = nlohmann::json::parse(read_file(dir / "frame_report.json"));
  EXPECT_EQ(j["classes"].size(), 3u);
  EXPECT_EQ(j["confusion_matrix"]["counts"][0][0], 6);
}

}  // namespace
}  // namespace pocus::eval
