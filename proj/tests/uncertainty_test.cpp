#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pocus/error.hpp"
#include "pocus/eval/report.hpp"
#include "pocus/uncertainty/confidence.hpp"
#include "pocus/util.hpp"
#include "support/fixtures.hpp"

namespace pocus::uncertainty {
namespace {

models::ClassifierConfig small(models::Arch arch, std::uint64_t seed = 1) {
  auto cfg = models::default_config(arch);
  cfg.backbone.vgg_filters = {4, 8};
  cfg.backbone.vgg_convs = {1, 1};
  cfg.backbone.mobile_stem = 4;
  cfg.backbone.mobile_blocks = {{8, 2}, {8, 2}};
  cfg.hidden_units = 8;
  cfg.dense_units = {16};
  cfg.feature_dim = 12;
  cfg.init_seed = seed;
  return cfg;
}

// (n_passes, 1, 4) stack from winning-class probabilities of class 0.
nn::Tensor stack_for(const std::vector<float>& p0) {
  nn::Tensor t({static_cast<int>(p0.size()), 1, 4});
  for (std::size_t p = 0; p < p0.size(); ++p) {
    t[p * 4] = p0[p];
    for (int c = 1; c < 4; ++c) t[p * 4 + c] = (1.0f - p0[p]) / 3.0f;
  }
  return t;
}

TEST(Confidence, FormulaAnchors) {
  EXPECT_EQ(confidence_from_std(0.0), 1.0);
  EXPECT_EQ(confidence_from_std(0.5), 0.0);
  EXPECT_EQ(confidence_from_std(0.1), 0.8);
  EXPECT_EQ(confidence_from_std(0.25), 0.5);
}

TEST(Confidence, RangeAndMonotone) {
  EXPECT_EQ(confidence_from_std(0.5 + 5e-10), 0.0);
  EXPECT_EQ(confidence_from_std(-5e-10), 1.0);
  EXPECT_THROW(confidence_from_std(0.5 + 2e-9), ValidationError);
  EXPECT_THROW(confidence_from_std(-1e-8), ValidationError);
  EXPECT_THROW(confidence_from_std(NAN), ValidationError);
  double prev = 2.0;
  for (int i = 0; i <= 100; ++i) {
    const double c = confidence_from_std(i * 0.005);
    EXPECT_LT(c, prev);
    prev = c;
  }
}

TEST(Confidence, HandStack) {
  const auto s = confidence_from_passes(stack_for({0.6f, 0.6f, 0.6f, 0.6f, 0.6f, 0.8f, 0.8f, 0.8f, 0.8f, 0.8f}), Kind::kEpistemic);
  ASSERT_EQ(s.size(), 1u);
  // mean 0.7, squared deviations 10 * 0.01, n - 1 = 9
  const double sigma = std::sqrt(0.1 / 9.0);
  EXPECT_NEAR(s[0].raw_std, sigma, 1e-6);
  EXPECT_NEAR(s[0].raw_std, 0.10541, 1e-5);
  EXPECT_NEAR(s[0].value, 1.0 - 2.0 * sigma, 2e-6);
  EXPECT_NEAR(s[0].value, 0.78918, 1e-5);
  EXPECT_EQ(s[0].winning_class, 0);
  EXPECT_EQ(s[0].kind, Kind::kEpistemic);
}

TEST(Confidence, WinnerIsArgmaxOfMeanWithLowestTie) {
  // pass 0 favours class 1, but the mean favours class 2
  nn::Tensor t({2, 2, 3}, {0.1f, 0.5f, 0.4f, 0.5f, 0.5f, 0.0f,  //
                           0.1f, 0.2f, 0.7f, 0.5f, 0.5f, 0.0f});
  const auto s = confidence_from_passes(t, Kind::kAleatoric);
  EXPECT_EQ(s[0].winning_class, 2);
  EXPECT_EQ(s[1].winning_class, 0);
  EXPECT_EQ(s[1].value, 1.0);
  EXPECT_NEAR(s[0].raw_std, std::sqrt(0.045), 1e-6);
}

TEST(Confidence, SampleStdOvershootClipsToZero) {
  // 0/1 alternating over 4 passes: sample std sqrt(1/3) > 0.5
  nn::Tensor t({4, 1, 2}, {1, 0, 0, 1, 1, 0, 0, 1});
  const auto s = confidence_from_passes(t, Kind::kEpistemic);
  EXPECT_NEAR(s[0].raw_std, std::sqrt(1.0 / 3.0), 1e-12);
  EXPECT_EQ(s[0].value, 0.0);
}

TEST(Confidence, IdenticalPassesGiveExactlyOne) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    nn::Tensor row = testing::random_tensor({3, 4}, rng, 0.0f, 1.0f);
    std::vector<nn::Tensor> passes(7, row);
    for (const auto& s : confidence_from_passes(nn::stack(passes), Kind::kEpistemic)) {
      EXPECT_EQ(s.value, 1.0);
      EXPECT_EQ(s.raw_std, 0.0);
    }
  }
  EXPECT_THROW(confidence_from_passes(nn::Tensor({1, 2, 4}, 0.25f), Kind::kEpistemic), ConfigError);
}

TEST(Confidence, DropoutZeroIsCertainOnEveryArch) {
  std::mt19937_64 rng(5);
  for (auto arch : {models::Arch::kVggCam, models::Arch::kVggHead, models::Arch::kMobile, models::Arch::kSegmentEnc}) {
    const auto m = models::build_classifier(small(arch));
    std::vector<int> shape = m.input_shape();
    shape.insert(shape.begin(), 2);
    const nn::Tensor batch = testing::random_tensor(shape, rng, 0.0f, 1.0f);
    for (const auto& s : epistemic_confidence(m, batch, 6, 3, 0.0)) EXPECT_EQ(s.value, 1.0) << models::to_string(arch);
  }
}

TEST(Confidence, SeedDeterminism) {
  const auto m = models::build_classifier(small(models::Arch::kVggHead));
  std::mt19937_64 rng(6);
  const nn::Tensor batch = testing::random_tensor({3, 224, 224, 3}, rng, 0.0f, 1.0f);
  const auto a = epistemic_confidence(m, batch, 8, 42);
  const auto b = epistemic_confidence(m, batch, 8, 42);
  const auto c = epistemic_confidence(m, batch, 8, 43);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].value, b[i].value);
    EXPECT_LT(a[i].value, 1.0);
    differs |= a[i].value != c[i].value;
  }
  EXPECT_TRUE(differs);
  EXPECT_THROW(epistemic_confidence(m, batch, 1, 0), ConfigError);

  data::AugmentationPolicy policy;
  const auto x = aleatoric_confidence(m, batch, policy, 5, 7);
  const auto y = aleatoric_confidence(m, batch, policy, 5, 7);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i].value, y[i].value);
  for (const auto& s : aleatoric_confidence(m, batch, data::AugmentationPolicy::identity(), 5, 7)) EXPECT_EQ(s.value, 1.0);
}

TEST(Confidence, EnsembleStackConcatenatesPasses) {
  const auto a = models::build_classifier(small(models::Arch::kVggCam, 1));
  const auto b = models::build_classifier(small(models::Arch::kVggCam, 2));
  std::mt19937_64 rng(8);
  const nn::Tensor batch = testing::random_tensor({2, 224, 224, 3}, rng, 0.0f, 1.0f);
  const std::vector<const models::Classifier*> ms{&a, &b};
  models::StochasticOptions opt;
  opt.n_passes = 3;
  opt.seed = 9;
  const nn::Tensor s = stochastic_stack(ms, batch, opt);
  EXPECT_EQ(s.shape(), (std::vector<int>{6, 2, 4}));
  auto first = opt;
  first.seed = derive_seed(9, 0);
  const nn::Tensor only_a = a.stochastic_forward(batch, first);
  for (std::size_t i = 0; i < only_a.size(); ++i) EXPECT_EQ(s[i], only_a[i]);
}

// --- correlation ------------------------------------------------------------

TEST(Correlation, HandCase) {
  const std::vector<double> scores{0.9, 0.8, 0.2, 0.1};
  const std::vector<int> correct{1, 1, 0, 0};
  const auto r = correlate_with_correctness(scores, correct);
  // deviations (.4, .3, -.3, -.4) and (.5, .5, -.5, -.5): 0.7 / sqrt(0.5 * 1)
  EXPECT_NEAR(r.rho, 0.7 / std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(r.rho, 0.98995, 1e-5);
  // two-sided p for t with 2 dof: 1 - t / sqrt(2 + t^2)
  const double t = r.rho * std::sqrt(2.0 / (1 - r.rho * r.rho));
  EXPECT_NEAR(r.p_value, 1.0 - t / std::sqrt(2.0 + t * t), 1e-12);
  EXPECT_NEAR(*r.mean_conf_correct, 0.85, 1e-15);
  EXPECT_NEAR(*r.mean_conf_wrong, 0.15, 1e-15);
  EXPECT_FALSE(r.degenerate);
}

TEST(Correlation, CauchyPValueAndPerfect) {
  const std::vector<double> x{1, 2, 4}, y{1, 3, 2};
  const auto r = pearson(x, y);
  const double t = r.rho * std::sqrt(1.0 / (1 - r.rho * r.rho));
  EXPECT_NEAR(r.p_value, 1.0 - 2.0 / std::numbers::pi * std::atan(std::abs(t)), 1e-12);

  const std::vector<double> s{1, 1, 0, 0, 1};
  const std::vector<int> c{1, 1, 0, 0, 1};
  const auto p = correlate_with_correctness(s, c);
  EXPECT_EQ(p.rho, 1.0);
  EXPECT_EQ(p.p_value, 0.0);
}

TEST(Correlation, DegenerateAndErrors) {
  const std::vector<double> flat{0.5, 0.5, 0.5, 0.5};
  const std::vector<int> c{1, 0, 1, 0};
  const auto r = correlate_with_correctness(flat, c);
  EXPECT_TRUE(r.degenerate);
  EXPECT_TRUE(to_json(r)["rho"].is_null());
  const std::vector<int> all{1, 1, 1, 1};
  const std::vector<double> s{0.1, 0.2, 0.3, 0.4};
  const auto only = correlate_with_correctness(s, all);
  EXPECT_TRUE(only.degenerate);
  EXPECT_FALSE(only.mean_conf_wrong.has_value());
  EXPECT_THROW(correlate_with_correctness(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 0}), ValidationError);
  EXPECT_THROW(correlate_with_correctness(s, std::vector<int>{1, 0, 2, 1}), ValidationError);
  EXPECT_THROW(pearson(s, std::vector<double>{1, 2}), ValidationError);
}

// --- files ------------------------------------------------------------------

TEST(ConfidenceCsv, RoundTrip) {
  std::vector<ConfidenceRow> rows{{"v1", 0, 0, 0.8, 0.9, true},
                                  {"v,2", 3, 2, std::nullopt, 0.1 + 0.2, false},
                                  {"v3", 1, 3, 0.75, std::nullopt, std::nullopt}};
  const std::string csv = confidence_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kConfidenceHeader);
  EXPECT_NE(csv.find("v1,0,covid,0.8,0.9,1"), std::string::npos);
  const auto back = parse_confidence_csv(csv);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].video_id, rows[i].video_id);
    EXPECT_EQ(back[i].pred_class, rows[i].pred_class);
    EXPECT_EQ(back[i].epistemic_c, rows[i].epistemic_c);
    EXPECT_EQ(back[i].aleatoric_c, rows[i].aleatoric_c);
    EXPECT_EQ(back[i].correct, rows[i].correct);
  }
  EXPECT_THROW(parse_confidence_csv("a,b\n"), SchemaError);
  EXPECT_THROW(parse_confidence_csv(std::string(kConfidenceHeader) + "\nv,0,covid,x,,1\n"), ValidationError);
}

TEST(ScoreDataset, RowsAndAnalysis) {
  std::mt19937_64 rng(10);
  std::vector<data::FrameSample> samples;
  for (int i = 0; i < 6; ++i) {
    samples.push_back({"vid" + std::to_string(i / 2), i % 2, testing::random_tensor({224, 224, 3}, rng, 0.0f, 1.0f),
                       label_from_index(i % 3)});
  }
  const data::Dataset ds(std::move(samples));
  const auto a = models::build_classifier(small(models::Arch::kVggCam, 1));
  const auto b = models::build_classifier(small(models::Arch::kVggCam, 2));
  const std::vector<const models::Classifier*> ms{&a, &b};
  ScoringOptions opt;
  opt.n_passes = 4;
  opt.batch_size = 4;
  const auto rows = score_dataset(ms, ds, {}, opt);
  ASSERT_EQ(rows.size(), 6u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const nn::Tensor p = eval::ensemble_predict(ms, nn::stack(std::vector<nn::Tensor>{ds[i].pixels}));
    const std::vector<double> pv(p.values().begin(), p.values().end());
    EXPECT_EQ(rows[i].pred_class, eval::argmax(std::span<const double>(pv)));
    EXPECT_EQ(*rows[i].correct, rows[i].pred_class == index_of(ds[i].label));
    EXPECT_GE(*rows[i].epistemic_c, 0.0);
    EXPECT_LE(*rows[i].aleatoric_c, 1.0);
  }
  const auto again = score_dataset(ms, ds, {}, opt);
  EXPECT_EQ(confidence_csv(again), confidence_csv(rows));
  const auto j = analyze(rows);
  EXPECT_EQ(j["n"], 6);
  EXPECT_TRUE(j.contains("mean_epistemic"));
  EXPECT_TRUE(j.contains("inter"));
}

}  // namespace
}  // namespace pocus::uncertainty
