#include "pocus/uncertainty/confidence.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>

#include "pocus/error.hpp"
#include "pocus/eval/metrics.hpp"
#include "pocus/eval/report.hpp"
#include "pocus/util.hpp"

namespace pocus::uncertainty {

std::string to_string(Kind kind) { return kind == Kind::kEpistemic ? "epistemic" : "aleatoric"; }

double confidence_from_std(double sigma) {
  constexpr double kMin = 0.0, kMax = 0.5;
  if (!std::isfinite(sigma) || sigma < kMin - 1e-9 || sigma > kMax + 1e-9) {
    throw ValidationError(fmt::format("standard deviation {} outside [0, 0.5]", sigma));
  }
  const double c = -((sigma - kMin) / (kMax - kMin)) + 1.0;
  return std::clamp(c, 0.0, 1.0);
}

std::vector<ConfidenceScore> confidence_from_passes(const nn::Tensor& stack, Kind kind) {
  if (stack.rank() != 3) throw ValidationError("pass stack must be (n_passes, B, K), got " + nn::shape_string(stack.shape()));
  const int n = stack.dim(0), b = stack.dim(1), k = stack.dim(2);
  if (n < 2) throw ConfigError("need at least 2 passes for a standard deviation");
  std::vector<ConfidenceScore> out(b);
  for (int i = 0; i < b; ++i) {
    auto& s = out[i];
    s.kind = kind;
    s.mean_probs.assign(k, 0.0);
    for (int p = 0; p < n; ++p) {
      for (int c = 0; c < k; ++c) s.mean_probs[c] += stack[(static_cast<std::size_t>(p) * b + i) * k + c];
    }
    for (double& v : s.mean_probs) v /= n;
    s.winning_class = eval::argmax(std::span<const double>(s.mean_probs));
    const double mean = s.mean_probs[s.winning_class];
    double ss = 0;
    for (int p = 0; p < n; ++p) {
      const double d = stack[(static_cast<std::size_t>(p) * b + i) * k + s.winning_class] - mean;
      ss += d * d;
    }
    s.raw_std = std::sqrt(ss / (n - 1));
    // n - 1 can push a [0,1] variable past 0.5 (up to sqrt(n / (4(n-1))))
    s.value = confidence_from_std(std::min(s.raw_std, 0.5));
  }
  return out;
}

nn::Tensor stochastic_stack(std::span<const models::Classifier* const> models, const nn::Tensor& batch,
                            const models::StochasticOptions& options) {
  if (models.empty()) throw ValidationError("no models");
  if (models.size() == 1) return models[0]->stochastic_forward(batch, options);
  std::vector<nn::Tensor> parts;
  int passes = 0;
  for (std::size_t m = 0; m < models.size(); ++m) {
    auto opt = options;
    opt.seed = derive_seed(options.seed, m);
    parts.push_back(models[m]->stochastic_forward(batch, opt));
    passes += parts.back().dim(0);
  }
  std::vector<int> shape = parts[0].shape();
  shape[0] = passes;
  nn::Tensor out(shape);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.data() + at);
    at += p.size();
  }
  return out;
}

std::vector<ConfidenceScore> epistemic_confidence(const models::Classifier& model, const nn::Tensor& batch, int n_passes,
                                                  std::uint64_t seed, double dropout_rate) {
  if (n_passes < 2) throw ConfigError("n_passes must be at least 2");
  models::StochasticOptions opt;
  opt.n_passes = n_passes;
  opt.mode = models::StochasticMode::kDropout;
  opt.seed = seed;
  opt.dropout_rate = dropout_rate;
  return confidence_from_passes(model.stochastic_forward(batch, opt), Kind::kEpistemic);
}

std::vector<ConfidenceScore> aleatoric_confidence(const models::Classifier& model, const nn::Tensor& batch,
                                                  const data::AugmentationPolicy& policy, int n_passes,
                                                  std::uint64_t seed) {
  if (n_passes < 2) throw ConfigError("n_passes must be at least 2");
  models::StochasticOptions opt;
  opt.n_passes = n_passes;
  opt.mode = models::StochasticMode::kTta;
  opt.policy = policy;
  opt.seed = seed;
  return confidence_from_passes(model.stochastic_forward(batch, opt), Kind::kAleatoric);
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError(fmt::format("{} scores vs {} outcomes", x.size(), y.size()));
  if (x.size() < 3) throw ValidationError("correlation needs at least 3 samples");
  Correlation r;
  r.n = x.size();
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / r.n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / r.n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < r.n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) {
    r.degenerate = true;
    r.rho = std::numeric_limits<double>::quiet_NaN();
    r.p_value = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = static_cast<double>(r.n) - 2.0;
  if (std::abs(r.rho) == 1.0) {
    r.p_value = 0.0;
  } else {
    const double t = r.rho * std::sqrt(dof / (1.0 - r.rho * r.rho));
    const boost::math::students_t dist(dof);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return r;
}

Correlation correlate_with_correctness(std::span<const double> scores, std::span<const int> correct) {
  std::vector<double> y;
  double sum_c = 0, sum_w = 0;
  std::size_t n_c = 0;
  for (std::size_t i = 0; i < correct.size(); ++i) {
    if (correct[i] != 0 && correct[i] != 1) throw ValidationError(fmt::format("correctness[{}] = {} is not 0/1", i, correct[i]));
    y.push_back(correct[i]);
    if (i < scores.size()) (correct[i] ? sum_c : sum_w) += scores[i];
    n_c += correct[i];
  }
  Correlation r = pearson(scores, y);
  if (n_c > 0) r.mean_conf_correct = sum_c / n_c;
  if (n_c < correct.size()) r.mean_conf_wrong = sum_w / (correct.size() - n_c);
  return r;
}

nlohmann::json to_json(const Correlation& c) {
  nlohmann::json j{{"n", c.n}, {"degenerate", c.degenerate}};
  j["rho"] = c.degenerate ? nlohmann::json(nullptr) : nlohmann::json(c.rho);
  j["p_value"] = c.degenerate ? nlohmann::json(nullptr) : nlohmann::json(c.p_value);
  if (c.mean_conf_correct) j["mean_conf_correct"] = *c.mean_conf_correct;
  if (c.mean_conf_wrong) j["mean_conf_wrong"] = *c.mean_conf_wrong;
  return j;
}

namespace {

std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::optional<double> parse_opt(const std::string& s, std::size_t row, const char* what) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("row {}: bad {} '{}'", row, what, s));
  }
}

}  // namespace

std::string confidence_csv(std::span<const ConfidenceRow> rows) {
  std::string out(kConfidenceHeader);
  out += "\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{}\n", csv_escape(r.video_id), r.frame_index, to_string(label_from_index(r.pred_class)),
                       opt_field(r.epistemic_c), opt_field(r.aleatoric_c), r.correct ? (*r.correct ? "1" : "0") : "");
  }
  return out;
}

std::vector<ConfidenceRow> parse_confidence_csv(std::string_view csv) {
  const auto rows = parse_csv(csv);
  if (rows.empty()) throw SchemaError("confidence file is empty");
  const std::vector<std::string> want{"video_id", "frame_index", "pred_class", "epistemic_c", "aleatoric_c", "correct"};
  if (rows[0] != want) throw SchemaError(fmt::format("confidence header must be '{}'", kConfidenceHeader));
  std::vector<ConfidenceRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != want.size()) throw ValidationError(fmt::format("row {}: {} fields", i, f.size()));
    ConfidenceRow r;
    r.video_id = f[0];
    try {
      r.frame_index = std::stoi(f[1]);
    } catch (const std::exception&) {
      throw ValidationError(fmt::format("row {}: bad frame_index", i));
    }
    const auto label = parse_label(f[2]);
    if (!label) throw ValidationError(fmt::format("row {}: unknown class '{}'", i, f[2]));
    r.pred_class = index_of(*label);
    r.epistemic_c = parse_opt(f[3], i, "epistemic_c");
    r.aleatoric_c = parse_opt(f[4], i, "aleatoric_c");
    if (f[5] == "1") {
      r.correct = true;
    } else if (f[5] == "0") {
      r.correct = false;
    } else if (!f[5].empty()) {
      throw ValidationError(fmt::format("row {}: correct must be 0, 1 or empty", i));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ConfidenceRow> score_dataset(std::span<const models::Classifier* const> models, const data::Dataset& dataset,
                                         std::span<const std::size_t> rows, const ScoringOptions& options) {
  if (options.n_passes < 2) throw ConfigError("n_passes must be at least 2");
  if (options.batch_size < 1) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  if (idx.empty()) {
    idx.resize(dataset.size());
    std::iota(idx.begin(), idx.end(), 0);
  }
  std::vector<ConfidenceRow> out;
  for (std::size_t b = 0; b < idx.size(); b += options.batch_size) {
    std::vector<nn::Tensor> items;
    const std::size_t end = std::min(idx.size(), b + options.batch_size);
    for (std::size_t i = b; i < end; ++i) items.push_back(dataset[idx[i]].pixels);
    const nn::Tensor batch = nn::stack(items);
    const nn::Tensor probs = eval::ensemble_predict(models, batch);
    // seeds per batch; scores depend on batch_size
    std::vector<ConfidenceScore> epi, alea;
    models::StochasticOptions opt;
    opt.n_passes = options.n_passes;
    opt.seed = derive_seed(options.seed, b);
    if (options.epistemic) {
      opt.mode = models::StochasticMode::kDropout;
      opt.dropout_rate = options.dropout_rate;
      epi = confidence_from_passes(stochastic_stack(models, batch, opt), Kind::kEpistemic);
    }
    if (options.aleatoric) {
      opt.mode = models::StochasticMode::kTta;
      opt.policy = options.policy;
      opt.seed = derive_seed(options.seed ^ 0xa1ea7021cULL, b);
      alea = confidence_from_passes(stochastic_stack(models, batch, opt), Kind::kAleatoric);
    }
    const int k = probs.dim(1);
    for (std::size_t i = b; i < end; ++i) {
      const auto& s = dataset[idx[i]];
      ConfidenceRow r;
      r.video_id = s.video_id;
      r.frame_index = s.frame_index;
      std::vector<double> p(k);
      for (int c = 0; c < k; ++c) p[c] = probs[(i - b) * k + c];
      r.pred_class = eval::argmax(std::span<const double>(p));
      if (options.epistemic) r.epistemic_c = epi[i - b].value;
      if (options.aleatoric) r.aleatoric_c = alea[i - b].value;
      r.correct = r.pred_class == index_of(s.label);
      out.push_back(std::move(r));
    }
  }
  return out;
}

nlohmann::json analyze(std::span<const ConfidenceRow> rows) {
  nlohmann::json j{{"n", rows.size()}};
  auto block = [&](const char* name, auto get) {
    std::vector<double> s;
    std::vector<int> c;
    for (const auto& r : rows) {
      if (const auto v = get(r); v && r.correct) {
        s.push_back(*v);
        c.push_back(*r.correct ? 1 : 0);
      }
    }
    if (s.empty()) return;
    j[fmt::format("mean_{}", name)] = std::accumulate(s.begin(), s.end(), 0.0) / s.size();
    if (s.size() >= 3) j[name] = to_json(correlate_with_correctness(s, c));
  };
  block("epistemic", [](const ConfidenceRow& r) { return r.epistemic_c; });
  block("aleatoric", [](const ConfidenceRow& r) { return r.aleatoric_c; });
  std::vector<double> e, a;
  for (const auto& r : rows) {
    if (r.epistemic_c && r.aleatoric_c) {
      e.push_back(*r.epistemic_c);
      a.push_back(*r.aleatoric_c);
    }
  }
  if (e.size() >= 3) j["inter"] = to_json(pearson(e, a));
  return j;
}

}  // namespace pocus::uncertainty
