#pragma once

#include <array>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pocus::explain {

using Point2 = std::array<double, 2>;

// Median of all pairwise Euclidean distances of the pooled points.
// ValidationError for fewer than 2 points or a zero median.
double median_bandwidth(std::span<const Point2> points);

// k(x, y) = exp(-|x - y|^2 / sigma^2)
double gaussian_kernel(const Point2& a, const Point2& b, double sigma);

struct MmdStatistic {
  double mmd_sq = 0;  // clipped at 0 when within 1e-12 below
  double mmd = 0;
};
// Biased V-statistic. Each of the three kernel means is summed in sorted
// order, so identical multisets give exactly 0.
MmdStatistic mmd(std::span<const Point2> x, std::span<const Point2> y, double sigma);

enum class NullKind { kPermutation, kBootstrap };
std::string to_string(NullKind k);
NullKind parse_null_kind(std::string_view text);

struct ResamplingOptions {
  int n_resamples = 5000;
  std::uint64_t seed = 0;
  NullKind null = NullKind::kPermutation;
  // Permutation null only: when the number of distinct label assignments
  // C(|X|+|Y|, |X|) is at most n_resamples, enumerate them all instead.
  bool exact_when_small = true;
  int threads = 0;  // 0 = hardware concurrency
};

struct MmdResult {
  double mmd_sq = 0;
  double mmd = 0;
  double sigma = 0;
  std::vector<double> null_values;  // mmd_sq under the null
  double p_value = 1;
  bool exact = false;  // null_values enumerate every assignment
  NullKind null = NullKind::kPermutation;
  std::size_t n_x = 0, n_y = 0;
  std::vector<std::string> warnings;
};

// Two-sample test. sigma comes from the pooled points and stays fixed across
// resamples. Monte Carlo p = (1 + #{null >= observed}) / (1 + n); the exact
// variant reports #{null >= observed} / #assignments. Resample r draws from
// its own seed stream, so results do not depend on thread count, and the
// pooled set is put in canonical order, so swapping X and Y changes nothing.
MmdResult resampling_test(std::span<const Point2> x, std::span<const Point2> y, const ResamplingOptions& options = {});

nlohmann::json to_json(const MmdResult& r, bool include_null = false);

}  // namespace pocus::explain
