#include "pocus/explain/mmd.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "pocus/error.hpp"
#include "pocus/util.hpp"

namespace pocus::explain {

namespace {

double sq_dist(const Point2& a, const Point2& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

void check_points(std::span<const Point2> pts, const char* what) {
  if (pts.empty()) throw ValidationError(fmt::format("{} point set is empty", what));
  for (const auto& p : pts) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) throw ValidationError(fmt::format("{} has a non-finite point", what));
  }
}

double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  return std::accumulate(v.begin(), v.end(), 0.0);
}

}  // namespace

double median_bandwidth(std::span<const Point2> points) {
  if (points.size() < 2) throw ValidationError("median bandwidth needs at least 2 points");
  std::vector<double> d;
  d.reserve(points.size() * (points.size() - 1) / 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) d.push_back(std::sqrt(sq_dist(points[i], points[j])));
  }
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + mid, d.end());
  double med = d[mid];
  if (d.size() % 2 == 0) med = (med + *std::max_element(d.begin(), d.begin() + mid)) / 2.0;
  if (!(med > 0)) throw ValidationError("median pairwise distance is 0; the kernel is degenerate");
  return med;
}

double gaussian_kernel(const Point2& a, const Point2& b, double sigma) {
  return std::exp(-sq_dist(a, b) / (sigma * sigma));
}

MmdStatistic mmd(std::span<const Point2> x, std::span<const Point2> y, double sigma) {
  check_points(x, "X");
  check_points(y, "Y");
  if (!(sigma > 0) || !std::isfinite(sigma)) throw ValidationError("sigma must be positive");
  auto mean_k = [&](std::span<const Point2> a, std::span<const Point2> b) {
    std::vector<double> k;
    k.reserve(a.size() * b.size());
    for (const auto& p : a) {
      for (const auto& q : b) k.push_back(gaussian_kernel(p, q, sigma));
    }
    return sorted_sum(k) / (double(a.size()) * b.size());
  };
  double s = mean_k(x, x) + mean_k(y, y) - 2.0 * mean_k(x, y);
  if (s < 0) {
    if (s < -1e-12) throw Error(fmt::format("MMD^2 = {} is negative beyond round-off", s));
    s = 0;
  }
  return {s, std::sqrt(s)};
}

std::string to_string(NullKind k) { return k == NullKind::kPermutation ? "permutation" : "bootstrap"; }

NullKind parse_null_kind(std::string_view text) {
  if (text == "permutation") return NullKind::kPermutation;
  if (text == "bootstrap") return NullKind::kBootstrap;
  throw ConfigError(fmt::format("unknown null '{}' (permutation|bootstrap)", text));
}

namespace {

// Pooled kernel matrix with row sums; statistics for a group A and its
// complement B follow from S_AA alone.
class PooledKernel {
 public:
  PooledKernel(const std::vector<Point2>& pts, double sigma) : n_(pts.size()), k_(n_ * n_), row_(n_, 0.0) {
    for (std::size_t i = 0; i < n_; ++i) {
      k_[i * n_ + i] = 1.0;
      for (std::size_t j = i + 1; j < n_; ++j) {
        const double v = gaussian_kernel(pts[i], pts[j], sigma);
        k_[i * n_ + j] = k_[j * n_ + i] = v;
      }
    }
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = 0; j < n_; ++j) row_[i] += k_[i * n_ + j];
      total_ += row_[i];
    }
  }

  std::size_t size() const { return n_; }

  // a: sorted indices of group A.
  double partition_stat(std::span<const std::size_t> a) const {
    double s_aa = 0, r_a = 0;
    for (std::size_t p = 0; p < a.size(); ++p) {
      const double* row = &k_[a[p] * n_];
      double off = 0;
      for (std::size_t q = p + 1; q < a.size(); ++q) off += row[a[q]];
      s_aa += 1.0 + 2.0 * off;
      r_a += row_[a[p]];
    }
    const double na = double(a.size()), nb = double(n_ - a.size());
    const double s_ab = r_a - s_aa;
    const double s_bb = total_ - 2.0 * r_a + s_aa;
    return s_aa / (na * na) + s_bb / (nb * nb) - 2.0 * s_ab / (na * nb);
  }

  // Groups drawn with replacement.
  double sample_stat(std::span<const std::size_t> x, std::span<const std::size_t> y) const {
    auto block = [&](std::span<const std::size_t> a, std::span<const std::size_t> b) {
      double s = 0;
      for (std::size_t i : a) {
        const double* row = &k_[i * n_];
        for (std::size_t j : b) s += row[j];
      }
      return s / (double(a.size()) * b.size());
    };
    return block(x, x) + block(y, y) - 2.0 * block(x, y);
  }

 private:
  std::size_t n_;
  std::vector<double> k_;
  std::vector<double> row_;
  double total_ = 0;
};

// C(n, k), saturating at `cap` + 1.
std::uint64_t n_choose_k(std::uint64_t n, std::uint64_t k, std::uint64_t cap) {
  k = std::min(k, n - k);
  long double c = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    c = c * (n - k + i) / i;
    if (c > cap) return cap + 1;
  }
  return static_cast<std::uint64_t>(std::llround(c));
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t t = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  if (t == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < t; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w * n / t; i < (w + 1) * n / t; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

MmdResult resampling_test(std::span<const Point2> x, std::span<const Point2> y, const ResamplingOptions& options) {
  check_points(x, "X");
  check_points(y, "Y");
  if (options.n_resamples < 1) throw ConfigError("n_resamples must be positive");

  MmdResult r;
  r.null = options.null;
  r.n_x = x.size();
  r.n_y = y.size();
  if (options.n_resamples < 100) {
    r.warnings.push_back(fmt::format("only {} resamples; the p-value is unstable", options.n_resamples));
    spdlog::warn(r.warnings.back());
  }

  // Canonical pooled order: sorted by coordinates, so the roles of X and Y
  // can be exchanged without changing any draw.
  struct Tagged {
    Point2 p;
    bool in_x;
  };
  std::vector<Tagged> pool;
  for (const auto& p : x) pool.push_back({p, true});
  for (const auto& p : y) pool.push_back({p, false});
  std::stable_sort(pool.begin(), pool.end(), [](const Tagged& a, const Tagged& b) { return a.p < b.p; });
  std::vector<Point2> pts;
  for (const auto& t : pool) pts.push_back(t.p);
  const std::size_t n = pts.size();

  r.sigma = median_bandwidth(pts);
  const MmdStatistic obs = mmd(x, y, r.sigma);
  r.mmd_sq = obs.mmd_sq;
  r.mmd = obs.mmd;

  const PooledKernel kernel(pts, r.sigma);
  const std::size_t small = std::min(x.size(), y.size());
  // Observed partition through the same arithmetic as the null draws.
  std::vector<std::size_t> obs_a;
  {
    bool a_is_x = x.size() < y.size() || (x.size() == y.size() && pool[0].in_x);
    for (std::size_t i = 0; i < n; ++i) {
      if (pool[i].in_x == a_is_x) obs_a.push_back(i);
    }
  }
  const double observed = kernel.partition_stat(obs_a);
  const double tol = 1e-12 * std::max(1.0, std::abs(observed));
  const int threads = options.threads > 0 ? options.threads : std::max(1u, std::thread::hardware_concurrency());

  const std::uint64_t cap = static_cast<std::uint64_t>(options.n_resamples);
  const std::uint64_t assignments = n_choose_k(n, small, cap);
  if (options.null == NullKind::kPermutation && options.exact_when_small && assignments <= cap) {
    r.exact = true;
    std::vector<bool> mask(n, false);
    std::fill(mask.begin(), mask.begin() + small, true);
    do {
      std::vector<std::size_t> a;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask[i]) a.push_back(i);
      }
      r.null_values.push_back(kernel.partition_stat(a));
    } while (std::prev_permutation(mask.begin(), mask.end()));
    const auto hits = std::count_if(r.null_values.begin(), r.null_values.end(), [&](double v) { return v >= observed - tol; });
    r.p_value = double(hits) / r.null_values.size();
    return r;
  }

  r.null_values.assign(options.n_resamples, 0.0);
  if (options.null == NullKind::kPermutation) {
    parallel_for(r.null_values.size(), threads, [&](std::size_t i) {
      std::mt19937_64 rng(derive_seed(options.seed, i));
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t k = 0; k < small; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, n - 1);
        std::swap(idx[k], idx[pick(rng)]);
      }
      idx.resize(small);
      std::sort(idx.begin(), idx.end());
      r.null_values[i] = kernel.partition_stat(idx);
    });
  } else {
    parallel_for(r.null_values.size(), threads, [&](std::size_t i) {
      std::mt19937_64 rng(derive_seed(options.seed, i));
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      std::vector<std::size_t> a(x.size()), b(y.size());
      for (auto& v : a) v = pick(rng);
      for (auto& v : b) v = pick(rng);
      r.null_values[i] = kernel.sample_stat(a, b);
    });
  }
  const auto hits = std::count_if(r.null_values.begin(), r.null_values.end(), [&](double v) { return v >= observed - tol; });
  r.p_value = double(1 + hits) / double(1 + r.null_values.size());
  return r;
}

nlohmann::json to_json(const MmdResult& r, bool include_null) {
  nlohmann::json j{{"mmd_sq", r.mmd_sq},   {"mmd", r.mmd},         {"sigma", r.sigma},
                   {"p_value", r.p_value}, {"n_resamples", r.null_values.size()},
                   {"exact", r.exact},     {"null", to_string(r.null)},
                   {"n_x", r.n_x},         {"n_y", r.n_y},         {"warnings", r.warnings}};
  if (include_null) j["null_values"] = r.null_values;
  return j;
}

}  // namespace pocus::explain
