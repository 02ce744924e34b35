#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace dirform {

/// Compensated (Neumaier) accumulator. Reductions that feed reproducibility
/// contracts must go through this, in index order.
struct running_sum {
  double total = 0.0;
  double comp = 0.0;

  void add(double x) {
    const double t = total + x;
    if (std::abs(total) >= std::abs(x))
      comp += (total - t) + x;
    else
      comp += (x - t) + total;
    total = t;
  }

  double value() const { return total + comp; }
};

/// Monte Carlo summary. `seed` records the stream the samples came from;
/// `std_error` is serialized under the key "stderr".
struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t n_samples = 0;
  std::uint64_t seed = 0;
};

inline Estimate mean_stderr(std::span<const double> samples, std::uint64_t seed = 0) {
  if (samples.size() < 2)
    throw std::invalid_argument("mean_stderr: need at least 2 samples");
  running_sum sum;
  for (double x : samples) {
    if (!std::isfinite(x))
      throw std::invalid_argument("mean_stderr: non-finite sample");
    sum.add(x);
  }
  const double n = static_cast<double>(samples.size());
  const double mean = sum.value() / n;
  running_sum sq;
  for (double x : samples) {
    const double d = x - mean;
    sq.add(d * d);
  }
  const double var = std::max(sq.value() / (n - 1.0), 0.0);
  Estimate est;
  est.mean = mean;
  est.std_error = std::sqrt(var / n);
  est.n_samples = static_cast<std::int64_t>(samples.size());
  est.seed = seed;
  return est;
}

/// Two-sample Kolmogorov-Smirnov statistic, sup over the pooled sample of
/// |F_a - F_b|. Ties are resolved by advancing both counts before comparing.
inline double ks_distance(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("ks_distance: empty sample");
  std::vector<double> xs(a.begin(), a.end());
  std::vector<double> ys(b.begin(), b.end());
  for (double v : xs)
    if (!std::isfinite(v)) throw std::invalid_argument("ks_distance: non-finite sample");
  for (double v : ys)
    if (!std::isfinite(v)) throw std::invalid_argument("ks_distance: non-finite sample");
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  const double na = static_cast<double>(xs.size());
  const double nb = static_cast<double>(ys.size());
  std::size_t i = 0, j = 0;
  double sup = 0.0;
  while (i < xs.size() && j < ys.size()) {
    const double v = std::min(xs[i], ys[j]);
    while (i < xs.size() && xs[i] <= v) ++i;
    while (j < ys.size() && ys[j] <= v) ++j;
    sup = std::max(sup, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return sup;
}

/// Decision threshold for a two-sample KS test: scaled term with an absolute
/// floor, threshold = max(scale * sqrt((n_a+n_b)/(n_a n_b)), floor_abs).
inline double ks_threshold(std::int64_t n_a, std::int64_t n_b, double scale = 1.95,
                           double floor_abs = 0.0) {
  if (n_a < 1 || n_b < 1)
    throw std::invalid_argument("ks_threshold: empty sample");
  const double na = static_cast<double>(n_a);
  const double nb = static_cast<double>(n_b);
  return std::max(scale * std::sqrt((na + nb) / (na * nb)), floor_abs);
}

/// Standard normal distribution function.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }

}  // namespace dirform
