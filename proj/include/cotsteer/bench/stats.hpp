#pragma once

// Summary statistics and the seeded bootstrap significance test.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/rng.hpp"

namespace cotsteer::bench {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

// Binomial standard error for a success proportion.
inline MeanSe accuracy_stats(int hits, int n) {
  if (n < 1) fail(Errc::bad_request, "accuracy needs at least one record");
  if (hits < 0 || hits > n) fail(Errc::bad_request, "hits out of range");
  const double p = double(hits) / double(n);
  return {p, std::sqrt(p * (1.0 - p) / double(n))};
}

// Mean with standard error of the mean (sample std / sqrt(n)). A single
// value has se 0 by convention; degenerate is set so callers can flag it.
inline MeanSe mean_stats(const std::vector<double>& values, bool* degenerate = nullptr) {
  if (values.empty()) fail(Errc::bad_request, "mean of nothing");
  if (degenerate) *degenerate = values.size() == 1;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= double(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / double(values.size() - 1));
  return {mean, sd / std::sqrt(double(values.size()))};
}

// Table formatting: "0.60 ± 0.05".
inline std::string format_pm(double mean, double se) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f \xC2\xB1 %.2f", mean, se);
  return buf;
}

// Two-sided bootstrap test on the difference of group means. Both groups are
// recentered onto the pooled mean (the null), resampled with replacement, and
// the p-value counts resampled differences at least as extreme as observed,
// with add-one smoothing: p = (c + 1) / (R + 1).
inline double bootstrap_p(const std::vector<double>& a, const std::vector<double>& b,
                          int resamples = 10000, uint64_t seed = 0) {
  if (a.empty() || b.empty()) fail(Errc::empty_pool, "bootstrap needs two nonempty groups");
  if (resamples < 1) fail(Errc::config_invalid, "resamples must be positive");

  const auto mean_of = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / double(v.size());
  };
  const double mean_a = mean_of(a), mean_b = mean_of(b);
  const double observed = mean_a - mean_b;

  double pooled = 0.0;
  for (double x : a) pooled += x;
  for (double x : b) pooled += x;
  pooled /= double(a.size() + b.size());

  std::vector<double> ca(a), cb(b);
  for (double& x : ca) x += pooled - mean_a;
  for (double& x : cb) x += pooled - mean_b;

  Rng rng(seed);
  const auto resample_mean = [&](const std::vector<double>& v) {
    double m = 0.0;
    for (size_t i = 0; i < v.size(); ++i) m += v[rng.next_below(v.size())];
    return m / double(v.size());
  };
  // Ties between resampled and observed differences must count as extreme;
  // without the slack, summation rounding decides degenerate all-tied tests.
  const double tol = 1e-12;
  int extreme = 0;
  for (int r = 0; r < resamples; ++r) {
    const double d = resample_mean(ca) - resample_mean(cb);
    if (std::abs(d) >= std::abs(observed) - tol) ++extreme;
  }
  return double(extreme + 1) / double(resamples + 1);
}

}  // namespace cotsteer::bench
