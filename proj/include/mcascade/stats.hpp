#pragma once

// Statistics used by the verification harness: Hill tail-index estimates,
// two-sample Kolmogorov-Smirnov tests, median traces with bootstrap bands,
// and small goodness-of-fit helpers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <span>
#include <utility>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "mcascade/errors.hpp"
#include "mcascade/rng.hpp"

namespace mcascade::stats {

struct TailEstimate {
  double index = 0.0;
  std::size_t k_used = 0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct TestResult {
  double statistic = 0.0;
  double p_approx = 1.0;
  bool reject_at_1pct = false;
  std::pair<std::size_t, std::size_t> sample_sizes{0, 0};
};

inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw DomainError("quantile of an empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline double median(std::span<const double> xs) {
  return quantile(std::vector<double>(xs.begin(), xs.end()), 0.5);
}

/// Hill estimator of the power-law index a in P(X > x) ~ x^{-a}, using the
/// top ceil(top_fraction * n) order statistics against the next one as
/// threshold. The band is the asymptotic normal 95% interval a (1 +- 1.96/sqrt k).
inline TailEstimate hill_index(std::span<const double> samples, double top_fraction = 0.1) {
  if (samples.size() < 100) throw DomainError("hill_index needs at least 100 samples");
  if (!(top_fraction > 0.0 && top_fraction <= 0.5)) {
    throw DomainError("hill_index needs top_fraction in (0, 0.5]");
  }
  std::vector<double> xs(samples.begin(), samples.end());
  for (double x : xs) {
    if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("hill_index needs positive samples");
  }
  std::sort(xs.begin(), xs.end(), std::greater<>());
  const auto k = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(xs.size())));
  const double log_threshold = std::log(xs[k]);
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += std::log(xs[i]) - log_threshold;
  const double gamma = acc / static_cast<double>(k);
  if (!(gamma > 0.0)) throw NumericalError("hill_index: top order statistics are tied");
  TailEstimate t;
  t.index = 1.0 / gamma;
  t.k_used = k;
  const double half = 1.959963984540054 / std::sqrt(static_cast<double>(k));
  t.ci_low = t.index * (1.0 - half);
  t.ci_high = t.index * (1.0 + half);
  return t;
}

/// Survival function of the Kolmogorov distribution,
/// Q(x) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 x^2); below x = 1 the equivalent
/// theta series 1 - sqrt(2 pi)/x sum_{j>=1} exp(-(2j-1)^2 pi^2 / (8 x^2)).
inline double kolmogorov_survival(double x) {
  if (x <= 0.0) return 1.0;
  double sum = 0.0;
  if (x < 1.0) {
    const double c = std::numbers::pi * std::numbers::pi / (8.0 * x * x);
    for (int j = 1; j <= 100; ++j) {
      const double term = std::exp(-(2 * j - 1) * (2 * j - 1) * c);
      sum += term;
      if (term < 1e-18) break;
    }
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / x * sum, 0.0, 1.0);
  }
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * x * x);
    sum += (j % 2 == 1 ? term : -term);
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// Asymptotic critical value of the two-sample statistic at significance `level`.
inline double ks_critical_value(std::size_t n, std::size_t m, double level) {
  const double c = std::sqrt(-0.5 * std::log(level / 2.0));
  return c * std::sqrt(static_cast<double>(n + m) / (static_cast<double>(n) * static_cast<double>(m)));
}

/// Exact sup distance between the two empirical CDFs; asymptotic p-value with
/// Stephens' small-sample correction.
inline TestResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("ks_two_sample needs nonempty samples");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size());
  const double m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  TestResult r;
  r.statistic = d;
  const double ne = std::sqrt(n * m / (n + m));
  r.p_approx = kolmogorov_survival((ne + 0.12 + 0.11 / ne) * d);
  r.reject_at_1pct = r.p_approx < 0.01;
  r.sample_sizes = {x.size(), y.size()};
  return r;
}

/// Pearson chi-square goodness of fit of integer counts to probabilities.
inline TestResult chi_square_gof(std::span<const std::size_t> counts, std::span<const double> probs) {
  if (counts.size() != probs.size() || counts.size() < 2) {
    throw DomainError("chi_square_gof needs matching count/probability vectors of size >= 2");
  }
  std::size_t total = 0;
  for (auto c : counts) total += c;
  double stat = 0.0;
  std::size_t df = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = probs[i] * static_cast<double>(total);
    if (e <= 0.0) continue;
    stat += (static_cast<double>(counts[i]) - e) * (static_cast<double>(counts[i]) - e) / e;
    ++df;
  }
  TestResult r;
  r.statistic = stat;
  r.sample_sizes = {total, counts.size()};
  if (df < 2) {
    r.p_approx = 1.0;
  } else {
    boost::math::chi_squared dist(static_cast<double>(df - 1));
    r.p_approx = boost::math::cdf(boost::math::complement(dist, stat));
  }
  r.reject_at_1pct = r.p_approx < 0.01;
  return r;
}

/// Two-sample test of equal proportions (pooled z statistic, two-sided).
inline TestResult two_proportion_test(std::size_t hits_a, std::size_t n_a, std::size_t hits_b,
                                      std::size_t n_b) {
  if (n_a == 0 || n_b == 0) throw DomainError("two_proportion_test needs nonempty samples");
  const double pa = static_cast<double>(hits_a) / static_cast<double>(n_a);
  const double pb = static_cast<double>(hits_b) / static_cast<double>(n_b);
  const double pooled =
      static_cast<double>(hits_a + hits_b) / static_cast<double>(n_a + n_b);
  const double se = std::sqrt(pooled * (1.0 - pooled) *
                              (1.0 / static_cast<double>(n_a) + 1.0 / static_cast<double>(n_b)));
  TestResult r;
  r.sample_sizes = {n_a, n_b};
  if (se == 0.0) {
    r.statistic = pa == pb ? 0.0 : std::numeric_limits<double>::infinity();
    r.p_approx = pa == pb ? 1.0 : 0.0;
  } else {
    r.statistic = std::fabs(pa - pb) / se;
    boost::math::normal z;
    r.p_approx = 2.0 * boost::math::cdf(boost::math::complement(z, r.statistic));
  }
  r.reject_at_1pct = r.p_approx < 0.01;
  return r;
}

struct TracePoint {
  int n = 0;
  double median = 0.0;
  double band_low = 0.0;
  double band_high = 0.0;
  double deviation = 0.0;  // |median - target|
  std::size_t count = 0;
};

struct ConvergenceTrace {
  std::vector<TracePoint> points;  // ascending n
  bool monotone_approach = true;   // deviation non-increasing in n
};

inline constexpr int kBootstrapResamples = 500;

/// Per-level medians with percentile bootstrap 95% bands.
inline ConvergenceTrace convergence_trace(const std::map<int, std::vector<double>>& values_by_n,
                                          double target, int resamples = kBootstrapResamples,
                                          std::uint64_t bootstrap_seed = 0x5eed) {
  if (values_by_n.size() < 2) throw DomainError("convergence_trace needs at least two levels");
  ConvergenceTrace trace;
  for (const auto& [n, values] : values_by_n) {
    if (values.empty()) throw DomainError("convergence_trace: empty level " + std::to_string(n));
    TracePoint p;
    p.n = n;
    p.count = values.size();
    p.median = median(values);
    p.deviation = std::fabs(p.median - target);
    Stream rng(derive_stream_id(bootstrap_seed, {static_cast<std::uint64_t>(n)}));
    std::vector<double> meds(static_cast<std::size_t>(resamples));
    std::vector<double> resample(values.size());
    for (auto& med : meds) {
      for (auto& x : resample) x = values[rng.below(values.size())];
      med = median(resample);
    }
    p.band_low = quantile(meds, 0.025);
    p.band_high = quantile(meds, 0.975);
    if (!trace.points.empty() && p.deviation > trace.points.back().deviation) {
      trace.monotone_approach = false;
    }
    trace.points.push_back(p);
  }
  return trace;
}

}  // namespace mcascade::stats
