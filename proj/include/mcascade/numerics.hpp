#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <span>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "mcascade/errors.hpp"

namespace mcascade::numerics {

/// Neumaier-compensated accumulator in extended precision.
class CompensatedSum {
 public:
  void add(long double x) noexcept {
    const long double t = sum_ + x;
    if (std::fabs(sum_) >= std::fabs(x)) {
      carry_ += (sum_ - t) + x;
    } else {
      carry_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  CompensatedSum& operator+=(long double x) noexcept {
    add(x);
    return *this;
  }
  long double value() const noexcept { return sum_ + carry_; }

 private:
  long double sum_ = 0.0L;
  long double carry_ = 0.0L;
};

inline double compensated_sum(std::span<const double> xs) {
  CompensatedSum s;
  for (double x : xs) s += x;
  return static_cast<double>(s.value());
}

inline double log_add_exp(double a, double b) noexcept {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::fabs(a - b)));
}

// Max-shifted log(sum(exp(xs))).
inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double hi = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(hi)) return hi;
  CompensatedSum s;
  for (double x : xs) s += std::exp(static_cast<long double>(x - hi));
  return hi + static_cast<double>(std::log(s.value()));
}

/// Adaptive Gauss-Kronrod (7/15) over [lo, hi]; either bound may be infinite,
/// in which case the integrand is mapped onto a finite interval. Throws
/// NumericalError naming `what` when the error estimate misses `abs_tol`
/// (scaled by the L1 norm of f once that exceeds 1).
inline double integrate(const std::function<double(double)>& f, double lo, double hi,
                        const std::string& what, double abs_tol = 1e-10) {
  using boost::math::quadrature::gauss_kronrod;
  double err = 0.0;
  double l1 = 0.0;
  const double value =
      gauss_kronrod<double, 15>::integrate(f, lo, hi, 25, 1e-12, &err, &l1);
  if (!std::isfinite(value) || err > abs_tol * std::max(1.0, l1)) {
    char detail[96];
    std::snprintf(detail, sizeof detail, " (error estimate %.3g, needed %.3g)", err, abs_tol);
    throw NumericalError("quadrature did not converge for " + what + detail);
  }
  return value;
}

/// Expectation of g(N) for standard normal N by quadrature.
inline double gaussian_expectation(const std::function<double(double)>& g, const std::string& what,
                                   double abs_tol = 1e-10) {
  const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return integrate([&](double z) { return g(z) * inv_sqrt_2pi * std::exp(-0.5 * z * z); },
                   -std::numeric_limits<double>::infinity(),
                   std::numeric_limits<double>::infinity(), what, abs_tol);
}

struct BisectionResult {
  double root;
  int iterations;
};

/// Root of an increasing function on [lo, hi]; requires f(lo) < 0 < f(hi).
inline BisectionResult bisect_increasing(const std::function<double(double)>& f, double lo,
                                         double hi, int max_iter = 200) {
  double flo = f(lo);
  double fhi = f(hi);
  if (!(flo < 0.0 && fhi > 0.0)) {
    throw NumericalError("bisection bracket [" + std::to_string(lo) + ", " + std::to_string(hi) +
                         "] has no sign change");
  }
  int it = 0;
  for (; it < max_iter; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double fm = f(mid);
    if (fm == 0.0) return {mid, it + 1};
    if (fm < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {0.5 * (lo + hi), it};
}

}  // namespace mcascade::numerics
