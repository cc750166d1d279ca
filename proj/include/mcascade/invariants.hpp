#pragma once

// Exact structural identities of finite cascades and of limit samples. Each
// check reports the worst residual it saw; callers compare against the
// tolerance carried with it.

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mcascade/cascade.hpp"
#include "mcascade/limit.hpp"
#include "mcascade/numerics.hpp"

namespace mcascade::invariants {

inline constexpr double kExactTolerance = 1e-12;

struct Check {
  std::string name;
  double worst = 0.0;
  double tolerance = kExactTolerance;
  bool passed() const { return worst <= tolerance; }
};

inline double relative_gap(double a, double b) {
  const double scale = std::max({std::fabs(a), std::fabs(b), std::numeric_limits<double>::min()});
  return std::fabs(a - b) / scale;
}

/// Z_n(beta; v) = e^{-beta W_{v,-1}} Z_n(beta; v,-1) + e^{-beta W_{v,+1}} Z_n(beta; v,+1)
/// for every stored interior vertex, compared in linear scale relative to Z(v).
inline Check z_additivity(const PartitionTable& t, const CascadeRealization& r) {
  Check c{"z_additivity"};
  const std::size_t interior = std::size_t{1} << t.level;
  for (std::size_t i = 1; i < interior; ++i) {
    const double lhs = t.log_z_by_vertex[i];
    const double a = -t.beta * r.w(2 * i) + t.log_z_by_vertex[2 * i];
    const double b = -t.beta * r.w(2 * i + 1) + t.log_z_by_vertex[2 * i + 1];
    // exp(a - lhs) + exp(b - lhs) should be 1.
    c.worst = std::max(c.worst, std::fabs(std::exp(a - lhs) + std::exp(b - lhs) - 1.0));
  }
  return c;
}

inline Check partition_of_unity(const PartitionTable& t) {
  Check c{"partition_of_unity"};
  for (int j = 0; j <= t.level; ++j) {
    const auto masses = level_measures(t, j);
    c.worst = std::max(c.worst, std::fabs(numerics::compensated_sum(masses) - 1.0));
  }
  return c;
}

/// 0 <= (1/beta) log Z_n + min H <= n log 2 / beta, i.e. the two-sided bound
/// e^{-beta min H} <= Z_n <= 2^n e^{-beta min H}. Reports the violation
/// relative to n log 2 / beta (0 when inside).
inline Check free_energy_bounds(const PartitionTable& t) {
  Check c{"free_energy_bounds"};
  const double gap = t.log_z / t.beta + t.min_energy;
  const double upper = t.depth * kLog2 / t.beta;
  const double scale = std::max(upper, std::fabs(t.min_energy));
  c.worst = std::max({0.0, -gap / scale, (gap - upper) / scale});
  return c;
}

inline Check fourier_routes(const FourierCoefficient& f) {
  return {"fourier_route_equality", f.discrepancy(), kFourierRouteTolerance};
}

inline Check field_recursion(const DerivativeField& f) {
  Check c{"field_recursion"};
  const std::size_t interior = std::size_t{1} << f.k;
  for (std::size_t i = 1; i < interior; ++i) {
    const double rhs =
        f.d[2 * i] * std::exp(-f.w[2 * i]) + f.d[2 * i + 1] * std::exp(-f.w[2 * i + 1]);
    c.worst = std::max(c.worst, relative_gap(f.d[i], rhs));
  }
  for (std::size_t i = 1; i < f.d.size(); ++i) {
    if (!(f.d[i] > 0.0)) c.worst = std::numeric_limits<double>::infinity();
  }
  return c;
}

/// Children tile the parent and every level covers [0, D(root)).
inline Check interval_tiling(const IntervalTree& t) {
  Check c{"interval_tiling"};
  const std::size_t interior = std::size_t{1} << t.k;
  if (t.left[1] != 0.0) c.worst = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < interior; ++i) {
    const double scale = t.length[i];
    c.worst = std::max(c.worst, std::fabs(t.left[2 * i] - t.left[i]) / scale);
    c.worst = std::max(c.worst,
                       std::fabs(t.left[2 * i + 1] - (t.left[i] + t.length[2 * i])) / scale);
    c.worst = std::max(c.worst, relative_gap(t.length[2 * i] + t.length[2 * i + 1], t.length[i]));
  }
  for (int j = 0; j <= t.k; ++j) {
    const std::size_t base = std::size_t{1} << j;
    numerics::CompensatedSum total;
    for (std::size_t i = base; i < 2 * base; ++i) total += t.length[i];
    c.worst = std::max(c.worst, relative_gap(static_cast<double>(total.value()), t.total()));
  }
  return c;
}

inline Check i_additivity(std::span<const double> heap_values) {
  Check c{"I_additivity"};
  const std::size_t interior = heap_values.size() / 2;
  for (std::size_t i = 1; i < interior; ++i) {
    c.worst = std::max(c.worst,
                       relative_gap(heap_values[i], heap_values[2 * i] + heap_values[2 * i + 1]));
  }
  return c;
}

inline Check limit_partition_of_unity(std::span<const double> heap_masses) {
  Check c{"limit_partition_of_unity"};
  for (std::size_t base = 1; base < heap_masses.size(); base *= 2) {
    numerics::CompensatedSum s;
    for (std::size_t i = base; i < 2 * base; ++i) s += heap_masses[i];
    c.worst = std::max(c.worst, std::fabs(static_cast<double>(s.value()) - 1.0));
  }
  return c;
}

/// Dropping the second half of the centers moves I(root) by less than
/// 10 tail_tol, measured in units of T^beta like the truncation bound.
inline Check truncation_soundness(const LimitSample& s, double beta) {
  Check c{"truncation_soundness", 0.0, 10.0 * s.ppp.tail_tol};
  const double full = compute_I(s, beta)[1];
  const double half = compute_I(s, beta, s.ppp.size() / 2)[1];
  c.worst = (full - half) / std::pow(s.ppp.strip_length, beta);
  return c;
}

/// rn(b1,b2) rn(b2,b1) = 1 and rn(b1,b3) = rn(b1,b2) rn(b2,b3) at the first
/// `centers` centers.
inline std::vector<Check> rn_identities(const LimitSample& s, double b1, double b2, double b3,
                                        std::size_t centers = 20) {
  Check recip{"rn_reciprocity"};
  Check chain{"rn_chain_rule"};
  const double i1 = compute_I(s, b1)[1];
  const double i2 = compute_I(s, b2)[1];
  const double i3 = compute_I(s, b3)[1];
  const std::size_t count = std::min(centers, s.ppp.size());
  for (std::size_t i = 0; i < count; ++i) {
    const double t0 = s.ppp.t[i];
    const double r12 = rn_derivative(s, t0, b1, b2, i1, i2);
    const double r21 = rn_derivative(s, t0, b2, b1, i2, i1);
    const double r23 = rn_derivative(s, t0, b2, b3, i2, i3);
    const double r13 = rn_derivative(s, t0, b1, b3, i1, i3);
    recip.worst = std::max(recip.worst, std::fabs(r12 * r21 - 1.0));
    chain.worst = std::max(chain.worst, relative_gap(r13, r12 * r23));
  }
  return {recip, chain};
}

}  // namespace mcascade::invariants
