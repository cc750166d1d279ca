#pragma once

// Limiting cylinder measures of strongly disordered cascades, built on one
// probability space from
//   * a tree-indexed derivative-martingale field {(W_v, D(v))},
//   * the nested intervals I(v) of lengths e^{-H(v)} D(v) tiling [0, D(root)),
//   * a decorated Poisson process with intensity e^x dx dt on a strip,
// so that for every beta > 1 the mass of the cylinder through v is
//   I_{1/beta}(v) / I_{1/beta}(root),
//   I_{1/beta}(v) = sum over centers (x, t) with t/theta in I(v) of
//                   e^{-beta x} sum_{y in decoration} e^{-beta y}.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcascade/cascade.hpp"
#include "mcascade/disorder.hpp"
#include "mcascade/errors.hpp"
#include "mcascade/numerics.hpp"
#include "mcascade/rng.hpp"
#include "mcascade/stats.hpp"
#include "mcascade/vertex.hpp"

namespace mcascade {

// ---------------------------------------------------------------------------
// Derivative martingale field

struct DinftyApprox {
  double d_n = 0.0;          // D_N
  double d_n_minus_1 = 0.0;  // D_{N-1} of the same tree, a convergence diagnostic
};

/// D_N of a fresh depth-N environment, generated level by level. Draws the
/// same weights, in the same order, as simulate_tree on the same stream.
inline DinftyApprox approx_dinfty(const WeightLaw& law, int n, Stream& rng,
                                  int cap = kDefaultDepthCap) {
  check_depth(n, cap);
  const EnergyDistribution dist = law.energy();
  std::vector<double> cur{0.0};
  std::vector<double> next;
  DinftyApprox out;
  for (int j = 1; j <= n; ++j) {
    next.resize(cur.size() * 2);
    for (std::size_t c = 0; c < next.size(); ++c) next[c] = cur[c / 2] + dist.draw(rng);
    cur.swap(next);
    if (j == n - 1) out.d_n_minus_1 = derivative_martingale(cur);
  }
  out.d_n = derivative_martingale(cur);
  return out;
}

/// {(W_v, D(v)) : |v| <= k}; leaves hold positive approximations of D_inf and
/// interior values follow D(v) = D(v,-1) e^{-W_{v,-1}} + D(v,+1) e^{-W_{v,+1}}.
struct DerivativeField {
  int k = 0;
  int leaf_depth = 0;           // N used for the leaf approximations
  std::vector<double> w;        // heap indexed, entries 2 .. 2^{k+1}-1
  std::vector<double> d;        // heap indexed, entries 1 .. 2^{k+1}-1
  std::size_t resampled = 0;    // nonpositive leaf draws discarded
  std::size_t attempts = 0;

  double d_at(const Vertex& v) const { return d[v.heap_index()]; }
  double w_at(const Vertex& v) const { return w[v.heap_index()]; }
  double root() const { return d[1]; }
};

inline constexpr double kDefaultMaxResampleFraction = 0.5;

inline DerivativeField build_field(const WeightLaw& law, int k, int n, Stream& rng,
                                   double max_resample_fraction = kDefaultMaxResampleFraction,
                                   int cap = kDefaultDepthCap) {
  if (k < 0) throw DomainError("build_field needs k >= 0");
  if (n < std::max(k, 1)) throw DomainError("build_field needs N >= max(k, 1)");
  if (k > cap) throw ResourceError("field depth exceeds the cap");
  DerivativeField f;
  f.k = k;
  f.leaf_depth = n;
  const std::size_t size = std::size_t{2} << k;
  f.w.assign(size, 0.0);
  f.d.assign(size, 0.0);
  const std::size_t leaves = std::size_t{1} << k;
  const std::size_t max_attempts = 10 * leaves + 100;
  for (std::size_t c = 0; c < leaves; ++c) {
    for (;;) {
      ++f.attempts;
      const double v = approx_dinfty(law, n, rng, cap).d_n;
      if (v > 0.0) {
        f.d[leaves + c] = v;
        break;
      }
      ++f.resampled;
      const bool too_many =
          f.attempts >= 20 &&
          static_cast<double>(f.resampled) > max_resample_fraction * static_cast<double>(f.attempts);
      if (too_many || f.attempts > max_attempts) {
        throw DegenerateSample("build_field discarded " + std::to_string(f.resampled) + " of " +
                               std::to_string(f.attempts) +
                               " nonpositive leaf draws; is the law boundary-normalized?");
      }
    }
  }
  const EnergyDistribution dist = law.energy();
  for (std::size_t i = 2; i < size; ++i) f.w[i] = dist.draw(rng);
  for (std::size_t i = leaves; i-- > 1;) {
    f.d[i] = f.d[2 * i] * std::exp(-f.w[2 * i]) + f.d[2 * i + 1] * std::exp(-f.w[2 * i + 1]);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Intervals

/// Half-open intervals I(v) = [left, left + length), heap indexed.
struct IntervalTree {
  int k = 0;
  std::vector<double> left;
  std::vector<double> length;

  double left_at(const Vertex& v) const { return left[v.heap_index()]; }
  double length_at(const Vertex& v) const { return length[v.heap_index()]; }
  double total() const { return length[1]; }
};

inline IntervalTree build_intervals(const DerivativeField& f) {
  IntervalTree t;
  t.k = f.k;
  const std::size_t size = std::size_t{2} << f.k;
  t.left.assign(size, 0.0);
  t.length.assign(size, 0.0);
  std::vector<double> energy(size, 0.0);
  t.length[1] = f.d[1];
  for (std::size_t i = 2; i < size; ++i) {
    energy[i] = energy[i / 2] + f.w[i];
    t.length[i] = std::exp(-energy[i]) * f.d[i];
    // Lexicographic prefix sums: a -1 child starts where its parent starts,
    // a +1 child right after its sibling.
    t.left[i] = (i % 2 == 0) ? t.left[i / 2] : t.left[i - 1] + t.length[i - 1];
  }
  return t;
}

/// The depth-j vertex whose interval contains t0.
inline Vertex locate_vertex(const IntervalTree& tree, double t0, int j) {
  if (j < 0 || j > tree.k) throw DomainError("locate_vertex depth outside the stored tree");
  if (!(t0 >= 0.0 && t0 < tree.total())) {
    throw DomainError("locate_vertex: t0 = " + std::to_string(t0) + " outside [0, D(root))");
  }
  std::uint64_t i = 1;
  for (int d = 0; d < j; ++d) i = (t0 < tree.left[2 * i + 1]) ? 2 * i : 2 * i + 1;
  return Vertex::from_heap(i);
}

// ---------------------------------------------------------------------------
// Decorated Poisson process

/// Law of a decoration: one of finitely many atom lists (offsets y >= 0 from
/// the center), picked with the given weights. The default is the single
/// atom at 0.
struct DecorationSpec {
  std::vector<std::vector<double>> options{{0.0}};
  std::vector<double> weights{1.0};

  void validate() const {
    if (options.empty() || options.size() != weights.size()) {
      throw DomainError("decoration needs one weight per atom list");
    }
    for (const auto& o : options) {
      if (o.empty()) throw DomainError("decoration atom lists must be nonempty");
      for (double y : o) {
        if (!(y >= 0.0) || !std::isfinite(y)) throw DomainError("decoration atoms must be >= 0");
      }
    }
    for (double w : weights) {
      if (!(w > 0.0)) throw DomainError("decoration weights must be positive");
    }
  }

  bool is_point_mass_at_zero() const {
    return options.size() == 1 && options[0].size() == 1 && options[0][0] == 0.0;
  }

  std::size_t sample(Stream& rng) const {
    if (options.size() == 1) return 0;
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    const double u = rng.uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

  // E sum_y e^{-beta y}; non-increasing in beta because atoms are >= 0.
  double expected_mass(double beta) const {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double m = 0.0;
    for (std::size_t i = 0; i < options.size(); ++i) {
      double s = 0.0;
      for (double y : options[i]) s += std::exp(-beta * y);
      m += weights[i] / total * s;
    }
    return m;
  }

  // E (sum_y e^{-beta y})^{1/beta}, the decoration's L^beta norm.
  double expected_norm(double beta) const {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double m = 0.0;
    for (std::size_t i = 0; i < options.size(); ++i) {
      double s = 0.0;
      for (double y : options[i]) s += std::exp(-beta * y);
      m += weights[i] / total * std::pow(s, 1.0 / beta);
    }
    return m;
  }

  nlohmann::json to_json() const { return {{"atoms", options}, {"weights", weights}}; }

  static DecorationSpec from_json(const nlohmann::json& j) {
    DecorationSpec s;
    try {
      s.options = j.at("atoms").get<std::vector<std::vector<double>>>();
      s.weights = j.contains("weights") ? j.at("weights").get<std::vector<double>>()
                                        : std::vector<double>(s.options.size(), 1.0);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(
          std::string("malformed decoration JSON (") + e.what() +
          R"(); expected {"atoms": [[y, ...], ...], "weights": [w, ...]})");
    }
    s.validate();
    return s;
  }
};

/// Centers (x, t) on R x [0, T) in increasing x, each with a decoration.
struct DecoratedPPP {
  double strip_length = 0.0;
  std::vector<double> x;
  std::vector<double> t;
  std::vector<std::size_t> deco_offsets{0};  // CSR offsets into deco_values
  std::vector<double> deco_values;
  double beta_min = 0.0;
  double tail_tol = 0.0;
  double tail_bound = 0.0;  // neglected mass / T^beta, any beta >= beta_min

  std::size_t size() const { return x.size(); }
  std::span<const double> decoration(std::size_t i) const {
    return {deco_values.data() + deco_offsets[i], deco_offsets[i + 1] - deco_offsets[i]};
  }
  // log of e^{-beta x_i} sum_y e^{-beta y}.
  double log_contribution(std::size_t i, double beta) const {
    const auto ys = decoration(i);
    if (ys.size() == 1) return -beta * (x[i] + ys[0]);
    double s = 0.0;
    for (double y : ys) s += std::exp(-beta * y);
    return -beta * x[i] + std::log(s);
  }
};

inline constexpr std::size_t kMaxCenters = 10'000'000;

/// Samples centers x_k = log(Gamma_k / T) from unit-rate arrival times
/// Gamma_k (intensity T e^x dx) with t_k uniform on [0, T). Stops at the first
/// K with Gamma_K^{1 - beta_min} / (beta_min - 1) times the expected decoration
/// mass below tail_tol. Every term of I carries the common factor T^beta, so
/// the bound is on the neglected mass in units of T^beta.
inline DecoratedPPP sample_ppp(double strip_length, double beta_min, double tail_tol,
                               const DecorationSpec& decoration, Stream& rng,
                               std::size_t max_centers = kMaxCenters) {
  if (!(strip_length > 0.0)) throw DomainError("sample_ppp needs T > 0");
  if (!(beta_min > 1.0)) throw DomainError("sample_ppp needs beta_min > 1");
  if (!(tail_tol > 0.0)) throw DomainError("sample_ppp needs tail_tol > 0");
  decoration.validate();
  const double mass = decoration.expected_mass(beta_min);
  for (;;) {
    DecoratedPPP p;
    p.strip_length = strip_length;
    p.beta_min = beta_min;
    p.tail_tol = tail_tol;
    double gamma = 0.0;
    for (;;) {
      if (p.x.size() >= max_centers) {
        throw ResourceError("sample_ppp: tail tolerance " + std::to_string(tail_tol) +
                            " not reached within " + std::to_string(max_centers) + " centers");
      }
      gamma += rng.exponential();
      p.x.push_back(std::log(gamma / strip_length));
      double t = strip_length * rng.uniform();
      if (t >= strip_length) t = std::nextafter(strip_length, 0.0);
      p.t.push_back(t);
      const auto& atoms = decoration.options[decoration.sample(rng)];
      p.deco_values.insert(p.deco_values.end(), atoms.begin(), atoms.end());
      p.deco_offsets.push_back(p.deco_values.size());
      if (gamma > 1.0) {
        const double bound = std::pow(gamma, 1.0 - beta_min) / (beta_min - 1.0) * mass;
        if (bound < tail_tol) {
          p.tail_bound = bound;
          break;
        }
      }
    }
    std::vector<double> ts = p.t;
    std::sort(ts.begin(), ts.end());
    if (std::adjacent_find(ts.begin(), ts.end()) == ts.end()) return p;
  }
}

/// T_a N + T_b N' restricted to centers: shifts every center of `a` by
/// shift_a and of `b` by shift_b and merges them in increasing x.
inline DecoratedPPP merge_shifted(const DecoratedPPP& a, double shift_a, const DecoratedPPP& b,
                                  double shift_b) {
  struct Ref {
    double x;
    const DecoratedPPP* src;
    std::size_t i;
  };
  std::vector<Ref> refs;
  refs.reserve(a.size() + b.size());
  for (std::size_t i = 0; i < a.size(); ++i) refs.push_back({a.x[i] + shift_a, &a, i});
  for (std::size_t i = 0; i < b.size(); ++i) refs.push_back({b.x[i] + shift_b, &b, i});
  std::stable_sort(refs.begin(), refs.end(), [](const Ref& l, const Ref& r) { return l.x < r.x; });
  DecoratedPPP out;
  out.strip_length = std::max(a.strip_length, b.strip_length);
  out.beta_min = std::max(a.beta_min, b.beta_min);
  out.tail_tol = std::max(a.tail_tol, b.tail_tol);
  out.tail_bound = a.tail_bound + b.tail_bound;
  for (const Ref& r : refs) {
    out.x.push_back(r.x);
    out.t.push_back(r.src->t[r.i]);
    const auto ys = r.src->decoration(r.i);
    out.deco_values.insert(out.deco_values.end(), ys.begin(), ys.end());
    out.deco_offsets.push_back(out.deco_values.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Limit samples

struct LimitConfig {
  int k = 1;
  int leaf_depth = 18;  // N
  double theta = 1.0;
  double beta_min = 1.5;
  double tail_tol = 1e-2;
  DecorationSpec decoration;
  double max_resample_fraction = kDefaultMaxResampleFraction;
  std::size_t max_centers = kMaxCenters;
  int depth_cap = kDefaultDepthCap;
};

/// One draw of the joint limit object. Immutable once built.
struct LimitSample {
  DerivativeField field;
  IntervalTree intervals;
  DecoratedPPP ppp;
  double theta = 1.0;
  std::vector<std::uint64_t> center_leaf;  // depth-k code of the cylinder holding t/theta
  std::vector<std::size_t> by_t;           // center indices sorted by t

  int k() const { return field.k; }
};

/// Buckets every center into its depth-k cylinder via locate_vertex.
inline void index_centers(LimitSample& s) {
  const std::size_t count = s.ppp.size();
  s.center_leaf.resize(count);
  const double total = s.intervals.total();
  for (std::size_t i = 0; i < count; ++i) {
    double u = s.ppp.t[i] / s.theta;
    if (u >= total) u = std::nextafter(total, 0.0);
    s.center_leaf[i] = locate_vertex(s.intervals, u, s.k()).code();
  }
  s.by_t.resize(count);
  std::iota(s.by_t.begin(), s.by_t.end(), std::size_t{0});
  std::sort(s.by_t.begin(), s.by_t.end(),
            [&](std::size_t a, std::size_t b) { return s.ppp.t[a] < s.ppp.t[b]; });
}

inline LimitSample build_limit_sample(const WeightLaw& law, const LimitConfig& cfg, Stream& rng) {
  if (!(cfg.theta > 0.0)) throw DomainError("theta must be positive");
  LimitSample s;
  s.theta = cfg.theta;
  s.field = build_field(law, cfg.k, cfg.leaf_depth, rng, cfg.max_resample_fraction, cfg.depth_cap);
  s.intervals = build_intervals(s.field);
  s.ppp = sample_ppp(cfg.theta * s.field.root(), cfg.beta_min, cfg.tail_tol, cfg.decoration, rng,
                     cfg.max_centers);
  index_centers(s);
  return s;
}

inline void check_limit_beta(const LimitSample& s, double beta) {
  if (!(beta > 1.0)) {
    throw DomainError("limit functionals need beta > 1 (the Poisson series is not summable at beta = " +
                      std::to_string(beta) + ")");
  }
  if (beta < s.ppp.beta_min) {
    throw DomainError("beta = " + std::to_string(beta) + " is below the truncation's beta_min = " +
                      std::to_string(s.ppp.beta_min));
  }
}

/// I_{1/beta}(v) for every |v| <= k (heap indexed), using the first `centers`
/// centers (all by default).
inline std::vector<double> compute_I(const LimitSample& s, double beta,
                                     std::size_t centers = std::numeric_limits<std::size_t>::max()) {
  check_limit_beta(s, beta);
  const std::size_t leaves = std::size_t{1} << s.k();
  std::vector<numerics::CompensatedSum> acc(leaves);
  const std::size_t count = std::min(centers, s.ppp.size());
  for (std::size_t i = 0; i < count; ++i) {
    acc[s.center_leaf[i]] += std::exp(static_cast<long double>(s.ppp.log_contribution(i, beta)));
  }
  std::vector<double> out(2 * leaves, 0.0);
  for (std::size_t c = 0; c < leaves; ++c) out[leaves + c] = static_cast<double>(acc[c].value());
  for (std::size_t i = leaves; i-- > 1;) out[i] = out[2 * i] + out[2 * i + 1];
  return out;
}

/// prob_{inf,beta}(Delta(v)) = I(v) / I(root), heap indexed.
inline std::vector<double> limit_prob(const LimitSample& s, double beta) {
  std::vector<double> mass = compute_I(s, beta);
  const double root = mass[1];
  if (!(root > 0.0)) throw DegenerateSample("I(root) = 0; resample");
  for (double& m : mass) m /= root;
  return mass;
}

inline std::vector<double> limit_level_masses(const std::vector<double>& heap_masses, int j) {
  const std::size_t base = std::size_t{1} << j;
  return {heap_masses.begin() + static_cast<std::ptrdiff_t>(base),
          heap_masses.begin() + static_cast<std::ptrdiff_t>(2 * base)};
}

/// Index of the center whose t-coordinate equals t0 exactly.
inline std::size_t find_center(const LimitSample& s, double t0) {
  const auto it = std::lower_bound(s.by_t.begin(), s.by_t.end(), t0,
                                   [&](std::size_t i, double v) { return s.ppp.t[i] < v; });
  if (it == s.by_t.end() || s.ppp.t[*it] != t0) {
    throw DomainError("t0 is not the t-coordinate of a Poisson center");
  }
  return *it;
}

/// log C_beta(t0) = log of e^{-beta x} sum_y e^{-beta y} for the center at t0.
inline double log_point_contribution(const LimitSample& s, double t0, double beta) {
  return s.ppp.log_contribution(find_center(s, t0), beta);
}

/// d prob_{inf,beta1} / d prob_{inf,beta2} at the path through the center at t0:
/// C_{beta1}(t0) I_{1/beta2}(root) / (C_{beta2}(t0) I_{1/beta1}(root)).
inline double rn_derivative(const LimitSample& s, double t0, double beta1, double beta2,
                            double i_root1, double i_root2) {
  if (beta1 == beta2) return 1.0;
  const std::size_t i = find_center(s, t0);
  return std::exp(s.ppp.log_contribution(i, beta1) - s.ppp.log_contribution(i, beta2) +
                  std::log(i_root2) - std::log(i_root1));
}

inline double rn_derivative(const LimitSample& s, double t0, double beta1, double beta2) {
  if (beta1 == beta2) {
    find_center(s, t0);
    return 1.0;
  }
  return rn_derivative(s, t0, beta1, beta2, compute_I(s, beta1)[1], compute_I(s, beta2)[1]);
}

/// m i.i.d. depth-j vertices: a center is picked with probability
/// proportional to C_beta(t) and mapped to the cylinder containing t/theta.
inline std::vector<Vertex> genealogy_sample(const LimitSample& s, double beta, int j, std::size_t m,
                                            Stream& rng) {
  check_limit_beta(s, beta);
  if (j < 0 || j > s.k()) throw DomainError("genealogy depth exceeds the stored level");
  const std::size_t count = s.ppp.size();
  if (count == 0) throw DegenerateSample("no Poisson centers");
  std::vector<double> logs(count);
  for (std::size_t i = 0; i < count; ++i) logs[i] = s.ppp.log_contribution(i, beta);
  const double hi = *std::max_element(logs.begin(), logs.end());
  std::vector<double> cumulative(count);
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    acc += std::exp(logs[i] - hi);
    cumulative[i] = acc;
  }
  std::vector<Vertex> out;
  out.reserve(m);
  for (std::size_t d = 0; d < m; ++d) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    const auto i = static_cast<std::size_t>(it - cumulative.begin());
    out.push_back(Vertex(s.k(), s.center_leaf[i]).ancestor(j));
  }
  return out;
}

/// Totally skewed positive (1/beta)-stable subordinator evaluated at time
/// `mass`: E exp(-l S) = exp(-mass * l^{1/beta}). Kanter's representation
/// from a uniform angle and a unit exponential.
inline std::vector<double> stable_cross_check(double beta, double mass, std::size_t m, Stream& rng) {
  if (!(beta > 1.0)) throw DomainError("stable_cross_check needs beta > 1");
  if (!(mass > 0.0)) throw DomainError("stable_cross_check needs mass > 0");
  const double a = 1.0 / beta;
  const double scale = std::pow(mass, beta);
  std::vector<double> out(m);
  for (double& v : out) {
    const double u = std::numbers::pi * rng.uniform_open();
    const double e = rng.exponential();
    const double s = std::sin(a * u) / std::pow(std::sin(u), 1.0 / a) *
                     std::pow(std::sin((1.0 - a) * u) / e, (1.0 - a) / a);
    v = scale * s;
  }
  return out;
}

/// Total-variation distances between depth-k cylinder laws at consecutive
/// grid points.
inline std::vector<double> tv_continuity_probe(const LimitSample& s, std::span<const double> grid) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    check_limit_beta(s, grid[i]);
    if (i > 0 && grid[i] < grid[i - 1]) throw DomainError("beta grid must be sorted");
  }
  std::vector<double> out;
  if (grid.empty()) return out;
  std::vector<double> prev = limit_level_masses(limit_prob(s, grid[0]), s.k());
  for (std::size_t i = 1; i < grid.size(); ++i) {
    std::vector<double> cur = limit_level_masses(limit_prob(s, grid[i]), s.k());
    numerics::CompensatedSum tv;
    for (std::size_t c = 0; c < cur.size(); ++c) tv += std::fabs(cur[c] - prev[c]);
    out.push_back(std::min(1.0, 0.5 * static_cast<double>(tv.value())));
    prev.swap(cur);
  }
  return out;
}

/// Rescales theta so the median of I_{1/beta}(root) over limit samples built
/// with theta0 matches the median of n^{3 beta/2} Z_n(beta). I scales as theta^beta.
inline double calibrate_theta(std::span<const double> finite_scaled_z,
                              std::span<const double> limit_root_mass, double theta0, double beta) {
  const double mf = stats::median(finite_scaled_z);
  const double ml = stats::median(limit_root_mass);
  if (!(mf > 0.0 && ml > 0.0)) throw DomainError("calibrate_theta needs positive medians");
  return theta0 * std::pow(mf / ml, 1.0 / beta);
}

}  // namespace mcascade
