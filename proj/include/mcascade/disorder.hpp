#pragma once

// Weight laws of a binary multiplicative cascade, their moments, the
// weak/critical/strong disorder classification, the strong-disorder exponent
// and the boundary normalization X -> W.
//
// Every law is described through the energy increment W it induces on an
// edge. Laws given in multiplicative form (a mean-one weight X) use W = -log X;
// laws given in energy form specify W directly. With phi(b) = E exp(-b W),
// the cascade weight at inverse temperature b is X_b = exp(-b W) / phi(b).

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mcascade/errors.hpp"
#include "mcascade/numerics.hpp"
#include "mcascade/rng.hpp"

namespace mcascade {

inline const double kLog2 = std::numbers::ln2;
// Critical inverse temperature of the Gaussian cascade, sqrt(2 log 2).
inline const double kBetaCritical = std::sqrt(2.0 * std::numbers::ln2);

namespace law {

// X = exp(-beta N - beta^2/2), N standard normal.
struct Gaussian {
  double beta;
};
// X = a with probability p, b otherwise; p a + (1-p) b = 1.
struct TwoPoint {
  double a, b, p;
};
// W = beta_c N + beta_c^2; satisfies E e^{-W} = 1/2, E W e^{-W} = 0.
struct BoundaryGaussian {};
// W = mean + sd N.
struct GaussianEnergy {
  double mean, sd;
};
// W = w1 with probability p, w2 otherwise.
struct TwoPointEnergy {
  double w1, w2, p;
};
// W = value almost surely.
struct ConstantEnergy {
  double value;
};

}  // namespace law

enum class LawForm { multiplicative, energy };

/// Distribution of the energy increment W: Gaussian or finitely supported.
struct EnergyDistribution {
  bool gaussian = true;
  double mean = 0.0;
  double sd = 0.0;
  std::vector<std::pair<double, double>> atoms;  // (value, probability)

  double draw(Stream& s) const {
    if (gaussian) return mean + sd * s.normal();
    const double u = s.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < atoms.size(); ++i) {
      acc += atoms[i].second;
      if (u < acc) return atoms[i].first;
    }
    return atoms.back().first;
  }

  // log E e^{-bW}, finite where the tilt itself overflows.
  double log_phi(double b) const {
    if (gaussian) return -b * mean + 0.5 * b * b * sd * sd;
    std::vector<double> terms;
    for (auto [w, p] : atoms) terms.push_back(std::log(p) - b * w);
    return numerics::log_sum_exp(terms);
  }

  // Returns (E e^{-bW}, E W e^{-bW}, E W^2 e^{-bW}).
  std::array<double, 3> tilted(double b) const {
    if (gaussian) {
      const double phi = std::exp(-b * mean + 0.5 * b * b * sd * sd);
      const double m = mean - b * sd * sd;
      return {phi, phi * m, phi * (m * m + sd * sd)};
    }
    numerics::CompensatedSum s0, s1, s2;
    for (auto [w, p] : atoms) {
      const long double e = p * std::exp(-static_cast<long double>(b) * w);
      s0 += e;
      s1 += e * w;
      s2 += e * w * w;
    }
    return {static_cast<double>(s0.value()), static_cast<double>(s1.value()),
            static_cast<double>(s2.value())};
  }
};

class WeightLaw {
 public:
  using Spec = std::variant<law::Gaussian, law::TwoPoint, law::BoundaryGaussian,
                            law::GaussianEnergy, law::TwoPointEnergy, law::ConstantEnergy>;

  explicit WeightLaw(Spec spec) : spec_(spec) { validate(); }

  static WeightLaw gaussian(double beta) { return WeightLaw(law::Gaussian{beta}); }
  static WeightLaw two_point(double a, double b, double p) { return WeightLaw(law::TwoPoint{a, b, p}); }
  static WeightLaw boundary_gaussian() { return WeightLaw(law::BoundaryGaussian{}); }
  static WeightLaw gaussian_energy(double mean, double sd) {
    return WeightLaw(law::GaussianEnergy{mean, sd});
  }
  static WeightLaw two_point_energy(double w1, double w2, double p) {
    return WeightLaw(law::TwoPointEnergy{w1, w2, p});
  }
  static WeightLaw constant_energy(double value) { return WeightLaw(law::ConstantEnergy{value}); }

  const Spec& spec() const { return spec_; }

  std::string kind() const {
    static const char* names[] = {"gaussian",   "two_point",   "boundary_gaussian",
                                  "w_gaussian", "w_two_point", "w_constant"};
    return names[spec_.index()];
  }

  LawForm form() const {
    return spec_.index() <= 1 ? LawForm::multiplicative : LawForm::energy;
  }

  // Finitely supported laws are lattice; the Gaussian ones are not.
  bool is_lattice() const { return !energy().gaussian; }

  EnergyDistribution energy() const {
    EnergyDistribution d;
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, law::Gaussian>) {
            d.mean = 0.5 * s.beta * s.beta;
            d.sd = s.beta;
          } else if constexpr (std::is_same_v<T, law::BoundaryGaussian>) {
            d.mean = kBetaCritical * kBetaCritical;
            d.sd = kBetaCritical;
          } else if constexpr (std::is_same_v<T, law::GaussianEnergy>) {
            d.mean = s.mean;
            d.sd = s.sd;
          } else if constexpr (std::is_same_v<T, law::TwoPoint>) {
            d.gaussian = false;
            d.atoms = {{-std::log(s.a), s.p}, {-std::log(s.b), 1.0 - s.p}};
          } else if constexpr (std::is_same_v<T, law::TwoPointEnergy>) {
            d.gaussian = false;
            d.atoms = {{s.w1, s.p}, {s.w2, 1.0 - s.p}};
          } else {
            d.gaussian = false;
            d.atoms = {{s.value, 1.0}};
          }
        },
        spec_);
    return d;
  }

  friend bool operator==(const WeightLaw& a, const WeightLaw& b) {
    return a.to_json() == b.to_json();
  }

  nlohmann::json to_json() const {
    nlohmann::json params = nlohmann::json::object();
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, law::Gaussian>) {
            params["beta"] = s.beta;
          } else if constexpr (std::is_same_v<T, law::TwoPoint>) {
            params["a"] = s.a;
            params["b"] = s.b;
            params["p"] = s.p;
          } else if constexpr (std::is_same_v<T, law::GaussianEnergy>) {
            params["mean"] = s.mean;
            params["sd"] = s.sd;
          } else if constexpr (std::is_same_v<T, law::TwoPointEnergy>) {
            params["w1"] = s.w1;
            params["w2"] = s.w2;
            params["p"] = s.p;
          } else if constexpr (std::is_same_v<T, law::ConstantEnergy>) {
            params["value"] = s.value;
          }
        },
        spec_);
    return {{"kind", kind()}, {"params", params}};
  }

  static constexpr const char* kJsonSchema =
      R"({"kind": "gaussian", "params": {"beta": b}} | )"
      R"({"kind": "two_point", "params": {"a": a, "b": b, "p": p}} | )"
      R"({"kind": "boundary_gaussian", "params": {}} | )"
      R"({"kind": "w_gaussian", "params": {"mean": m, "sd": s}} | )"
      R"({"kind": "w_two_point", "params": {"w1": w1, "w2": w2, "p": p}} | )"
      R"({"kind": "w_constant", "params": {"value": w}})";

  // Throws std::invalid_argument with the schema on malformed input.
  static WeightLaw from_json(const nlohmann::json& j) {
    try {
      const std::string kind = j.at("kind").get<std::string>();
      const nlohmann::json params = j.value("params", nlohmann::json::object());
      auto num = [&](const char* key) { return params.at(key).get<double>(); };
      if (kind == "gaussian") return gaussian(num("beta"));
      if (kind == "two_point") return two_point(num("a"), num("b"), num("p"));
      if (kind == "boundary_gaussian") return boundary_gaussian();
      if (kind == "w_gaussian") return gaussian_energy(num("mean"), num("sd"));
      if (kind == "w_two_point") return two_point_energy(num("w1"), num("w2"), num("p"));
      if (kind == "w_constant") return constant_energy(num("value"));
      throw std::invalid_argument("unknown law kind '" + kind + "'; expected " + kJsonSchema);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(std::string("malformed law JSON (") + e.what() +
                                  "); expected " + kJsonSchema);
    } catch (const DomainError& e) {
      throw std::invalid_argument(std::string("invalid law parameters: ") + e.what());
    }
  }

 private:
  void validate() const {
    std::visit(
        [](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, law::Gaussian>) {
            if (!(s.beta > 0.0)) throw DomainError("gaussian law needs beta > 0");
          } else if constexpr (std::is_same_v<T, law::TwoPoint>) {
            if (!(s.a > 0.0 && s.b > 0.0)) throw DomainError("two_point law needs a, b > 0");
            if (!(s.p >= 0.0 && s.p <= 1.0)) throw DomainError("two_point law needs p in [0,1]");
            if (std::fabs(s.p * s.a + (1.0 - s.p) * s.b - 1.0) > 1e-12) {
              throw DomainError("two_point law needs p a + (1-p) b = 1");
            }
          } else if constexpr (std::is_same_v<T, law::GaussianEnergy>) {
            if (!(s.sd >= 0.0) || !std::isfinite(s.mean)) {
              throw DomainError("w_gaussian law needs finite mean and sd >= 0");
            }
          } else if constexpr (std::is_same_v<T, law::TwoPointEnergy>) {
            if (!(s.p >= 0.0 && s.p <= 1.0)) throw DomainError("w_two_point needs p in [0,1]");
            if (!std::isfinite(s.w1) || !std::isfinite(s.w2)) {
              throw DomainError("w_two_point needs finite values");
            }
          } else if constexpr (std::is_same_v<T, law::ConstantEnergy>) {
            if (!std::isfinite(s.value)) throw DomainError("w_constant needs a finite value");
          }
        },
        spec_);
  }

  Spec spec_;
};

/// Moments of the mean-one weight X = e^{-W} / phi(1).
struct LawMoments {
  double mean_x = 0.0;
  double x_log_x = 0.0;   // E X log X
  double sigma_sq = 0.0;  // E X (log 2 - log X)^2
  std::function<double(double)> phi;  // b -> E e^{-b W}
};

// E e^{-b W}.
inline double phi(const WeightLaw& law, double b) { return law.energy().tilted(b)[0]; }

namespace detail {

// Moments from (E e^{-bW}, E W e^{-bW}, E W^2 e^{-bW}) at b = 0 and b = 1.
inline LawMoments moments_from_tilts(const std::array<double, 3>& t0,
                                     const std::array<double, 3>& t1,
                                     std::function<double(double)> phi_fn) {
  const double phi1 = t1[0];
  const double log_phi1 = std::log(phi1);
  LawMoments m;
  m.mean_x = t1[0] / phi1 * t0[0];
  // log X = -W - log phi(1)
  m.x_log_x = -t1[1] / phi1 - log_phi1;
  const double c = kLog2 + log_phi1;
  m.sigma_sq = (t1[2] + 2.0 * c * t1[1] + c * c * phi1) / phi1;
  m.phi = std::move(phi_fn);
  return m;
}

}  // namespace detail

/// Closed-form moments (Gaussian and finitely supported laws).
inline LawMoments compute_moments(const WeightLaw& law) {
  const EnergyDistribution d = law.energy();
  LawMoments m = detail::moments_from_tilts(d.tilted(0.0), d.tilted(1.0),
                                            [d](double b) { return d.tilted(b)[0]; });
  // For multiplicative laws E X is the defining parameter, not an identity.
  if (const auto* tp = std::get_if<law::TwoPoint>(&law.spec())) {
    m.mean_x = tp->p * tp->a + (1.0 - tp->p) * tp->b;
  } else if (std::holds_alternative<law::Gaussian>(law.spec())) {
    m.mean_x = 1.0;  // E exp(-beta N) = exp(beta^2 / 2)
  }
  return m;
}

/// The same moments evaluated by adaptive quadrature over the Gaussian density
/// (absolute tolerance 1e-10), or by direct finite sums for discrete laws.
inline LawMoments quadrature_moments(const WeightLaw& law) {
  const EnergyDistribution d = law.energy();
  if (!d.gaussian) return compute_moments(law);
  // Exponents are combined so the integrands stay finite in both tails.
  auto tilt = [d](double b) -> std::array<double, 3> {
    const double c = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    const double inf = std::numeric_limits<double>::infinity();
    auto density = [&, c](double z) { return c * std::exp(-b * (d.mean + d.sd * z) - 0.5 * z * z); };
    auto w = [&](double z) { return d.mean + d.sd * z; };
    return {numerics::integrate([&](double z) { return density(z); }, -inf, inf, "E exp(-bW)"),
            numerics::integrate([&](double z) { return w(z) * density(z); }, -inf, inf,
                                "E W exp(-bW)"),
            numerics::integrate([&](double z) { return w(z) * w(z) * density(z); }, -inf, inf,
                                "E W^2 exp(-bW)")};
  };
  LawMoments m = detail::moments_from_tilts(tilt(0.0), tilt(1.0), [tilt](double b) {
    return tilt(b)[0];
  });
  if (const auto* g = std::get_if<law::Gaussian>(&law.spec())) {
    const double beta = g->beta;
    const double c = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    const double inf = std::numeric_limits<double>::infinity();
    m.mean_x = numerics::integrate(
        [beta, c](double z) { return c * std::exp(-beta * z - 0.5 * beta * beta - 0.5 * z * z); },
        -inf, inf, "E X");
  }
  return m;
}

enum class Disorder { weak, critical, strong };

inline const char* to_string(Disorder d) {
  switch (d) {
    case Disorder::weak: return "weak";
    case Disorder::critical: return "critical";
    case Disorder::strong: return "strong";
  }
  return "?";
}

struct DisorderClass {
  Disorder cls;
  double margin;  // E X log X - log 2
};

inline constexpr double kCriticalTolerance = 1e-9;

inline DisorderClass classify_disorder(const WeightLaw& law, double tol = kCriticalTolerance) {
  const double margin = compute_moments(law).x_log_x - kLog2;
  if (std::fabs(margin) <= tol) return {Disorder::critical, margin};
  return {margin < 0.0 ? Disorder::weak : Disorder::strong, margin};
}

/// Entropy of the tilted weight X^a / E X^a, i.e. E(Y log Y) with
/// Y = e^{-aW} / phi(a). Increasing in a.
inline double alpha_objective(const WeightLaw& law, double a) {
  const auto t = law.energy().tilted(a);
  return -a * t[1] / t[0] - std::log(t[0]);
}

inline constexpr double kAlphaLo = 1e-6;
inline constexpr double kAlphaHi = 1.0 - 1e-6;

/// Unique a in (0,1) with alpha_objective(a) = log 2, for a strictly strongly
/// disordered law.
inline double solve_alpha(const WeightLaw& law, double tol = 1e-10) {
  const DisorderClass dc = classify_disorder(law);
  if (dc.cls != Disorder::strong) {
    throw DomainError(std::string("solve_alpha needs strict strong disorder; law is ") +
                      to_string(dc.cls) + " (margin " + std::to_string(dc.margin) + ")");
  }
  const auto res = numerics::bisect_increasing(
      [&](double a) { return alpha_objective(law, a) - kLog2; }, kAlphaLo, kAlphaHi);
  const double residual = std::fabs(alpha_objective(law, res.root) - kLog2);
  if (!(residual < tol)) {
    throw NumericalError("alpha bisection residual " + std::to_string(residual) +
                         " above tolerance");
  }
  return res.root;
}

/// Law of W' = log 2 + log E X^a - a log X, which satisfies E e^{-W'} = 1/2
/// and, when a solves the alpha equation (or a = 1 at criticality),
/// E W' e^{-W'} = 0. In energy terms W' = a W + log 2 + log phi(a).
inline WeightLaw x_to_w(const WeightLaw& law, double a) {
  if (!(a > 0.0 && a <= 1.0)) throw DomainError("x_to_w needs alpha in (0,1]");
  const double shift = kLog2 + std::log(phi(law, a));
  if (!std::isfinite(shift)) throw NumericalError("E X^alpha is not finite");
  const EnergyDistribution d = law.energy();
  if (d.gaussian) {
    const double mean = a * d.mean + shift;
    const double sd = a * d.sd;
    const double bc2 = kBetaCritical * kBetaCritical;
    if (std::fabs(mean - bc2) <= 1e-12 * bc2 && std::fabs(sd - kBetaCritical) <= 1e-12) {
      return WeightLaw::boundary_gaussian();
    }
    return WeightLaw::gaussian_energy(mean, sd);
  }
  if (d.atoms.size() == 1) return WeightLaw::constant_energy(a * d.atoms[0].first + shift);
  const double w1 = a * d.atoms[0].first + shift;
  const double w2 = a * d.atoms[1].first + shift;
  if (w1 == w2) return WeightLaw::constant_energy(w1);
  return WeightLaw::two_point_energy(w1, w2, d.atoms[0].second);
}

/// (E e^{-W} - 1/2, E W e^{-W}) for the energy increment of the law.
inline std::pair<double, double> boundary_residuals(const WeightLaw& law) {
  const auto t = law.energy().tilted(1.0);
  return {t[0] - 0.5, t[1]};
}

inline bool is_boundary_normalized(const WeightLaw& law, double tol = 1e-8) {
  const auto [r0, r1] = boundary_residuals(law);
  return std::fabs(r0) < tol && std::fabs(r1) < tol;
}

/// The multiplicative weight X = e^{-bW} / phi(b) of an energy law at
/// inverse temperature b. For a boundary-normalized law its alpha is 1/b.
inline WeightLaw tilt(const WeightLaw& energy_law, double b) {
  if (!(b > 0.0)) throw DomainError("tilt needs b > 0");
  const EnergyDistribution d = energy_law.energy();
  if (d.gaussian) return WeightLaw::gaussian(b * d.sd);
  const double ph = d.tilted(b)[0];
  if (d.atoms.size() == 1) return WeightLaw::two_point(1.0, 1.0, 0.5);
  const double xa = std::exp(-b * d.atoms[0].first) / ph;
  const double p = d.atoms[0].second;
  // Recompute the second atom from the mean-one constraint to absorb rounding.
  if (p == 1.0) return WeightLaw::two_point(xa, 1.0, 1.0);
  const double xb = (1.0 - p * xa) / (1.0 - p);
  return WeightLaw::two_point(xa, xb, p);
}

/// One draw of the energy increment W (W = -log X for multiplicative laws).
inline double sample_w(const WeightLaw& law, Stream& rng) { return law.energy().draw(rng); }

}  // namespace mcascade
