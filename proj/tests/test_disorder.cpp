#include <cmath>
#include <numbers>

#include "gmock/gmock.h"
#include "gtest/gtest.h"

#include "mcascade/disorder.hpp"
#include "oracles.hpp"

namespace {

using mcascade::Disorder;
using mcascade::kBetaCritical;
using mcascade::kLog2;
using mcascade::WeightLaw;
using ::testing::DoubleNear;
using ::testing::HasSubstr;

TEST(Moments, GaussianAtCriticalBetaHasEntropyLog2) {
  const auto m = mcascade::compute_moments(WeightLaw::gaussian(kBetaCritical));
  EXPECT_NEAR(m.x_log_x, kLog2, 1e-15);
  EXPECT_NEAR(m.mean_x, 1.0, 1e-15);
}

TEST(Moments, DeterministicEnvironmentHasZeroEntropy) {
  const auto m = mcascade::compute_moments(WeightLaw::two_point(1.0, 1.0, 0.5));
  EXPECT_EQ(m.x_log_x, 0.0);
  EXPECT_EQ(m.mean_x, 1.0);
}

TEST(Moments, BoundaryGaussianSigmaSquared) {
  // Closed form via the exponential tilt: sigma^2 = beta_c^2 = 2 log 2.
  const auto m = mcascade::compute_moments(WeightLaw::boundary_gaussian());
  EXPECT_NEAR(m.sigma_sq, 2.0 * kLog2, 1e-14);

  // Independent oracle: Simpson quadrature of E(X (log 2 - log X)^2) with X = 2 e^{-W}.
  const double bc = kBetaCritical;
  const double oracle = oracles::gaussian_simpson([&](double z) {
    const double w = bc * z + bc * bc;
    return 2.0 * std::exp(-w) * w * w;
  });
  EXPECT_NEAR(oracle, 2.0 * kLog2, 1e-10);
  EXPECT_NEAR(m.sigma_sq, oracle, 1e-10);
}

TEST(Moments, QuadratureAgreesWithClosedForms) {
  for (const auto& law : {WeightLaw::boundary_gaussian(), WeightLaw::gaussian(0.7),
                          WeightLaw::gaussian(2.0), WeightLaw::gaussian_energy(0.3, 1.1)}) {
    const auto closed = mcascade::compute_moments(law);
    const auto quad = mcascade::quadrature_moments(law);
    EXPECT_NEAR(closed.mean_x, quad.mean_x, 1e-10) << law.kind();
    EXPECT_NEAR(closed.x_log_x, quad.x_log_x, 1e-9) << law.kind();
    EXPECT_NEAR(closed.sigma_sq, quad.sigma_sq, 1e-9) << law.kind();
    EXPECT_NEAR(closed.phi(1.7), quad.phi(1.7), 1e-9) << law.kind();
  }
}

TEST(Moments, EveryBuiltInLawHasMeanOne) {
  for (const auto& law :
       {WeightLaw::gaussian(0.3), WeightLaw::gaussian(3.0), WeightLaw::two_point(2.8, 0.1, 1.0 / 3),
        WeightLaw::two_point(1.0, 1.0, 0.5), WeightLaw::boundary_gaussian(),
        WeightLaw::gaussian_energy(-1.0, 0.5), WeightLaw::two_point_energy(0.1, 2.0, 0.4),
        WeightLaw::constant_energy(kLog2)}) {
    EXPECT_NEAR(mcascade::compute_moments(law).mean_x, 1.0, 1e-10) << law.kind();
    EXPECT_GE(mcascade::compute_moments(law).sigma_sq, 0.0) << law.kind();
  }
}

TEST(Classify, GaussianRegimes) {
  EXPECT_EQ(mcascade::classify_disorder(WeightLaw::gaussian(0.5 * kBetaCritical)).cls,
            Disorder::weak);
  EXPECT_EQ(mcascade::classify_disorder(WeightLaw::gaussian(kBetaCritical)).cls,
            Disorder::critical);
  EXPECT_EQ(mcascade::classify_disorder(WeightLaw::boundary_gaussian()).cls, Disorder::critical);
}

TEST(Classify, TwoPointStrongMarginMatchesDirectEvaluation) {
  const auto dc = mcascade::classify_disorder(WeightLaw::two_point(2.8, 0.1, 1.0 / 3));
  EXPECT_EQ(dc.cls, Disorder::strong);
  const double direct = (1.0 / 3) * 2.8 * std::log(2.8) + (2.0 / 3) * 0.1 * std::log(0.1);
  EXPECT_NEAR(dc.margin, direct - kLog2, 1e-14);
}

TEST(Classify, DeterministicEnvironmentIsWeakWithMarginMinusLog2) {
  const auto dc = mcascade::classify_disorder(WeightLaw::two_point(1.0, 1.0, 0.5));
  EXPECT_EQ(dc.cls, Disorder::weak);
  EXPECT_NEAR(dc.margin, -kLog2, 1e-15);
}

TEST(Classify, GaussianTransitionIsMonotoneInBeta) {
  int previous = 0;
  for (int i = 1; i <= 400; ++i) {
    const double beta = 0.01 * i;
    const int cls = static_cast<int>(mcascade::classify_disorder(WeightLaw::gaussian(beta)).cls);
    EXPECT_GE(cls, previous) << "beta " << beta;
    previous = cls;
  }
  EXPECT_EQ(previous, static_cast<int>(Disorder::strong));
}

TEST(SolveAlpha, GaussianAtTwiceCriticalGivesOneHalf) {
  const auto law = WeightLaw::gaussian(2.0 * kBetaCritical);
  const double alpha = mcascade::solve_alpha(law);
  EXPECT_NEAR(alpha, 0.5, 1e-8);

  // Oracle: bisection on the Simpson-evaluated objective E(Y log Y), Y = X^a / E X^a.
  const double beta = 2.0 * kBetaCritical;
  auto objective = [&](double a) {
    const double ex = oracles::gaussian_simpson(
        [&](double z) { return std::exp(-a * beta * z - 0.5 * a * beta * beta); });
    return oracles::gaussian_simpson([&](double z) {
      const double y = std::exp(-a * beta * z - 0.5 * a * beta * beta) / ex;
      return y * std::log(y);
    });
  };
  const double oracle = oracles::bisect([&](double a) { return objective(a) - kLog2; }, 1e-6,
                                        1.0 - 1e-6, 200);
  EXPECT_NEAR(alpha, oracle, 1e-8);
}

TEST(SolveAlpha, BoundaryFamilyGivesReciprocalBeta) {
  for (double beta : {1.5, 2.0, 4.0}) {
    const auto x_law = mcascade::tilt(WeightLaw::boundary_gaussian(), beta);
    EXPECT_NEAR(mcascade::solve_alpha(x_law), 1.0 / beta, 1e-8) << beta;
  }
}

TEST(SolveAlpha, TwoPointMatchesIndependentBisection) {
  const double a = 2.8, b = 0.1, p = 1.0 / 3;
  const auto law = WeightLaw::two_point(a, b, p);
  const double alpha = mcascade::solve_alpha(law, 1e-10);
  auto objective = [&](double s) {
    const double ex = p * std::pow(a, s) + (1 - p) * std::pow(b, s);
    const double ya = std::pow(a, s) / ex;
    const double yb = std::pow(b, s) / ex;
    return p * ya * std::log(ya) + (1 - p) * yb * std::log(yb);
  };
  const double oracle =
      oracles::bisect([&](double s) { return objective(s) - kLog2; }, 1e-6, 1 - 1e-6, 200);
  EXPECT_NEAR(alpha, oracle, 1e-12);
  EXPECT_LT(std::fabs(objective(alpha) - kLog2), 1e-10);
  // Monotonicity witness.
  EXPECT_LT(mcascade::alpha_objective(law, alpha / 2), kLog2);
}

TEST(SolveAlpha, RejectsLawsWithoutStrictStrongDisorder) {
  EXPECT_THROW(mcascade::solve_alpha(WeightLaw::gaussian(0.5)), mcascade::DomainError);
  EXPECT_THROW(mcascade::solve_alpha(WeightLaw::boundary_gaussian()), mcascade::DomainError);
}

TEST(SolveAlpha, RandomStrongLawsSatisfyDefiningEquation) {
  oracles::LawGenerator gen(11);
  for (int i = 0; i < 200; ++i) {
    const WeightLaw law = gen.strong_law();
    const double alpha = mcascade::solve_alpha(law, 1e-10);
    ASSERT_GT(alpha, 0.0);
    ASSERT_LT(alpha, 1.0);
    EXPECT_LT(std::fabs(mcascade::alpha_objective(law, alpha) - kLog2), 1e-10);
    EXPECT_LT(mcascade::alpha_objective(law, alpha / 2), kLog2);
  }
}

TEST(XToW, GaussianMapsToBoundaryGaussian) {
  for (double beta : {1.5, 2.0, 3.7}) {
    const auto law = WeightLaw::gaussian(beta);
    const auto w = mcascade::x_to_w(law, kBetaCritical / beta);
    EXPECT_EQ(w.kind(), "boundary_gaussian") << beta;
    const auto [r0, r1] = mcascade::boundary_residuals(w);
    EXPECT_LT(std::fabs(r0), 1e-10);
    EXPECT_LT(std::fabs(r1), 1e-10);
  }
}

TEST(XToW, DeterministicEnvironmentMapsToConstantLog2) {
  const auto w = mcascade::x_to_w(WeightLaw::two_point(1.0, 1.0, 0.5), 1.0);
  ASSERT_EQ(w.kind(), "w_constant");
  EXPECT_EQ(std::get<mcascade::law::ConstantEnergy>(w.spec()).value, kLog2);
  EXPECT_EQ(mcascade::boundary_residuals(w).first, 0.0);
}

TEST(XToW, TwoPointResidualsAgainstFiniteSumOracle) {
  const double a = 2.8, b = 0.1, p = 1.0 / 3;
  const auto law = WeightLaw::two_point(a, b, p);
  const double alpha = mcascade::solve_alpha(law);
  const auto w = mcascade::x_to_w(law, alpha);
  // W = log 2 + log E X^alpha - alpha log X, summed directly.
  const double ex = p * std::pow(a, alpha) + (1 - p) * std::pow(b, alpha);
  const double wa = kLog2 + std::log(ex) - alpha * std::log(a);
  const double wb = kLog2 + std::log(ex) - alpha * std::log(b);
  const double e0 = p * std::exp(-wa) + (1 - p) * std::exp(-wb);
  const double e1 = p * wa * std::exp(-wa) + (1 - p) * wb * std::exp(-wb);
  EXPECT_LT(std::fabs(e0 - 0.5), 1e-8);
  EXPECT_LT(std::fabs(e1), 1e-8);
  const auto [r0, r1] = mcascade::boundary_residuals(w);
  EXPECT_LT(std::fabs(r0), 1e-8);
  EXPECT_LT(std::fabs(r1), 1e-8);
  EXPECT_TRUE(w.is_lattice());
}

TEST(XToW, NormalizationPropertyOverRandomStrongLaws) {
  oracles::LawGenerator gen(5);
  for (int i = 0; i < 200; ++i) {
    const WeightLaw law = gen.strong_law();
    const auto w = mcascade::x_to_w(law, mcascade::solve_alpha(law));
    const auto [r0, r1] = mcascade::boundary_residuals(w);
    EXPECT_LT(std::fabs(r0), 1e-8) << law.to_json().dump();
    EXPECT_LT(std::fabs(r1), 1e-8) << law.to_json().dump();
    EXPECT_EQ(mcascade::classify_disorder(w).cls, Disorder::critical);
  }
}

TEST(XToW, RejectsAlphaOutsideUnitInterval) {
  EXPECT_THROW(mcascade::x_to_w(WeightLaw::gaussian(2.0), 0.0), mcascade::DomainError);
  EXPECT_THROW(mcascade::x_to_w(WeightLaw::gaussian(2.0), 1.5), mcascade::DomainError);
}

TEST(SampleW, DeterministicPerStream) {
  mcascade::Stream a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(mcascade::sample_w(WeightLaw::boundary_gaussian(), a),
              mcascade::sample_w(WeightLaw::boundary_gaussian(), b));
  }
}

TEST(SampleW, ConstantLawAlwaysReturnsItsValue) {
  mcascade::Stream s(1);
  const auto law = WeightLaw::constant_energy(kLog2);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(mcascade::sample_w(law, s), kLog2);
}

TEST(SampleW, BoundaryGaussianMeanOfExpMinusW) {
  // Var e^{-W} = E e^{-2W} - 1/4 = e^{-2 bc^2 + 2 bc^2} - 1/4 = 3/4; 3 sigma / sqrt(1e6) ~ 0.0026,
  // inside the 0.002 band with probability ~0.98.
  mcascade::Stream s(20240601);
  const auto law = WeightLaw::boundary_gaussian();
  mcascade::numerics::CompensatedSum sum;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) sum += std::exp(-mcascade::sample_w(law, s));
  EXPECT_NEAR(static_cast<double>(sum.value()) / n, 0.5, 0.002);
}

TEST(LawJson, RoundTripsEveryKind) {
  for (const auto& law :
       {WeightLaw::gaussian(1.3), WeightLaw::two_point(2.8, 0.1, 1.0 / 3),
        WeightLaw::boundary_gaussian(), WeightLaw::gaussian_energy(0.2, 0.9),
        WeightLaw::two_point_energy(0.1, 0.4, 0.25), WeightLaw::constant_energy(kLog2)}) {
    EXPECT_EQ(WeightLaw::from_json(nlohmann::json::parse(law.to_json().dump())), law);
  }
}

TEST(LawJson, MalformedInputNamesTheSchema) {
  try {
    WeightLaw::from_json(nlohmann::json::parse(R"({"kind": "gaussian", "params": {}})"));
    FAIL() << "expected an exception";
  } catch (const std::invalid_argument& e) {
    EXPECT_THAT(e.what(), HasSubstr("expected"));
    EXPECT_THAT(e.what(), HasSubstr("boundary_gaussian"));
  }
  EXPECT_THROW(WeightLaw::from_json(nlohmann::json::parse(R"({"kind": "cauchy"})")),
               std::invalid_argument);
  EXPECT_THROW(WeightLaw::from_json(nlohmann::json::parse(
                   R"({"kind": "two_point", "params": {"a": 2, "b": 2, "p": 0.5}})")),
               std::invalid_argument);
}

TEST(Lattice, FiniteSupportIsLattice) {
  EXPECT_TRUE(WeightLaw::two_point(2.8, 0.1, 1.0 / 3).is_lattice());
  EXPECT_TRUE(WeightLaw::constant_energy(kLog2).is_lattice());
  EXPECT_FALSE(WeightLaw::boundary_gaussian().is_lattice());
  EXPECT_FALSE(WeightLaw::gaussian(2.0).is_lattice());
}

}  // namespace
