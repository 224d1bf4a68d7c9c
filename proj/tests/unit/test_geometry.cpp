#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hyem/geometry.hpp"
#include "../support.hpp"

using namespace hyem;
using namespace hyem::geometry;

namespace {

std::vector<double> exp0(const std::vector<double>& u) {
  std::vector<double> y(u.size() + 1);
  exp0_into(u, y);
  return y;
}

}  // namespace

TEST(Geometry, OriginIsOnHyperboloid) {
  auto o = LorentzPoint::origin(4);
  EXPECT_DOUBLE_EQ(lorentz_inner(o.coords(), o.coords()), -1.0);
  EXPECT_DOUBLE_EQ(lorentz_distance(o, o), 0.0);
}

TEST(Geometry, DistanceBetweenUnitTangentAxes) {
  // Points (cosh 1, sinh 1, 0) and (cosh 1, 0, sinh 1): -<x,y>_L = cosh^2(1).
  const double c = std::cosh(1.0);
  const double expected = std::acosh(c * c);
  auto a = exp0({1.0, 0.0});
  auto b = exp0({0.0, 1.0});
  EXPECT_NEAR(a[0], c, 1e-15);
  EXPECT_NEAR(a[1], std::sinh(1.0), 1e-15);
  EXPECT_NEAR(lorentz_distance(a, b), expected, 1e-12);
  EXPECT_NEAR(expected, 1.5134, 1e-4);
}

TEST(Geometry, RadiusEqualsTangentNorm) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    auto u = check::random_vector(rng, 8, 6.0);
    auto y = exp0(u);
    EXPECT_NEAR(lorentz_inner(y, y), -1.0, 1e-9 * y[0] * y[0]);
    auto o = LorentzPoint::origin(8);
    EXPECT_NEAR(lorentz_distance(o.coords(), y), norm(u), 1e-9 * std::max(1.0, norm(u)));
  }
}

TEST(Geometry, ExpLogRoundTrip) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 500; ++t) {
    auto u = check::random_vector(rng, 16, 5.0);
    auto y = exp0(u);
    std::vector<double> back(u.size());
    log0_into(y, back);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(back[i], u[i], 1e-9 * std::max(1.0, norm(u)));
  }
  std::vector<double> zero(3, 0.0), out(3, 7.0);
  log0_into(exp0(zero), out);
  for (double x : out) EXPECT_EQ(x, 0.0);
}

TEST(Geometry, TypedApiRoundTrips) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    TangentVector u(check::random_vector(rng, 5, 4.0));
    auto y = lorentz_exp0(u);
    auto p = lorentz_to_poincare(y);
    EXPECT_LT(p.norm(), 1.0);
    auto y2 = poincare_to_lorentz(p);
    EXPECT_LT(lorentz_distance(y, y2), 1e-6);
    auto u2 = poincare_log0(poincare_exp0(u));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(u2[i], u[i], 1e-6);
    auto v = lorentz_log0(y);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(v[i], u[i], 1e-9);
  }
}

TEST(Geometry, PoincareAndLorentzDistancesAgree) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    TangentVector u(check::random_vector(rng, 6, 3.0)), v(check::random_vector(rng, 6, 3.0));
    const double dl = lorentz_distance(lorentz_exp0(u), lorentz_exp0(v));
    const double dp = poincare_distance(poincare_exp0(u), poincare_exp0(v));
    EXPECT_NEAR(dl, dp, 1e-7 * std::max(1.0, dl));
  }
}

TEST(Geometry, MetricAxioms) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 300; ++t) {
    auto a = exp0(check::random_vector(rng, 4, 3.0));
    auto b = exp0(check::random_vector(rng, 4, 3.0));
    auto c = exp0(check::random_vector(rng, 4, 3.0));
    const double ab = lorentz_distance(a, b), ba = lorentz_distance(b, a);
    EXPECT_GE(ab, 0.0);
    EXPECT_NEAR(ab, ba, 1e-12 * std::max(1.0, ab));
    EXPECT_LE(ab, lorentz_distance(a, c) + lorentz_distance(c, b) + 1e-9);
    EXPECT_DOUBLE_EQ(lorentz_distance(a, a), 0.0);
  }
}

TEST(Geometry, NearCoincidentPointsStayFinite) {
  // Separation well below the clamp threshold: distance must match the
  // Euclidean gap at the origin, not collapse to zero or NaN.
  for (double s : {1e-3, 1e-5, 1e-7, 1e-9}) {
    auto a = exp0({0.0, 0.0});
    auto b = exp0({s, 0.0});
    const double d = lorentz_distance(a, b);
    EXPECT_TRUE(std::isfinite(d));
    EXPECT_NEAR(d, s, 1e-6 * s + 1e-15);
  }
  // Far from the origin the gap is computed without cancellation too.
  auto p = exp0({2.0, 0.0});
  auto q = exp0({2.0 + 1e-6, 0.0});
  EXPECT_NEAR(lorentz_distance(p, q), 1e-6, 1e-9);
}

TEST(Geometry, ArcoshClampHandlesBelowDomain) {
  EXPECT_EQ(arcosh_clamped(0.999999), 0.0);
  EXPECT_EQ(arcosh_clamped(1.0), 0.0);
  const double z = 1.0 + 1e-9;
  const double gap = z - 1.0;  // exact in binary, not 1e-9
  EXPECT_NEAR(arcosh_clamped(z), std::sqrt(2.0 * gap) * (1.0 - gap / 12.0), 1e-15);
  EXPECT_NEAR(arcosh_clamped(2.0), std::acosh(2.0), 1e-15);
}

TEST(Geometry, CurvatureConfigValidation) {
  CurvatureConfig ok;
  EXPECT_NO_THROW(ok.validate());
  CurvatureConfig bad;
  bad.curvature = -2.0;
  EXPECT_THROW(bad.validate(), Error);
  CurvatureConfig eps;
  eps.epsilon_clamp = 0.0;
  EXPECT_THROW(eps.validate(), Error);
  EXPECT_THROW(TangentVector({std::nan(""), 0.0}), Error);
}

TEST(Geometry, TangentMapIsBiLipschitzWithinRadius) {
  std::mt19937_64 rng(6);
  for (double R : {0.5, 1.0, 2.0, 3.0}) {
    const double kap = kappa(R);
    for (int t = 0; t < 2000; ++t) {
      auto u = check::random_vector(rng, 8, R);
      auto v = check::random_vector(rng, 8, R);
      double e = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) e += (u[i] - v[i]) * (u[i] - v[i]);
      e = std::sqrt(e);
      const double d = tangent_pair_distance(u, v);
      EXPECT_GE(d, e * (1.0 - 1e-9)) << "R=" << R;
      EXPECT_LE(d, kap * e * (1.0 + 1e-9)) << "R=" << R;
    }
  }
}

TEST(Geometry, DistanceGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  DistanceScratch scratch;
  for (int t = 0; t < 100; ++t) {
    auto u = check::random_vector(rng, 6, 2.5);
    auto v = check::random_vector(rng, 6, 2.5);
    std::vector<double> gu(6), gv(6);
    tangent_distance_grad(u, v, gu, gv, scratch);
    for (std::size_t i = 0; i < 6; ++i) {
      const double fu = check::central_difference([&] { return tangent_pair_distance(u, v); }, u[i]);
      const double fv = check::central_difference([&] { return tangent_pair_distance(u, v); }, v[i]);
      EXPECT_LT(std::abs(fu - gu[i]), 1e-5 * std::max(1.0, std::abs(fu)));
      EXPECT_LT(std::abs(fv - gv[i]), 1e-5 * std::max(1.0, std::abs(fv)));
    }
  }
}

TEST(Geometry, DistanceGradientAtCoincidenceIsZero) {
  DistanceScratch scratch;
  std::vector<double> u{0.3, -0.2}, gu(2, 9.0), gv(2, 9.0);
  EXPECT_EQ(tangent_distance_grad(u, u, gu, gv, scratch), 0.0);
  for (double g : gu) EXPECT_EQ(g, 0.0);
  for (double g : gv) EXPECT_EQ(g, 0.0);
}

TEST(Theory, KappaValues) {
  EXPECT_NEAR(kappa(3.0), std::sinh(3.0) / 3.0, 1e-15);
  EXPECT_NEAR(kappa(3.0), 3.3393, 5e-5);
  EXPECT_NEAR(kappa(1e-8), 1.0, 1e-15);
  EXPECT_THROW(kappa(0.0), Error);
  EXPECT_THROW(kappa(-1.0), Error);
}

TEST(Theory, OversamplingThreshold) {
  EXPECT_EQ(oversampling_threshold(3.0, 10), 34u);
  EXPECT_EQ(oversampling_threshold(1.0, 5), 6u);
  EXPECT_EQ(oversampling_threshold(1e-9, 10), 10u);
  EXPECT_EQ(oversampling_threshold(2.0, 1), static_cast<std::size_t>(std::ceil(std::sinh(2.0) / 2.0)));
  EXPECT_THROW(oversampling_threshold(1.0, 0), Error);
}

TEST(Theory, RequiredRadius) {
  EXPECT_NEAR(required_radius(20, 5.0, 32), 20.0 * std::log(5.0) / 31.0, 1e-15);
  EXPECT_NEAR(required_radius(20, 5.0, 32), 1.04, 5e-3);
  EXPECT_THROW(required_radius(0, 5.0, 32), Error);
  EXPECT_THROW(required_radius(3, 1.0, 32), Error);
  EXPECT_THROW(required_radius(3, 2.0, 1), Error);
}
