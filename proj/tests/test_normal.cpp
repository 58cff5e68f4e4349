// Univariate normal helpers
#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>

#include "crossint/normal.hpp"

using namespace crossint;
namespace nm = crossint::normal;

// =============================================================================
// cdf / quantile
// =============================================================================

TEST(Normal, CdfMatchesBoost) {
  boost::math::normal_distribution<double> N;
  for (double x : {-30.0, -8.0, -2.5, -0.3, 0.0, 0.7, 3.0, 9.0}) {
    const double ref = boost::math::cdf(N, x);
    EXPECT_NEAR(nm::cdf(x), ref, 1e-15 + 1e-13 * ref) << x;
  }
}

TEST(Normal, QuantileInvertsCdf) {
  for (double p : {1e-300, 1e-20, 1e-5, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-12}) {
    const double x = nm::quantile(p);
    EXPECT_NEAR(nm::cdf(x), p, 1e-13 * p + 1e-300) << p;
  }
  EXPECT_TRUE(std::isinf(nm::quantile(0.0)));
  EXPECT_TRUE(std::isinf(nm::quantile(1.0)));
}

TEST(Normal, IntervalMassFarTail) {
  // P(10 < Z < 11) without cancellation
  boost::math::normal_distribution<double> N;
  const double ref = boost::math::cdf(boost::math::complement(N, 10.0)) - boost::math::cdf(boost::math::complement(N, 11.0));
  EXPECT_NEAR(nm::interval_mass(10.0, 11.0) / ref, 1.0, 1e-12);
  EXPECT_EQ(nm::interval_mass(1.0, 1.0), 0.0);
}

TEST(Normal, TruncatedQuantileStaysInside) {
  for (double w : {1e-12, 0.1, 0.5, 0.9, 1.0 - 1e-12}) {
    const double z = nm::truncated_quantile(8.0, 9.0, w);
    EXPECT_GE(z, 8.0);
    EXPECT_LE(z, 9.0);
    const double back = nm::interval_mass(8.0, z) / nm::interval_mass(8.0, 9.0);
    EXPECT_NEAR(back, w, 1e-9);
  }
}

// =============================================================================
// First-moment weighted normal
// =============================================================================

TEST(Normal, PositivePartMeanOfStandardNormal) {
  EXPECT_NEAR(nm::weighted_mass(0.0, 1.0, nm::WeightSign::Positive), 1.0 / std::sqrt(2.0 * M_PI), 1e-15);
  EXPECT_NEAR(nm::weighted_mass(0.0, 1.0, nm::WeightSign::Absolute), 2.0 / std::sqrt(2.0 * M_PI), 1e-15);
}

TEST(Normal, WeightedMassMatchesQuadrature) {
  using boost::math::quadrature::gauss_kronrod;
  for (double mu : {-2.0, -0.4, 0.0, 1.3}) {
    for (double sd : {0.3, 1.0, 2.5}) {
      auto pos = [&](double x) { return std::max(x, 0.0) * nm::pdf((x - mu) / sd) / sd; };
      auto neg = [&](double x) { return std::max(-x, 0.0) * nm::pdf((x - mu) / sd) / sd; };
      const double ip = gauss_kronrod<double, 61>::integrate(pos, 0.0, std::numeric_limits<double>::infinity());
      const double in = gauss_kronrod<double, 61>::integrate(neg, -std::numeric_limits<double>::infinity(), 0.0);
      EXPECT_NEAR(nm::weighted_mass(mu, sd, nm::WeightSign::Positive), ip, 1e-10);
      EXPECT_NEAR(nm::weighted_mass(mu, sd, nm::WeightSign::Negative), in, 1e-10);
      EXPECT_NEAR(nm::weighted_mass(mu, sd, nm::WeightSign::Absolute), ip + in, 1e-10);
    }
  }
}

TEST(Normal, WeightedQuantileIsInverseCdf) {
  using boost::math::quadrature::gauss_kronrod;
  const double mu = 0.7, sd = 1.4;
  for (auto sign : {nm::WeightSign::Positive, nm::WeightSign::Negative, nm::WeightSign::Absolute}) {
    const double total = nm::weighted_mass(mu, sd, sign);
    for (double u : {0.01, 0.25, 0.5, 0.8, 0.999}) {
      const double z = nm::weighted_quantile(mu, sd, sign, u);
      const double x = mu + sd * z;
      auto w = [&](double y) {
        const double wy = sign == nm::WeightSign::Positive ? std::max(y, 0.0)
                          : sign == nm::WeightSign::Negative ? std::max(-y, 0.0) : std::abs(y);
        return wy * nm::pdf((y - mu) / sd) / sd;
      };
      // cdf of the weighted density at x, split at 0 for the kink
      double F = 0.0;
      if (x > 0.0) {
        F = gauss_kronrod<double, 61>::integrate(w, -std::numeric_limits<double>::infinity(), 0.0) +
            gauss_kronrod<double, 61>::integrate(w, 0.0, x);
      } else {
        F = gauss_kronrod<double, 61>::integrate(w, -std::numeric_limits<double>::infinity(), x);
      }
      EXPECT_NEAR(F / total, u, 1e-8) << "u=" << u;
    }
  }
}

TEST(Normal, WeightedMeanMatchesQuadrature) {
  using boost::math::quadrature::gauss_kronrod;
  const double mu = -0.5, sd = 0.8;
  auto pos = [&](double x) { return ((x - mu) / sd) * std::max(x, 0.0) * nm::pdf((x - mu) / sd) / sd; };
  const double num = gauss_kronrod<double, 61>::integrate(pos, 0.0, std::numeric_limits<double>::infinity());
  EXPECT_NEAR(nm::weighted_mean(mu, sd, nm::WeightSign::Positive),
              num / nm::weighted_mass(mu, sd, nm::WeightSign::Positive), 1e-10);
}
