// Independent interval approximation: clipped covariance, transforms, poles
#include <gtest/gtest.h>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/owens_t.hpp>
#include <cmath>
#include <numbers>

#include "crossint/covmodel.hpp"
#include "crossint/iia.hpp"
#include "crossint/normal.hpp"

using namespace crossint;

namespace {

// Phi_2(h, h; rho) for h > 0 from Owen's T function
double bivariate_diagonal_cdf(double h, double rho) {
  const double a = std::sqrt((1.0 - rho) / (1.0 + rho));
  return normal::cdf(h) - 2.0 * boost::math::owens_t(h, a);
}

}  // namespace

// =============================================================================
// Clipped covariance
// =============================================================================

TEST(Clipped, ArcsineLawAtZeroLevel) {
  const auto m = CovarianceModel::closed_form(
      [](double t, int n) {
        // rho_t = 0.5 at t = 1 for r(t) = 2^{-t^2}
        const double c = std::log(2.0);
        const double r = std::exp(-c * t * t);
        switch (n) {
          case 0: return r;
          case 1: return -2.0 * c * t * r;
          case 2: return (4.0 * c * c * t * t - 2.0 * c) * r;
          default: return std::nan("");
        }
      },
      2, true, "G2");
  EXPECT_NEAR(clipped_covariance(m, 0.0, 1.0), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(clipped_covariance(m, 0.0, 0.0), 1.0, 1e-12);
}

TEST(Clipped, VarianceAtOrigin) {
  const auto m = CovarianceModel::from_code("LH1");
  for (double u : {0.3, 1.0, -0.7}) {
    const double F = normal::cdf(u);
    EXPECT_NEAR(clipped_covariance(m, u, 0.0), 4.0 * F * (1.0 - F), 1e-10) << u;
  }
}

TEST(Clipped, ArcsineForCatalog) {
  for (const char* code : {"LH1", "LH4", "LH5", "WH3", "BMS2", "WN", "J"}) {
    const auto m = CovarianceModel::from_code(code);
    for (double t : {0.5, 1.0, 2.0, 5.0}) {
      const double rho = m.cov(t) / m.cov(0.0);
      EXPECT_NEAR(clipped_covariance(m, 0.0, t), 2.0 / std::numbers::pi * std::asin(rho), 1e-10) << code << " " << t;
    }
  }
}

TEST(Clipped, BivariateOracleAtNonzeroLevel) {
  const auto m = CovarianceModel::diffusion(2);
  const double u = 1.0, rho = m.cov(2.0);
  const double F = normal::cdf(u);
  const double oracle = 4.0 * (bivariate_diagonal_cdf(u, rho) - F * F);
  EXPECT_NEAR(clipped_covariance(m, u, 2.0), oracle, 1e-8);
  EXPECT_NEAR(clipped_covariance_conditional(m, u, 2.0), oracle, 1e-8);
}

// =============================================================================
// Laplace transforms
// =============================================================================

TEST(Laplace, Exponential) {
  EXPECT_NEAR(laplace_cov([](double t) { return std::exp(-t); }, 1.0), 0.5, 1e-12);
}

TEST(Laplace, HyperbolicSecant) {
  // int e^{-t} sech(t/2) dt = 2 sum (-1)^k / (k + 3/2) = psi(5/4) - psi(3/4)
  const double oracle = boost::math::digamma(1.25) - boost::math::digamma(0.75);
  EXPECT_NEAR(laplace_cov([](double t) { return 1.0 / std::cosh(0.5 * t); }, 1.0), oracle, 1e-8);
}

TEST(Laplace, InitialValue) {
  const auto LR = clipped_laplace(CovarianceModel::diffusion(2));
  EXPECT_NEAR(1e3 * LR(1e3), 1.0, 1e-3);
  EXPECT_GT(LR(0.5), 0.0);
  EXPECT_THROW(LR(-0.6), ConfigError);
}

TEST(Laplace, SeriesApproachesQuadrature) {
  const double q = clipped_laplace(CovarianceModel::diffusion(2))(1.0);
  double prev = 1.0;
  for (int L : {5, 10, 20, 40, 80}) {
    const double gap = std::abs(diffusion2d_laplace(L)(1.0) - q);
    EXPECT_LT(gap, prev) << L;
    prev = gap;
  }
  EXPECT_LT(prev, 5e-3);
}

// =============================================================================
// Psi and the switch process
// =============================================================================

TEST(Psi, OneAtOrigin) {
  const auto LR = diffusion2d_laplace(4);
  EXPECT_EQ(psi_from_cov(LR, kTwoPi, 0.0), 1.0);
  EXPECT_NEAR(psi_from_cov(LR, kTwoPi, 1e-6), 1.0, 1e-4);
}

TEST(Psi, BoundedForPositiveS) {
  const auto LR = clipped_laplace(CovarianceModel::diffusion(2));
  for (double s : {0.05, 0.2, 1.0, 3.0, 10.0}) {
    const double p = psi_from_cov(LR, kTwoPi, s);
    EXPECT_GT(p, -1.0) << s;
    EXPECT_LE(p, 1.0) << s;
  }
}

TEST(Psi, PartialFractionsMatchSeries) {
  const auto a = diffusion2d_series(20);
  EXPECT_NEAR(psi_from_cov(diffusion2d_laplace(20), kTwoPi, 1.0), a.psi(1.0), 1e-10);
}

TEST(Psi, PoleRaises) { EXPECT_THROW(psi_from_cov(2.0, 2.0, 1.0), NumericalError); }

TEST(Switch, TwoStateMarkovChain) {
  const double theta = 0.8, mu = 1.0 / theta;
  auto psi = [&](double s) { return theta / (theta + s); };
  for (double s : {0.3, 1.0, 2.5}) {
    EXPECT_NEAR(switch_cov_laplace(psi, psi, mu, mu, s), 1.0 / (s + 2.0 * theta), 1e-12) << s;
    EXPECT_NEAR(switch_cov_laplace_symmetric(psi(s), mu, s), 1.0 / (s + 2.0 * theta), 1e-12) << s;
  }
  EXPECT_NEAR(switch_cov_laplace(psi, psi, mu, mu, 0.0), 1.0 / (2.0 * theta), 1e-8);
}

TEST(Switch, SymmetricReductionAndSwap) {
  auto pp = [](double s) { return 1.0 / (1.0 + s) / (1.0 + 0.5 * s); };
  auto pm = [](double s) { return 2.0 / (2.0 + s); };
  for (double s : {0.5, 1.0, 2.0}) {
    EXPECT_NEAR(switch_cov_laplace(pp, pp, 1.5, 1.5, s), switch_cov_laplace_symmetric(pp(s), 1.5, s), 1e-12);
    EXPECT_NEAR(switch_cov_laplace(pp, pm, 1.5, 0.5, s), switch_cov_laplace(pm, pp, 0.5, 1.5, s), 1e-12);
  }
  EXPECT_THROW(switch_cov_laplace(pp, pm, 0.0, 1.0, 1.0), ConfigError);
}

TEST(Switch, RoundTrip) {
  // a gamma(2) renewal interval: Psi = (2/(2 + s mu))^2
  const double mu = 1.7;
  auto psi = [&](double s) { return std::pow(2.0 / (2.0 + s * mu), 2); };
  for (double s : {0.5, 1.0, 2.0}) {
    const double LR = switch_cov_laplace_symmetric(psi(s), mu, s);
    EXPECT_NEAR(psi_from_cov(LR, mu, s), psi(s), 1e-8) << s;
  }
}

// =============================================================================
// Persistence exponent of the approximation
// =============================================================================

TEST(Theta, TableOfPoles) {
  const double table[] = {0.2150, 0.1991, 0.1930, 0.1902, 0.1887, 0.1880, 0.1875, 0.1872, 0.1870};
  for (int L = 0; L <= 8; ++L) EXPECT_NEAR(diffusion2d_series(L).theta_L, table[L], 5e-4) << L;
  EXPECT_NEAR(diffusion2d_series(30).theta_L, 0.1863, 5e-4);
}

TEST(Theta, OrderZeroPartialFractions) {
  const auto a = diffusion2d_series(0);
  ASSERT_EQ(a.poles.size(), 2u);
  EXPECT_NEAR(a.poles[0].real(), -0.2150, 5e-5);
  EXPECT_NEAR(a.poles[1].real(), -2.0369, 5e-5);
  EXPECT_NEAR(a.residues[0].real(), 0.2740, 5e-5);
  EXPECT_NEAR(a.residues[1].real(), 1.4779, 5e-5);
  EXPECT_EQ(a.atom_at_zero, -1.0);
  EXPECT_NEAR(a.residues[0].real() / 0.2150 + a.residues[1].real() / 2.0369 - 1.0, 1.0, 1e-3);
}

TEST(Theta, MonotoneAndMassConserving) {
  double prev = 1.0;
  for (int L = 0; L <= 30; ++L) {
    const auto a = diffusion2d_series(L);
    EXPECT_LT(a.theta_L, prev) << L;
    prev = a.theta_L;
    EXPECT_NEAR(a.total_mass(), 1.0, 1e-8) << L;
  }
  EXPECT_NEAR(diffusion2d_series(80).total_mass(), 1.0, 1e-8);
}

TEST(Theta, RootOfDenominatorMatchesPoles) {
  for (int L : {0, 6, 30}) {
    const double th = theta_iia(diffusion2d_laplace(L), kTwoPi);
    EXPECT_NEAR(th, diffusion2d_series(L).theta_L, 1e-9) << L;
  }
}

TEST(Theta, QuadratureWithRationalContinuation) {
  const double th = theta_iia(clipped_laplace(CovarianceModel::diffusion(2)), kTwoPi);
  EXPECT_NEAR(th, 0.1863, 1e-3);
}

// =============================================================================
// Quasi distribution functions
// =============================================================================

TEST(QuasiCdf, AtomAndMass) {
  for (int L : {0, 3, 10}) {
    const auto a = diffusion2d_series(L);
    const auto F = quasi_cdf(a, {0.0, 200.0});
    EXPECT_NEAR(F[0], a.atom_at_zero, 1e-12);
    EXPECT_NEAR(F[1], 1.0, 1e-6);
  }
}

TEST(QuasiCdf, LossOfMonotonicity) {
  const auto a = diffusion2d_series(3);
  std::vector<double> t;
  for (int i = 0; i <= 200; ++i) t.push_back(0.01 * i);
  const auto F = quasi_cdf(a, t);
  bool descent = false;
  for (std::size_t i = 1; i < F.size(); ++i) descent |= F[i] < F[i - 1];
  EXPECT_TRUE(descent);
}

// =============================================================================
// Validity of the approximation
// =============================================================================

namespace {
std::vector<double> s_grid() {
  std::vector<double> s;
  for (double x = 0.05; x <= 50.0; x *= 1.1) s.push_back(x);
  return s;
}
}  // namespace

TEST(Validity, DiffusionViolates) {
  const auto v = iia_validity_check(clipped_spectrum(CovarianceModel::diffusion(2)), s_grid());
  ASSERT_TRUE(v.has_value());
  EXPECT_LE(*v, 50.0);
}

TEST(Validity, ArcsineSeriesSpectrumViolates) {
  const auto v = iia_validity_check(clipped_spectrum(CovarianceModel::from_code("LH1"), 3), s_grid());
  EXPECT_TRUE(v.has_value());
}

TEST(Validity, PointMassEvaluatesOnly) {
  const auto m = SpectralMeasure::point(1.0);
  EXPECT_TRUE(std::isfinite(validity_margin(m, 0.1)));
  EXPECT_GT(validity_margin(m, 0.1), 0.0);
  EXPECT_THROW(iia_validity_check(m, {0.0}), ConfigError);
}

TEST(Validity, SpectrumNormalized) {
  const auto m = clipped_spectrum(CovarianceModel::diffusion(2));
  EXPECT_NEAR(m.total(), 1.0, 1e-12);
  for (double x : m.mass) EXPECT_GE(x, 0.0);
}
