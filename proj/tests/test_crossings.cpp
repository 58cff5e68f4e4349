// Crossing-interval densities, delay relations and persistence
#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "crossint/covmodel.hpp"
#include "crossint/crossings.hpp"

using namespace crossint;

namespace {

CrossingOptions fast(int speed = 6) {
  CrossingOptions o;
  o.mvn.speed = speed;
  return o;
}

// Density1D from samples of a function on a uniform grid, with a closed tail.
Density1D gridded(double dt, std::size_t n, const std::function<double(double)>& f) {
  Density1D d;
  d.t = linspace(0.0, dt * static_cast<double>(n - 1), n);
  for (double t : d.t) d.f.push_back(f(t));
  d.err.assign(n, 0.0);
  d.terr.assign(n, 0.0);
  detail::finish_density(d);
  return d;
}

}  // namespace

// =============================================================================
// First passage and tails
// =============================================================================

TEST(FirstPassage, ValueAtOrigin) {
  const auto d = first_passage_density(CovarianceModel::from_code("LH1"), 0.2, 4, 0.0, fast());
  EXPECT_NEAR(d.f[0], 1.0 / std::numbers::pi, 1e-14);
}

TEST(FirstPassage, NormalizedDiffusion) {
  const auto d = first_passage_density(CovarianceModel::diffusion(2), 0.5, 80, 0.0, fast(7));
  EXPECT_NEAR(d.normalization + d.tail_mass, 1.0, 0.02);
  for (double x : d.f) EXPECT_GE(x, 0.0);
}

TEST(IntervalTail, StartsAtOneAndDecreases) {
  const auto tail = interval_tail(CovarianceModel::from_code("LH1"), 0.2, 40, 0.0, Side::Above, fast());
  EXPECT_NEAR(tail.f[0], 1.0, 1e-14);
  for (std::size_t k = 1; k < tail.f.size(); ++k)
    EXPECT_LE(tail.f[k], tail.f[k - 1] + tail.err[k] + tail.err[k - 1]) << k;
}

TEST(IntervalTail, TailTimesMeanIsFirstPassage) {
  // at u = 0: mu f_A(t) = P(T > t) with mu = pi
  const auto m = CovarianceModel::from_code("LH2");
  const auto fa = first_passage_density(m, 0.25, 24, 0.0, fast());
  const auto tail = interval_tail(m, 0.25, 24, 0.0, Side::Above, fast());
  for (std::size_t k = 0; k < tail.f.size(); ++k)
    EXPECT_NEAR(std::numbers::pi * fa.f[k], tail.f[k], 3.0 * (std::numbers::pi * fa.err[k] + tail.err[k]) + 1e-9) << k;
}

TEST(IntervalTail, DerivativeIsIntervalDensity) {
  const auto m = CovarianceModel::from_code("LH1");
  const double dt = 0.1;
  const auto tail = interval_tail(m, dt, 66, 0.0, Side::Above, fast(4));
  const auto nm = m.normalized();
  LagTable coarse(nm, dt, 67), fine(nm, 0.5 * dt, 133);
  for (long k : {20L, 40L, 60L}) {
    // slope of a quadratic fit to log P(T > t) over t +- 0.5
    Eigen::MatrixXd A(11, 3);
    Eigen::VectorXd y(11);
    for (long j = -5; j <= 5; ++j) {
      const double x = dt * static_cast<double>(j);
      A.row(j + 5) << 1.0, x, x * x;
      y(j + 5) = std::log(tail.f[static_cast<std::size_t>(k + j)]);
    }
    const Eigen::VectorXd c = A.colPivHouseholderQr().solve(y);
    const double deriv = -c(1) * std::exp(c(0));
    const double fc = interval_pdf_value(nm, coarse, k, 0.0, Side::Above, fast(4), 1).value;
    const double ff = interval_pdf_value(nm, fine, 2 * k, 0.0, Side::Above, fast(4), 2).value;
    EXPECT_NEAR(deriv / (2.0 * ff - fc), 1.0, 0.02) << "t = " << static_cast<double>(k) * dt;
  }
}

TEST(IntervalTail, AboveMeanDecreasesWithLevel) {
  const auto m = CovarianceModel::from_code("LH1");
  const auto a = interval_tail(m, 0.25, 40, 0.5, Side::Above, fast());
  const auto b = interval_tail(m, 0.25, 40, 1.0, Side::Above, fast());
  EXPECT_LT(b.mean, a.mean);
}

// =============================================================================
// Interval density
// =============================================================================

TEST(IntervalPdf, LinearNearOrigin) {
  const auto m = CovarianceModel::from_code("LH1").normalized();
  const double dt = 0.05;
  LagTable lags(m, dt, 3);
  const double f1 = interval_pdf_value(m, lags, 1, 0.0, Side::Above, fast(4), 1).value;
  const double f2 = interval_pdf_value(m, lags, 2, 0.0, Side::Above, fast(4), 2).value;
  EXPECT_NEAR(f1 / f2, 0.5, 0.125);
}

TEST(IntervalPdf, RiceMean) {
  const auto d = interval_pdf(CovarianceModel::from_code("LH1"), 0.2, 100, 0.0, Side::Above, fast());
  EXPECT_NEAR(d.normalization + d.tail_mass, 1.0, 0.03);
  EXPECT_NEAR(d.mean / std::numbers::pi, 1.0, 0.01);
  for (double x : d.f) EXPECT_GE(x, 0.0);
}

TEST(IntervalPdf, IrregularLimitMatchesSmallTimes) {
  const auto m = CovarianceModel::from_code("LH7").normalized();
  const double dt = 0.02;
  LagTable lags(m, dt, 9);
  // linear extrapolation of f_T(t) from t = 4 dt, 8 dt to 0
  const double f4 = interval_pdf_value(m, lags, 4, 0.0, Side::Above, fast(4), 4).value;
  const double f8 = interval_pdf_value(m, lags, 8, 0.0, Side::Above, fast(4), 8).value;
  const double extrap = 2.0 * f4 - f8;
  EXPECT_NEAR(irregular_limit(m) / extrap, 1.0, 0.15);
}

TEST(IntervalPdf, IrregularAxisUsesLimit) {
  const auto m = CovarianceModel::from_code("LH5");
  const auto d = interval_pdf(m, 0.25, 8, 0.0, Side::Above, fast(7));
  EXPECT_DOUBLE_EQ(d.f[0], irregular_limit(m.normalized()));
  EXPECT_DOUBLE_EQ(d.f[1], 0.5 * (d.f[0] + d.f[2]));
}

// =============================================================================
// Joint densities
// =============================================================================

TEST(JointPdf, SymmetricAtZeroLevel) {
  JointGrid g;
  g.dt = 0.5;
  g.n1 = g.n2 = 8;
  const auto j = joint_interval_pdf(CovarianceModel::from_code("LH1"), g, 0.0, fast(7));
  EXPECT_EQ((j.f - j.f.transpose()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(j.missing_cells, 0u);
  EXPECT_GE(j.f.minCoeff(), 0.0);
  EXPECT_GE(j.corr, -1.0);
  EXPECT_LE(j.corr, 1.0);
  EXPECT_GE(j.kl, 0.0);
}

TEST(JointPdf, MarginalMatchesIntervalPdf) {
  JointGrid g;
  g.dt = 0.4;
  g.n1 = g.n2 = 36;
  const auto m = CovarianceModel::from_code("LH2");
  const auto j = joint_interval_pdf(m, g, 0.0, fast(7));
  const auto d = interval_pdf(m, g.dt, g.n1, 0.0, Side::Above, fast(7));
  // the row integral misses the mass beyond the grid in t2
  const double cut = d.tail_mass;
  for (long i = 2; i <= 20; i += 3) {
    const auto ii = static_cast<std::size_t>(i);
    std::vector<double> row(j.t2.size()), rerr(j.t2.size());
    for (std::size_t k = 0; k < j.t2.size(); ++k) {
      row[k] = j.f(i, static_cast<Eigen::Index>(k));
      rerr[k] = j.err(i, static_cast<Eigen::Index>(k));
    }
    const double err = trapezoid(j.t2, rerr) + d.err[ii];
    EXPECT_NEAR(trapezoid(j.t2, row), d.f[ii], 3.0 * err + cut * d.f[ii]) << "t1 = " << j.t1[ii];
  }
}

TEST(JointPdf, TripleIntensityBoundsQualifiedIntegrand) {
  const auto m = CovarianceModel::from_code("LH1").normalized();
  const double nu = m.upcrossing_rate(0.0);
  JointGrid g;
  g.dt = 0.5;
  g.n1 = g.n2 = 6;
  const auto j = joint_interval_pdf(m, g, 0.0, fast(6));
  for (long a : {2L, 4L, 6L})
    for (long b : {2L, 5L}) {
      const auto r = triple_crossing_intensity(m, -0.5 * a, 0.0, 0.5 * b, 0.0, fast(6));
      EXPECT_GE(r.value + r.sampling_error, nu * j.f(a, b)) << a << "," << b;
    }
}

TEST(JointPdf, TripleIntensityFactorizes) {
  const auto m = CovarianceModel::diffusion(2);
  const auto r = triple_crossing_intensity(m, -40.0, 0.0, 40.0, 0.0, fast(3));
  const double nu = 1.0 / (2.0 * std::numbers::pi);
  EXPECT_NEAR(r.value / (nu * nu * nu), 1.0, 0.01);
  const auto a = triple_crossing_intensity(m, -1.0, 0.0, 2.5, 0.0, fast(3));
  const auto b = triple_crossing_intensity(m, -2.5, 0.0, 1.0, 0.0, fast(3));
  EXPECT_NEAR(a.value, b.value, a.sampling_error + b.sampling_error + 1e-12);
  EXPECT_THROW(triple_crossing_intensity(m, 1.0, 0.0, 2.0), ConfigError);
}

TEST(TriPdf, TimeReversalSymmetry) {
  BinGrid bins;
  bins.x0 = 0.5;
  bins.width = 1.0;
  bins.n = 3;
  bins.dt = 0.25;
  const auto d = tri_interval_pdf(CovarianceModel::from_code("LH1"), bins, 0.0, fast(8));
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(d.at(a, b, c), d.at(c, b, a));
  EXPECT_EQ(d.missing_cells, 0u);
}

TEST(TriPdf, MaxDimGuard) {
  BinGrid bins;
  bins.n = 40;
  bins.dt = 0.05;
  EXPECT_THROW(tri_interval_pdf(CovarianceModel::from_code("LH1"), bins, 0.0), ConfigError);
}

// =============================================================================
// Delay relations
// =============================================================================

TEST(Delay, ExponentialFixedPoint) {
  const double theta = 0.7;
  const auto fT = gridded(0.01, 6001, [&](double t) { return theta * std::exp(-theta * t); });
  const auto r = delay_relations(fT);
  for (std::size_t i = 0; i < fT.t.size(); i += 500) EXPECT_NEAR(r.fA.f[i], fT.f[i], 2e-4 * theta) << fT.t[i];
}

TEST(Delay, PointMassGivesUniform) {
  const double tau = 2.0, s = 0.02;
  const auto fT = gridded(0.005, 1001, [&](double t) {
    return std::exp(-0.5 * (t - tau) * (t - tau) / (s * s)) / (s * std::sqrt(2.0 * std::numbers::pi));
  });
  const auto r = delay_relations(fT);
  for (double t : {0.2, 0.8, 1.5}) EXPECT_NEAR(r.fA.f[static_cast<std::size_t>(std::lround(t / 0.005))], 1.0 / tau, 1e-3);
  EXPECT_NEAR(r.fA.f[static_cast<std::size_t>(std::lround(2.5 / 0.005))], 0.0, 1e-6);
}

TEST(Delay, InspectionParadox) {
  const auto fT = gridded(0.01, 3001, [](double t) { return t * std::exp(-t); });
  const auto r = delay_relations(fT);
  const auto FT = cumulative(fT), FAB = cumulative(r.fAB);
  for (std::size_t i = 0; i < FT.size(); i += 50) EXPECT_LE(FAB[i], FT[i] + 1e-12);
  // f_{A,B}(a, b) integrates to one over the quadrant
  double s = 0.0;
  for (Eigen::Index a = 0; a < r.joint_AB.rows(); ++a) s += r.joint_AB.row(a).sum();
  EXPECT_NEAR(s * 0.01 * 0.01, 1.0, 0.02);
}

TEST(Delay, RejectsBadInput) {
  auto fT = gridded(0.1, 50, [](double t) { return std::exp(-t); });
  fT.mean = 0.0;
  EXPECT_THROW(delay_relations(fT), ConfigError);
  auto g = gridded(0.1, 50, [](double t) { return 3.0 * std::exp(-t); });
  EXPECT_THROW(delay_relations(g), ConfigError);
}

TEST(Delay, AsymmetricMixture) {
  const auto fp = gridded(0.01, 3001, [](double t) { return std::exp(-t); });
  const auto fm = gridded(0.01, 3001, [](double t) { return 0.5 * std::exp(-0.5 * t); });
  const auto r = delay_relations(fp, fm);
  EXPECT_NEAR(r.p_above, 1.0 / 3.0, 1e-3);
}

// =============================================================================
// Persistence
// =============================================================================

TEST(Persistence, ExponentOfSyntheticCurve) {
  PersistenceCurve c;
  for (int i = 0; i <= 60; ++i) {
    c.T.push_back(0.5 * i);
    c.Q.push_back(std::exp(-0.2 * c.T.back()));
  }
  EXPECT_NEAR(persistence_exponent(c, ExponentFit::Global).theta, 0.2, 1e-12);
  EXPECT_NEAR(persistence_exponent(c, ExponentFit::LocalQuadratic).theta, 0.2, 1e-12);
  EXPECT_NEAR(c.theta_hat, 0.2, 1e-12);
  EXPECT_NEAR(c.local_theta[30], 0.2, 1e-12);
  c.Q[50] = 0.0;
  EXPECT_THROW(persistence_exponent(c), NumericalError);
}

TEST(Persistence, MatchesPureIndicatorProbability) {
  const auto m = CovarianceModel::diffusion(2);
  PersistenceOptions po;
  po.dt = 0.2;
  po.T_max = 4.0;
  po.report_stride = 5;
  po.n_runs = 1;
  po.crossing.mvn.speed = 6;
  const auto c = persistence_QT(m, 0.0, po);
  ASSERT_EQ(c.T.size(), 5u);
  EXPECT_EQ(c.Q[0], 1.0);
  LagTable lags(m, po.dt, 21);
  for (std::size_t i = 1; i < c.T.size(); ++i) {
    const long steps = static_cast<long>(5 * i);
    std::vector<GridVar> vars;
    for (long k = 0; k <= steps; ++k) vars.push_back({GridVar::Value, k});
    MvnProblem p = MvnProblem::unbounded(assemble_covariance(lags, vars));
    p.cov.diagonal().array() += po.crossing.ridge;
    p.lower.setZero();
    MvnOptions mo = detail::cell_options(po.crossing, (i - 1) * 2);
    EXPECT_DOUBLE_EQ(c.Q[i], 2.0 * mvn_probability(p, mo).value) << c.T[i];
  }
}

TEST(Persistence, DiffusionExponent) {
  PersistenceOptions po;
  po.dt = 0.1;
  po.T_max = 30.0;
  po.report_stride = 30;
  po.n_runs = 3;
  po.crossing.mvn.speed = 5;
  auto c = persistence_QT(CovarianceModel::diffusion(2), 0.0, po);
  for (std::size_t i = 1; i < c.Q.size(); ++i) EXPECT_LT(c.Q[i], c.Q[i - 1]);
  const auto e = persistence_exponent(c, ExponentFit::Global);
  EXPECT_NEAR(e.theta, 0.1875, 0.01);
}

TEST(Persistence, NonzeroLevelSumsBothSides) {
  PersistenceOptions po;
  po.dt = 0.25;
  po.T_max = 2.0;
  po.report_stride = 8;
  po.n_runs = 6;
  po.crossing.mvn.speed = 6;
  const auto m = CovarianceModel::from_code("LH1");
  const auto up = persistence_QT(m, 0.5, po);
  const auto down = persistence_QT(m, -0.5, po);
  EXPECT_NEAR(up.Q.back(), down.Q.back(), up.Q_err.back() + down.Q_err.back());
  EXPECT_LT(up.Q.back(), 1.0);
}
