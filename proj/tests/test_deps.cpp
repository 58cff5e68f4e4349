// Dependence measures, Markov kernel and the three-interval Markov test
#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>

#include "crossint/deps.hpp"

using namespace crossint;

namespace {

std::vector<double> unit_grid(int n) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = static_cast<double>(i) / (n - 1);
  return x;
}

template <class F>
JointDensity2D tabulate(int n, F f) {
  JointDensity2D j;
  j.t1 = unit_grid(n);
  j.t2 = unit_grid(n);
  j.f.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) j.f(i, k) = f(j.t1[static_cast<std::size_t>(i)], j.t2[static_cast<std::size_t>(k)]);
  joint_summaries(j);
  return j;
}

double continuous_kl_linear() {
  // f = x + y on the unit square; both marginals are x + 1/2
  using boost::math::quadrature::gauss_kronrod;
  auto inner = [](double x) {
    return gauss_kronrod<double, 61>::integrate(
        [x](double y) {
          const double f = x + y;
          return f > 0.0 ? f * std::log(f / ((x + 0.5) * (y + 0.5))) : 0.0;
        },
        0.0, 1.0, 10, 1e-13);
  };
  return gauss_kronrod<double, 61>::integrate(inner, 0.0, 1.0, 10, 1e-12);
}

}  // namespace

// =============================================================================
// Correlation and KL distance
// =============================================================================

TEST(Dependence, ProductDensityIsIndependent) {
  const auto j = tabulate(41, [](double x, double y) { return std::exp(-2.0 * x) * (1.0 + y * y); });
  EXPECT_NEAR(interval_correlation(j), 0.0, 1e-10);
  EXPECT_NEAR(kl_distance(j), 0.0, 1e-6);
}

TEST(Dependence, LinearDensityCorrelation) {
  // f = x + y: E X = 7/12, Var X = 11/144, Cov = -1/144
  const auto j = tabulate(401, [](double x, double y) { return x + y; });
  EXPECT_NEAR(interval_correlation(j), -1.0 / 11.0, 1e-4);
}

TEST(Dependence, LinearDensityKl) {
  const auto j = tabulate(401, [](double x, double y) { return x + y; });
  EXPECT_NEAR(kl_distance(j), continuous_kl_linear(), 1e-4);
}

TEST(Dependence, CorrelationSignFollowsDependence) {
  const auto pos = tabulate(101, [](double x, double y) { return std::exp(-8.0 * (x - y) * (x - y)); });
  const auto neg = tabulate(101, [](double x, double y) { return std::exp(-8.0 * (x + y - 1.0) * (x + y - 1.0)); });
  EXPECT_GT(interval_correlation(pos), 0.1);
  EXPECT_LT(interval_correlation(neg), -0.1);
  EXPECT_NEAR(interval_correlation(pos), -interval_correlation(neg), 1e-10);
}

TEST(Dependence, DegenerateMarginalThrows) {
  JointDensity2D j;
  j.t1 = unit_grid(5);
  j.t2 = unit_grid(5);
  j.f = Eigen::MatrixXd::Zero(5, 5);
  j.f(2, 1) = 1.0;
  j.f(2, 3) = 1.0;
  EXPECT_THROW(interval_correlation(j), NumericalError);
}

// =============================================================================
// Markov kernel
// =============================================================================

TEST(Markov, RowsSumToOne) {
  const auto j = tabulate(21, [](double x, double y) { return std::exp(-3.0 * (x - y) * (x - y)) * (1.0 + x); });
  const auto m = markov_transition(j);
  for (Eigen::Index r = 0; r < m.P.rows(); ++r) EXPECT_NEAR(m.P.row(r).sum(), 1.0, 1e-12) << r;
  double s = 0.0;
  for (double p : m.stationary) s += p;
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_TRUE(m.dropped.empty());
}

TEST(Markov, ZeroRowsAreDropped) {
  auto j = tabulate(6, [](double x, double y) { return 1.0 + x * y; });
  j.f.row(0).setZero();
  const auto m = markov_transition(j);
  ASSERT_EQ(m.dropped.size(), 1u);
  EXPECT_EQ(m.dropped[0], 0u);
  EXPECT_EQ(m.P.row(0).sum(), 0.0);
}

TEST(Markov, ProductDensityRowsEqualMarginal) {
  const auto j = tabulate(11, [](double x, double y) { return (1.0 + x) * (2.0 - y); });
  const auto m = markov_transition(j);
  double z = 0.0;
  for (int k = 0; k < 11; ++k) z += 2.0 - j.t2[static_cast<std::size_t>(k)];
  for (int r = 0; r < 11; ++r)
    for (int k = 0; k < 11; ++k) EXPECT_NEAR(m.P(r, k), (2.0 - j.t2[static_cast<std::size_t>(k)]) / z, 1e-14);
}

TEST(Markov, ConditionalDensityHasUnitMass) {
  const auto j = tabulate(31, [](double x, double y) { return std::exp(-(x - y) * (x - y)); });
  for (std::size_t r : {0u, 10u, 30u}) EXPECT_NEAR(trapezoid(j.t2, conditional_density(j, r)), 1.0, 1e-12);
}

TEST(Markov, NonSquareGridRejected) {
  JointDensity2D j;
  j.t1 = unit_grid(3);
  j.t2 = unit_grid(4);
  j.f = Eigen::MatrixXd::Ones(3, 4);
  EXPECT_THROW(markov_transition(j), ConfigError);
}

// =============================================================================
// Three-interval test
// =============================================================================

TEST(MarkovTest, ExactChainHasNoDeviation) {
  const auto j = tabulate(12, [](double x, double y) { return std::exp(-4.0 * (x - y) * (x - y)) + 0.1; });
  const auto f3 = markov_extension(j);
  const auto r = markov_test(f3, j);
  EXPECT_LT(r.max_dev, 1e-12);
  EXPECT_LT(r.mean_dev, 1e-12);
  EXPECT_FALSE(r.slices.empty());
}

TEST(MarkovTest, ExtensionReproducesPairMarginal) {
  const auto j = tabulate(8, [](double x, double y) { return 1.0 + x + 2.0 * y * y; });
  const auto f3 = markov_extension(j);
  for (std::size_t a = 0; a < 8; ++a)
    for (std::size_t b = 0; b < 8; ++b) {
      double s = 0.0;
      for (std::size_t c = 0; c < 8; ++c) s += f3.at(a, b, c);
      EXPECT_NEAR(s, j.f(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)), 1e-12);
    }
}

TEST(MarkovTest, SecondOrderDependenceDetected) {
  // T2 depends on T0 only: the chain on (T1, T2) misses it
  const int n = 10;
  const auto x = unit_grid(n);
  TriDensity f3;
  f3.x = x;
  f3.f.resize(n * n * n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c)
        f3.f[static_cast<std::size_t>((a * n + b) * n + c)] = std::exp(-6.0 * (x[a] - x[c]) * (x[a] - x[c]));
  JointDensity2D j2;
  j2.t1 = x;
  j2.t2 = x;
  j2.f = Eigen::MatrixXd::Zero(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c) j2.f(b, c) += f3.at(a, b, c);
  const auto r = markov_test(f3, j2);
  EXPECT_GT(r.max_dev, 0.05);
  EXPECT_GT(r.mean_dev, 0.1);
}

TEST(MarkovTest, MassFloorSkipsEmptySlices) {
  const auto j = tabulate(6, [](double x, double y) { return x * y; });
  const auto f3 = markov_extension(j);
  const auto r = markov_test(f3, j);
  EXPECT_GT(r.skipped, 0u);
  EXPECT_EQ(r.skipped + r.slices.size(), 36u);
}

TEST(MarkovTest, GridMismatchRejected) {
  const auto j = tabulate(5, [](double x, double y) { return 1.0 + x + y; });
  const auto f3 = markov_extension(tabulate(6, [](double x, double y) { return 1.0 + x + y; }));
  EXPECT_THROW(markov_test(f3, j), ConfigError);
}

TEST(Markov, SymmetricDensityDetailedBalance) {
  const auto j = tabulate(25, [](double x, double y) { return std::exp(-5.0 * (x - y) * (x - y)) * (1.0 + x * y); });
  const auto m = markov_transition(j);
  const auto& pi = m.stationary;
  for (int a = 0; a < 25; ++a)
    for (int b = 0; b < 25; ++b) EXPECT_NEAR(pi[a] * m.P(a, b), pi[b] * m.P(b, a), 1e-8);
  const Eigen::Map<const Eigen::RowVectorXd> p(pi.data(), 25);
  EXPECT_LT((p * m.P - p).cwiseAbs().maxCoeff(), 1e-6);
}
