#pragma once

// Independent Interval Approximation: clipped-process covariance, Laplace
// transforms, Psi(s) of a symmetric renewal switch process, theta_IIA,
// the exact series for diffusion in two dimensions, quasi-cdfs and the
// first-order Bernstein check on a spectral measure.

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fftw3.h>

#include <boost/math/constants/constants.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <complex>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "crossint/core.hpp"
#include "crossint/covmodel.hpp"
#include "crossint/normal.hpp"

namespace crossint {

// =============================================================================
// Clipped covariance
// =============================================================================

/// Covariance of sign(X(t) - u). Uses
/// 4 (P(X(0) < u, X(t) < u) - F(u)^2) = (2/pi) int_0^{asin rho} exp(-u~^2 / (1 + sin a)) da,
/// which reduces to (2/pi) asin(rho) at u = 0.
inline double clipped_covariance(const CovarianceModel& model, double u, double t) {
  const double r0 = model.cov(0.0);
  const double ut = u / std::sqrt(r0);
  if (t == 0.0) {
    const double F = normal::cdf(ut);
    return 4.0 * F * (1.0 - F);
  }
  const double rho = model.cov(t) / r0;
  if (!(std::abs(rho) < 1.0)) throw ConfigError("clipped_covariance: |rho(t)| = 1 at t > 0 (degenerate)");
  const double top = std::asin(rho);
  if (ut == 0.0) return 2.0 / kPi * top;
  auto g = [ut](double a) { return std::exp(-ut * ut / (1.0 + std::sin(a))); };
  const double I = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(g, 0.0, top, 12, 1e-14);
  return 2.0 / kPi * I;
}

/// Same quantity through the conditional-Phi integral
/// 4 Phi(u~) (E[Phi((u~ - rho Z)/sqrt(1 - rho^2)) | Z < u~] - Phi(u~)).
inline double clipped_covariance_conditional(const CovarianceModel& model, double u, double t) {
  const double r0 = model.cov(0.0);
  const double ut = u / std::sqrt(r0);
  const double rho = model.cov(t) / r0;
  if (!(std::abs(rho) < 1.0)) throw ConfigError("clipped_covariance: |rho(t)| = 1 at t > 0 (degenerate)");
  const double sq = std::sqrt(1.0 - rho * rho);
  auto g = [&](double z) { return normal::pdf(z) * normal::cdf((ut - rho * z) / sq); };
  const double I = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      g, -std::numeric_limits<double>::infinity(), ut, 15, 1e-14);
  const double F = normal::cdf(ut);
  return 4.0 * (I - F * F);
}

// =============================================================================
// Laplace transforms
// =============================================================================

struct LaplaceOptions {
  double panel = 1.0;     // quadrature panel length
  double t_max = 2000.0;  // hard stop for the panel loop
  double rel_tol = 1e-13;
};

/// Decay rate kappa of R(t) ~ c e^{-kappa t}, from log|R| at t_max/2 and t_max.
inline double fitted_decay_rate(const std::function<double(double)>& R, double t_lo = 20.0, double t_hi = 40.0) {
  const double a = std::abs(R(t_lo)), b = std::abs(R(t_hi));
  if (!(a > 0.0) || !(b > 0.0)) return std::numeric_limits<double>::infinity();
  return -(std::log(b) - std::log(a)) / (t_hi - t_lo);
}

/// int_0^inf e^{-st} R(t) dt by Gauss-Kronrod panels with an exponential
/// tail closure from the fitted decay rate.
inline double laplace_cov(const std::function<double(double)>& R, double s, const LaplaceOptions& o = {}) {
  using boost::math::quadrature::gauss_kronrod;
  auto f = [&](double t) { return std::exp(-s * t) * R(t); };
  double acc = 0.0;
  double t = 0.0;
  double prev_panel = std::numeric_limits<double>::infinity();
  int growing = 0;
  while (t < o.t_max) {
    const double p = gauss_kronrod<double, 31>::integrate(f, t, t + o.panel, 8, 1e-14);
    acc += p;
    t += o.panel;
    if (std::abs(p) > std::abs(prev_panel) * (1.0 + 1e-12) && t > 10.0) {
      if (++growing > 5) throw NumericalError("laplace_cov: integral diverges at s = " + std::to_string(s));
    } else {
      growing = 0;
    }
    prev_panel = p;
    if (t > 10.0 && std::abs(p) <= o.rel_tol * std::abs(acc)) break;
  }
  // closure beyond t
  const double r1 = R(t - o.panel), r2 = R(t);
  if (r1 != 0.0 && r2 != 0.0 && r1 * r2 > 0.0) {
    const double kappa = -std::log(r2 / r1) / o.panel;
    if (kappa + s > 0.0) acc += std::exp(-s * t) * r2 / (kappa + s);
  }
  return acc;
}

/// Laplace transform of a covariance as a callable with its abscissa of
/// convergence.
struct LaplaceCov {
  enum class Method { Quadrature, Series, Rational };
  std::function<double(double)> eval;
  double s_min = 0.0;
  Method method = Method::Quadrature;
  double operator()(double s) const {
    if (!(s > s_min)) throw ConfigError("LaplaceCov evaluated at s <= s_min");
    return eval(s);
  }
};

inline LaplaceCov make_laplace(std::function<double(double)> R, LaplaceOptions o = {}) {
  LaplaceCov L;
  L.s_min = -fitted_decay_rate(R);
  if (!std::isfinite(L.s_min)) L.s_min = -1e6;
  L.method = LaplaceCov::Method::Quadrature;
  L.eval = [R = std::move(R), o](double s) { return laplace_cov(R, s, o); };
  return L;
}

/// Laplace transform of the clipped covariance at level u.
inline LaplaceCov clipped_laplace(const CovarianceModel& model, double u = 0.0) {
  return make_laplace([model, u](double t) { return clipped_covariance(model, u, t); });
}

/// Psi(s) = (2 - s mu (1 - s LR)) / (2 + s mu (1 - s LR)).
inline double psi_from_cov(double LR, double mu, double s) {
  const double w = s * mu * (1.0 - s * LR);
  const double den = 2.0 + w;
  if (den == 0.0) throw NumericalError("psi_from_cov: pole at s = " + std::to_string(s));
  return (2.0 - w) / den;
}

inline double psi_from_cov(const LaplaceCov& LR, double mu, double s) {
  if (s == 0.0) return 1.0;
  return psi_from_cov(LR(s), mu, s);
}

/// Laplace transform of the covariance of an alternating renewal switch
/// process with interval transforms Psi+ and Psi- and means mu+ and mu-.
/// At s = 0 the removable singularity is resolved by extrapolating from
/// small s.
inline double switch_cov_laplace(const std::function<double(double)>& psi_plus,
                                 const std::function<double(double)>& psi_minus, double mu_plus, double mu_minus,
                                 double s) {
  if (!(mu_plus > 0.0) || !(mu_minus > 0.0)) throw ConfigError("switch_cov_laplace: means must be positive");
  auto eval = [&](double x) {
    const double pp = psi_plus(x), pm = psi_minus(x);
    const double m = mu_plus + mu_minus;
    return 4.0 / (x * m) * (mu_plus * mu_minus / m - (1.0 - pp) * (1.0 - pm) / (x * (1.0 - pm * pp)));
  };
  if (s != 0.0) return eval(s);
  const double h = 1e-3 * std::min(1.0 / mu_plus, 1.0 / mu_minus);
  // Richardson on h, 2h, 4h (error O(h^3))
  const double a = eval(h), b = eval(2 * h), c = eval(4 * h);
  return (8.0 * a - 6.0 * b + c) / 3.0;
}

/// Symmetric special case: LR(s) = (1/s)(1 - (2 / (s mu)) (1 - Psi) / (1 + Psi)).
inline double switch_cov_laplace_symmetric(double psi, double mu, double s) {
  return (1.0 - 2.0 / (s * mu) * (1.0 - psi) / (1.0 + psi)) / s;
}

// =============================================================================
// Rational continuation and theta_IIA
// =============================================================================

/// p(s) / q(s) with q(0) = 1, coefficients lowest order first.
struct RationalFit {
  std::vector<long double> p, q;
  long double eval(long double s) const {
    long double a = 0, b = 0;
    for (std::size_t i = p.size(); i-- > 0;) a = a * s + p[i];
    for (std::size_t i = q.size(); i-- > 0;) b = b * s + q[i];
    return a / b;
  }
  /// Largest real negative root of q, or -inf if none found.
  double largest_negative_pole() const {
    const std::size_t n = q.size() - 1;
    if (n == 0) return -std::numeric_limits<double>::infinity();
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i + 1 < n; ++i) C(static_cast<Eigen::Index>(i + 1), static_cast<Eigen::Index>(i)) = 1.0;
    for (std::size_t i = 0; i < n; ++i)
      C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n - 1)) = -static_cast<double>(q[i] / q[n]);
    const Eigen::VectorXcd ev = C.eigenvalues();
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < ev.size(); ++i)
      if (std::abs(ev(i).imag()) < 1e-8 * (1.0 + std::abs(ev(i).real())) && ev(i).real() < 0.0)
        best = std::max(best, ev(i).real());
    return best;
  }
};

/// Linearized least-squares [m/n] fit of LR on log-spaced s in [s_lo, s_hi].
inline RationalFit rational_fit(const LaplaceCov& LR, int m = 8, int n = 9, double s_lo = 0.02, double s_hi = 20.0,
                                int n_points = 80) {
  using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using VecL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  // scaled variable x = s / sc keeps the monomials of comparable size
  const long double sc = std::sqrt(s_lo * s_hi);
  MatL A(n_points, m + 1 + n);
  VecL b(n_points);
  for (int i = 0; i < n_points; ++i) {
    const double s = s_lo * std::pow(s_hi / s_lo, static_cast<double>(i) / (n_points - 1));
    const long double y = LR(s);
    const long double x = s / sc;
    const long double w = 1.0L / y;  // relative residuals
    long double xp = 1.0L;
    for (int k = 0; k <= m; ++k, xp *= x) A(i, k) = w * xp;
    xp = x;
    for (int j = 1; j <= n; ++j, xp *= x) A(i, m + j) = -w * y * xp;
    b(i) = 1.0L;
  }
  const VecL c = A.colPivHouseholderQr().solve(b);
  RationalFit f;
  f.p.resize(static_cast<std::size_t>(m + 1));
  f.q.resize(static_cast<std::size_t>(n + 1));
  long double scale = 1.0L;
  for (int k = 0; k <= m; ++k, scale *= sc) f.p[static_cast<std::size_t>(k)] = c(k) / scale;
  f.q[0] = 1.0L;
  scale = sc;
  for (int j = 1; j <= n; ++j, scale *= sc) f.q[static_cast<std::size_t>(j)] = c(m + j) / scale;
  return f;
}

inline LaplaceCov continue_rational(const LaplaceCov& LR, int m = 8, int n = 9) {
  const RationalFit f = rational_fit(LR, m, n);
  LaplaceCov out;
  out.method = LaplaceCov::Method::Rational;
  const double pole = f.largest_negative_pole();
  out.s_min = std::isfinite(pole) ? pole : -1e6;
  out.eval = [f](double s) { return static_cast<double>(f.eval(s)); };
  return out;
}

struct ThetaOptions {
  double step = 0.005;       // scan step in s
  bool rational = false;     // force the rational continuation
  int fit_m = 8, fit_n = 9;
};

/// theta_IIA = -max{s < 0 : 2 + s mu (1 - s LR(s)) = 0}, scanning down from 0
/// inside the domain of LR and bisecting. Falls back to the rational
/// continuation when the direct transform has no sign change.
inline double theta_iia(const LaplaceCov& LR, double mu, const ThetaOptions& o = {}) {
  auto search = [&](const LaplaceCov& L) -> std::optional<double> {
    auto D = [&](double s) { return 2.0 + s * mu * (1.0 - s * L(s)); };
    const double lo = L.s_min + 1e-3 * std::max(1.0, std::abs(L.s_min));
    double b = 0.0, Db = 2.0;
    for (double a = -o.step; a > lo; a -= o.step) {
      const double Da = D(a);
      if (!std::isfinite(Da)) return std::nullopt;
      if (Da <= 0.0) {
        for (int it = 0; it < 200 && b - a > 1e-13; ++it) {
          const double c = 0.5 * (a + b);
          (D(c) > 0.0 ? b : a) = c;
        }
        return -0.5 * (a + b);
      }
      b = a;
      Db = Da;
    }
    (void)Db;
    return std::nullopt;
  };
  if (!o.rational) {
    if (auto r = search(LR)) return *r;
  }
  if (LR.method != LaplaceCov::Method::Rational) {
    if (auto r = search(continue_rational(LR, o.fit_m, o.fit_n))) return *r;
  }
  throw NumericalError("theta_iia: no sign change of the denominator in (s_min, 0)");
}

// =============================================================================
// Diffusion in two dimensions: exact series
// =============================================================================

namespace detail {

struct Dual {
  long double v = 0, d = 0;
};
inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) { return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)}; }
inline Dual operator*(long double c, Dual a) { return {c * a.v, c * a.d}; }

// Partial sum L_L(s) = sum_{l <= L} P_l(s) / ((s + 1/2) ... (s + 1/2 + l)) of
// the Laplace transform of (2/pi) asin(sech(t/2)).
template <class T>
T diffusion2d_partial_sum(T s, int L) {
  const long double pi = 3.141592653589793238462643383279502884L;
  T total{};
  T den = T{1};  // prod_{i=0}^{l} (s + 1/2 + i)
  long double lfact = 1.0L;
  for (int l = 0; l <= L; ++l) {
    if (l > 0) lfact *= l;
    den = den * (s + T{0.5L + l});
    // inner sum 1 + sum_k C(l+k, k) / (2^k (2k+1) k!) (s+1/2)_k
    T inner = T{1};
    T poch = T{1};
    long double c = 1.0L;  // C(l+k, k) / k!
    long double p2 = 1.0L;
    for (int k = 1; k <= l; ++k) {
      c *= static_cast<long double>(l + k) / (static_cast<long double>(k) * k);
      p2 *= 2.0L;
      poch = poch * (s + T{0.5L + (k - 1)});
      inner = inner + (c / (p2 * (2 * k + 1))) * poch;
    }
    const long double A = lfact / (pi * std::pow(2.0L, l - 1));
    total = total + A * (inner / den);
  }
  return total;
}

}  // namespace detail

/// Partial-fraction form of Psi_L(s) = sum_i residue_i / (s - pole_i) + atom.
/// Poles come as real values and complex-conjugate pairs.
struct LaplaceApprox {
  int L = 0;
  double mu = kTwoPi;
  std::vector<long double> numerator;    // 4 prod (s + 1/2 + i), lowest order first
  std::vector<long double> denominator;  // (2 + s mu) prod(...) - mu s^2 Q_L(s)
  std::vector<std::complex<double>> poles;  // sorted by decreasing real part
  std::vector<std::complex<double>> residues;
  double atom_at_zero = -1.0;
  double theta_L = 0.0;  // minus the largest real pole
  double psi(double s) const {
    std::complex<double> v = atom_at_zero;
    for (std::size_t i = 0; i < poles.size(); ++i) v += residues[i] / (s - poles[i]);
    return v.real();
  }
  /// sum residue / (-pole) + atom (should be 1)
  double total_mass() const {
    std::complex<double> m = atom_at_zero;
    for (std::size_t i = 0; i < poles.size(); ++i) m += residues[i] / (-poles[i]);
    return m.real();
  }
  std::vector<double> real_poles() const {
    std::vector<double> r;
    for (const auto& p : poles)
      if (p.imag() == 0.0) r.push_back(p.real());
    return r;
  }
};

namespace detail {

inline std::vector<long double> poly_mul(const std::vector<long double>& a, const std::vector<long double>& b) {
  std::vector<long double> c(a.size() + b.size() - 1, 0.0L);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
  return c;
}

inline std::vector<long double> poly_add(std::vector<long double> a, const std::vector<long double>& b) {
  if (a.size() < b.size()) a.resize(b.size(), 0.0L);
  for (std::size_t i = 0; i < b.size(); ++i) a[i] += b[i];
  return a;
}

// Q_L(s) in monomial form (reporting only; roots use the product form).
inline std::vector<long double> diffusion2d_numerator(int L) {
  const long double pi = 3.141592653589793238462643383279502884L;
  std::vector<long double> Q{0.0L};
  long double lfact = 1.0L;
  for (int l = 0; l <= L; ++l) {
    if (l > 0) lfact *= l;
    std::vector<long double> P{1.0L}, poch{1.0L};
    long double c = 1.0L, p2 = 1.0L;
    for (int k = 1; k <= l; ++k) {
      c *= static_cast<long double>(l + k) / (static_cast<long double>(k) * k);
      p2 *= 2.0L;
      poch = poly_mul(poch, {0.5L + (k - 1), 1.0L});
      std::vector<long double> term = poch;
      for (auto& x : term) x *= c / (p2 * (2 * k + 1));
      P = poly_add(P, term);
    }
    const long double A = lfact / (pi * std::pow(2.0L, l - 1));
    for (auto& x : P) x *= A;
    for (int j = l + 1; j <= L; ++j) P = poly_mul(P, {0.5L + j, 1.0L});
    Q = poly_add(Q, P);
  }
  return Q;
}

// Minimal complex dual number over a real type R (value and derivative).
template <class R>
struct Cx {
  R re{}, im{};
};
template <class R> Cx<R> operator+(const Cx<R>& a, const Cx<R>& b) { return {a.re + b.re, a.im + b.im}; }
template <class R> Cx<R> operator-(const Cx<R>& a, const Cx<R>& b) { return {a.re - b.re, a.im - b.im}; }
template <class R> Cx<R> operator*(const Cx<R>& a, const Cx<R>& b) {
  return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}
template <class R> Cx<R> scale(const R& c, const Cx<R>& a) { return {c * a.re, c * a.im}; }

template <class R>
struct CxDual {
  Cx<R> v, d;
};
template <class R> CxDual<R> operator+(const CxDual<R>& a, const CxDual<R>& b) { return {a.v + b.v, a.d + b.d}; }
template <class R> CxDual<R> operator-(const CxDual<R>& a, const CxDual<R>& b) { return {a.v - b.v, a.d - b.d}; }
template <class R> CxDual<R> operator*(const CxDual<R>& a, const CxDual<R>& b) {
  return {a.v * b.v, a.d * b.v + a.v * b.d};
}
template <class R> CxDual<R> scale(const R& c, const CxDual<R>& a) { return {scale(c, a.v), scale(c, a.d)}; }

// N(s) = (2 + mu s) D(s) - mu s^2 Q_L(s) and N'(s), in product form:
// Q_L = sum_l P_l(s) prod_{j > l} (s + 1/2 + j), D = prod_{i <= L} (s + 1/2 + i).
// Also returns D(s).
template <class R>
std::pair<CxDual<R>, Cx<R>> diffusion2d_N(std::complex<long double> s0, int L, long double mu0) {
  using D_ = CxDual<R>;
  const R pi = boost::math::constants::pi<R>();
  const R mu = R(mu0);
  const D_ S{{R(s0.real()), R(s0.imag())}, {R(1), R(0)}};
  auto shift = [&](R c) { return D_{{S.v.re + c, S.v.im}, S.d}; };
  // suffix products prod_{j = l+1}^{L} (s + 1/2 + j)
  std::vector<D_> suffix(static_cast<std::size_t>(L + 2));
  suffix[static_cast<std::size_t>(L + 1)] = D_{{R(1), R(0)}, {R(0), R(0)}};
  for (int j = L; j >= 0; --j)
    suffix[static_cast<std::size_t>(j)] = suffix[static_cast<std::size_t>(j + 1)] * shift(R(0.5) + R(j));
  D_ Q{};
  R lfact = 1;
  for (int l = 0; l <= L; ++l) {
    if (l > 0) lfact *= l;
    D_ inner{{R(1), R(0)}, {R(0), R(0)}};
    D_ poch = inner;
    R c = 1, p2 = 1;
    for (int k = 1; k <= l; ++k) {
      c *= R(l + k) / (R(k) * R(k));
      p2 *= 2;
      poch = poch * shift(R(0.5) + R(k - 1));
      inner = inner + scale(c / (p2 * R(2 * k + 1)), poch);
    }
    using std::pow;
    const R A = lfact * 2 / (pi * pow(R(2), l));
    Q = Q + scale(A, inner * suffix[static_cast<std::size_t>(l + 1)]);
  }
  const D_ Dp = suffix[0];
  const D_ lin = D_{{R(2) + mu * S.v.re, mu * S.v.im}, {mu, R(0)}};
  const D_ N = lin * Dp - scale(mu, (S * S) * Q);
  return {N, Dp.v};
}

template <class R>
std::complex<long double> to_cl(const Cx<R>& z) {
  return {static_cast<long double>(z.re), static_cast<long double>(z.im)};
}

}  // namespace detail

/// Psi_L for the arcsine-clipped diffusion in two dimensions:
/// Psi_L(s) = 4 D(s) / ((2 + s mu) D(s) - mu s^2 Q_L(s)) - 1, D = prod_{i<=L} (s + 1/2 + i).
/// The L + 2 zeros of the denominator are found simultaneously (Aberth
/// iteration) with the denominator evaluated in product form; above L = 16
/// in 50-digit arithmetic. Residues are 4 D(r) / N'(r).
inline LaplaceApprox diffusion2d_series(int L, double mu = kTwoPi) {
  if (L < 0 || L > 200) throw ConfigError("diffusion2d_series: L must be in [0, 200]");
  using cl = std::complex<long double>;
  using boost::multiprecision::cpp_bin_float_50;
  auto evalN = [&](cl s) -> std::pair<std::pair<cl, cl>, cl> {
    if (L <= 16) {
      const auto [N, D] = detail::diffusion2d_N<long double>(s, L, mu);
      return {{detail::to_cl(N.v), detail::to_cl(N.d)}, detail::to_cl(D)};
    }
    const auto [N, D] = detail::diffusion2d_N<cpp_bin_float_50>(s, L, mu);
    return {{detail::to_cl(N.v), detail::to_cl(N.d)}, detail::to_cl(D)};
  };
  const int n = L + 2;
  std::vector<cl> z(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k)
    z[static_cast<std::size_t>(k)] = cl(-0.3L - (L + 1.5L) * k / std::max(1, n - 1) * 1.05L,
                                        0.4L * (k % 2 ? 1 : -1) * (1 + 0.01L * k));
  bool converged = false;
  int polish = 0;
  for (int it = 0; it < 400 && !converged; ++it) {
    long double maxc = 0;
    for (int k = 0; k < n; ++k) {
      const auto [Nd, D] = evalN(z[static_cast<std::size_t>(k)]);
      (void)D;
      const cl w = Nd.first / Nd.second;
      cl sum = 0;
      for (int j = 0; j < n; ++j)
        if (j != k) sum += 1.0L / (z[static_cast<std::size_t>(k)] - z[static_cast<std::size_t>(j)]);
      const cl corr = w / (1.0L - w * sum);
      z[static_cast<std::size_t>(k)] -= corr;
      maxc = std::max(maxc, std::abs(corr) / (1 + std::abs(z[static_cast<std::size_t>(k)])));
    }
    // a couple of polishing sweeps after reaching the evaluation noise floor
    if (maxc < 1e-13L) ++polish;
    converged = polish >= 3;
  }
  if (!converged) throw NumericalError("diffusion2d_series: root iteration did not converge");
  LaplaceApprox out;
  out.L = L;
  out.mu = mu;
  for (cl& r : z)
    if (std::abs(r.imag()) < 1e-12L * (1 + std::abs(r.real()))) r = cl(r.real(), 0);
  std::sort(z.begin(), z.end(), [](cl a, cl b) { return a.real() != b.real() ? a.real() > b.real() : a.imag() > b.imag(); });
  for (std::size_t i = 1; i < z.size(); ++i)
    if (std::abs(z[i] - z[i - 1]) < 1e-9L) throw NumericalError("diffusion2d_series: repeated poles");
  double best = -std::numeric_limits<double>::infinity();
  for (const cl& r : z) {
    if (!(r.real() < 0)) throw NumericalError("diffusion2d_series: pole in the right half plane");
    const auto [Nd, D] = evalN(r);
    out.poles.emplace_back(static_cast<double>(r.real()), static_cast<double>(r.imag()));
    const cl res = 4.0L * D / Nd.second;
    out.residues.emplace_back(static_cast<double>(res.real()), r.imag() == 0 ? 0.0 : static_cast<double>(res.imag()));
    if (r.imag() == 0) best = std::max(best, static_cast<double>(r.real()));
  }
  out.atom_at_zero = -1.0;
  out.theta_L = -best;
  // monomial forms for reporting
  std::vector<long double> D{1.0L};
  for (int i = 0; i <= L; ++i) D = detail::poly_mul(D, {0.5L + i, 1.0L});
  out.numerator = D;
  for (auto& x : out.numerator) x *= 4.0L;
  const long double m = mu;
  out.denominator = detail::poly_add(detail::poly_mul(D, {2.0L, m}),
                                     detail::poly_mul(detail::diffusion2d_numerator(L), {0.0L, 0.0L, -m}));
  return out;
}

/// Laplace transform of the arcsine-clipped diffusion-2D covariance from
/// the truncated series (valid for s > -1/2).
inline LaplaceCov diffusion2d_laplace(int L) {
  LaplaceCov out;
  out.method = LaplaceCov::Method::Series;
  out.s_min = -0.5;
  out.eval = [L](double s) { return static_cast<double>(detail::diffusion2d_partial_sum<long double>(s, L)); };
  return out;
}

/// F(t) = atom + sum residue_i / (-pole_i) (1 - e^{pole_i t}) for t > 0;
/// the atom at 0 is included at t = 0.
inline std::vector<double> quasi_cdf(const LaplaceApprox& a, const std::vector<double>& t) {
  using cl = std::complex<long double>;
  std::vector<double> F(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    cl v = a.atom_at_zero;
    for (std::size_t i = 0; i < a.poles.size(); ++i) {
      const cl p(a.poles[i].real(), a.poles[i].imag());
      const cl r(a.residues[i].real(), a.residues[i].imag());
      v += r / (-p) * (1.0L - std::exp(p * static_cast<long double>(t[k])));
    }
    F[k] = static_cast<double>(v.real());
  }
  return F;
}

// =============================================================================
// Validity check on the spectrum of the clipped covariance
// =============================================================================

/// Spectral measure on omega >= 0 (point masses; a density is represented by
/// quadrature weights).
struct SpectralMeasure {
  std::vector<double> omega;
  std::vector<double> mass;
  static SpectralMeasure from_density(const std::vector<double>& w, const std::vector<double>& s) {
    if (w.size() != s.size() || w.size() < 2) throw ConfigError("from_density: grid mismatch");
    SpectralMeasure m;
    m.omega = w;
    m.mass.assign(w.size(), 0.0);
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
      const double h = 0.5 * (w[i + 1] - w[i]);
      m.mass[i] += h * s[i];
      m.mass[i + 1] += h * s[i + 1];
    }
    return m;
  }
  static SpectralMeasure point(double w0) { return {{w0}, {1.0}}; }
  double total() const {
    double t = 0.0;
    for (double x : mass) t += x;
    return t;
  }
};

/// Spectral density on omega >= 0 of R(t) = (2/pi) sum_k c_k rho(t)^{2k+1}
/// (the arcsine series truncated after `n_terms` terms; 0 = full arcsine),
/// by a trapezoid cosine transform with FFTW (DCT-I). The returned density
/// is normalized to total mass one on [0, inf).
inline SpectralMeasure clipped_spectrum(const CovarianceModel& model, int n_terms = 0, double h = 0.005,
                                        double T = 200.0) {
  const std::size_t N = static_cast<std::size_t>(std::lround(T / h)) + 1;
  std::vector<double> in(N), out(N);
  const double r0 = model.cov(0.0);
  for (std::size_t j = 0; j < N; ++j) {
    const double rho = std::clamp(model.cov(h * static_cast<double>(j)) / r0, -1.0, 1.0);
    double R = 0.0;
    if (n_terms <= 0) {
      R = 2.0 / kPi * std::asin(rho);
    } else {
      double c = 1.0, p = rho;
      for (int k = 0; k < n_terms; ++k) {
        R += c * p / (2 * k + 1);
        c *= (2.0 * k + 1.0) / (2.0 * k + 2.0);
        p *= rho * rho;
      }
      R *= 2.0 / kPi;
    }
    in[j] = R;
  }
  fftw_plan plan = fftw_plan_r2r_1d(static_cast<int>(N), in.data(), out.data(), FFTW_REDFT00, FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  // DCT-I: out_k = x_0 + (-1)^k x_{N-1} + 2 sum x_j cos(pi j k / (N-1)); omega_k = pi k / T
  std::vector<double> w(N), S(N);
  for (std::size_t k = 0; k < N; ++k) {
    w[k] = kPi * static_cast<double>(k) / (h * static_cast<double>(N - 1));
    S[k] = std::max(0.0, h * out[k] / (2.0 * kPi) * 2.0);  // one-sided density: (2/2pi) int_{-inf}^{inf}
  }
  SpectralMeasure m = SpectralMeasure::from_density(w, S);
  const double tot = m.total();
  for (double& x : m.mass) x /= tot;
  return m;
}

/// int g(omega / s) dS_R(omega) with g(x) = (x^4 - 1 - 4 x^2) / (1 + x^2)^2:
/// difference of the two sides of the first-order Bernstein condition.
/// Negative values mean the condition fails at s.
inline double validity_margin(const SpectralMeasure& m, double s) {
  double v = 0.0;
  for (std::size_t i = 0; i < m.omega.size(); ++i) {
    const double x = m.omega[i] / s;
    const double x2 = x * x;
    v += m.mass[i] * (x2 * x2 - 1.0 - 4.0 * x2) / ((1.0 + x2) * (1.0 + x2));
  }
  return v;
}

/// Smallest s on the grid where the condition fails, if any.
inline std::optional<double> iia_validity_check(const SpectralMeasure& m, const std::vector<double>& s_grid) {
  for (double s : s_grid) {
    if (!(s > 0.0)) throw ConfigError("iia_validity_check: s must be positive");
    if (validity_margin(m, s) < 0.0) return s;
  }
  return std::nullopt;
}

/// Time-domain form of the same condition: 1 - 2 s LR(s) - s^2 LR'(s) >= 0,
/// with LR' = -int t e^{-st} R(t) dt.
inline double validity_margin_time(const std::function<double(double)>& R, double s) {
  const double LR = laplace_cov(R, s);
  const double LRd = -laplace_cov([&](double t) { return t * R(t); }, s);
  return 1.0 - 2.0 * s * LR - s * s * LRd;
}

}  // namespace crossint
