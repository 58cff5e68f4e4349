#pragma once

// Catalog of stationary covariance models, their derivatives and spectral
// moments, normalization to lambda0 = lambda2 = 1, and assembly of covariance
// matrices for process values and derivatives on time grids.

#include <Eigen/Dense>

#include <cctype>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crossint/core.hpp"

namespace crossint {

enum class ModelKind {
  Rational,
  ShiftedGaussian,
  Diffusion,
  WhiteNoiseSinc,
  Butterworth14,
  Jonswap,
  Tabulated,
  ClosedForm
};

struct SpectralMoments {
  double lambda0 = 0.0;
  double lambda2 = 0.0;
  double lambda4 = 0.0;  // +inf for irregular models
  double C = 0.0;        // |t|^3 coefficient: r = l0 - l2 t^2/2 + C|t|^3/6 + ...
  bool regular = true;
  std::optional<double> alpha;  // lambda2 / sqrt(lambda0 lambda4)
};

struct JonswapParams {
  double peak_period = 10.0;  // Tp, seconds
  double gamma = 3.3;
  double sigma_a = 0.07;
  double sigma_b = 0.09;
  double cutoff = 2.95;       // upper frequency limit in units of the peak frequency
  std::size_t n_omega = 16385;
};

namespace detail {

// Un-normalized covariance evaluator. eval(t, n) is the n-th derivative at
// t >= 0; at t = 0 odd orders give the right-hand limit.
class CovImpl {
 public:
  virtual ~CovImpl() = default;
  virtual double eval(double t, int order) const = 0;
  virtual int max_order() const { return 4; }
  virtual bool regular() const { return true; }
  virtual double lambda4() const { return eval(0.0, 4); }
  // Two-sided spectral density, if known.
  virtual std::optional<double> spectrum(double) const { return std::nullopt; }
};

using Poly = std::vector<double>;

inline double poly_eval(const Poly& p, double x) {
  double s = 0.0;
  for (std::size_t i = p.size(); i-- > 0;) s = s * x + p[i];
  return s;
}

inline Poly poly_deriv(const Poly& p) {
  if (p.size() <= 1) return {0.0};
  Poly d(p.size() - 1);
  for (std::size_t i = 1; i < p.size(); ++i) d[i - 1] = static_cast<double>(i) * p[i];
  return d;
}

// r(t) = exp(-t) p(t) for t >= 0; r^(n) = exp(-t) q_n(t), q_{n+1} = q_n' - q_n.
class RationalImpl : public CovImpl {
 public:
  explicit RationalImpl(Poly p) {
    q_.push_back(std::move(p));
    for (int n = 1; n <= 4; ++n) {
      Poly d = poly_deriv(q_.back());
      Poly next(std::max(d.size(), q_.back().size()), 0.0);
      for (std::size_t i = 0; i < d.size(); ++i) next[i] += d[i];
      for (std::size_t i = 0; i < q_.back().size(); ++i) next[i] -= q_.back()[i];
      q_.push_back(next);
    }
  }
  double eval(double t, int order) const override {
    if (order < 0 || order > 4) throw MomentUndefined("derivative order beyond 4");
    if (order == 4 && t == 0.0 && !regular()) throw MomentUndefined("fourth derivative at 0 of an irregular covariance");
    if (t == 0.0 && order == 1) return 0.0;
    return std::exp(-t) * poly_eval(q_[order], t);
  }
  bool regular() const override { return std::abs(poly_eval(q_[3], 0.0)) < 1e-12; }
  double lambda4() const override {
    if (!regular()) return std::numeric_limits<double>::infinity();
    return poly_eval(q_[4], 0.0);
  }
  double third_right() const { return poly_eval(q_[3], 0.0); }

 private:
  std::vector<Poly> q_;
};

// r(t) = cos(k t) exp(-t^2/2); r^(n)(t) = Re[(-1)^n He_n(t - ik) exp(ikt - t^2/2)].
class ShiftedGaussianImpl : public CovImpl {
 public:
  explicit ShiftedGaussianImpl(double k) : k_(k) {}
  double eval(double t, int order) const override {
    using cd = std::complex<double>;
    const cd z(t, -k_);
    cd h0(1.0, 0.0), h1 = z;
    cd he = order == 0 ? h0 : h1;
    for (int n = 1; n < order; ++n) {
      const cd h2 = z * h1 - static_cast<double>(n) * h0;
      h0 = h1;
      h1 = h2;
      he = h2;
    }
    const cd e = std::exp(cd(-0.5 * t * t, k_ * t));
    const double sign = order % 2 == 0 ? 1.0 : -1.0;
    return sign * (he * e).real();
  }
  double lambda4() const override { return k_ * k_ * k_ * k_ + 6.0 * k_ * k_ + 3.0; }
  std::optional<double> spectrum(double w) const override {
    return 0.5 * kInvSqrtTwoPi * (std::exp(-0.5 * (w - k_) * (w - k_)) + std::exp(-0.5 * (w + k_) * (w + k_)));
  }

 private:
  double k_;
};

// r(t) = sech(t/2)^m with m = d/2; r^(n) = sech^m(t/2) P_n(tanh(t/2)),
// P_{n+1}(x) = -(m/2) x P_n(x) + (1/2)(1 - x^2) P_n'(x).
class DiffusionImpl : public CovImpl {
 public:
  explicit DiffusionImpl(double d) : m_(0.5 * d) {
    P_.push_back({1.0});
    for (int n = 1; n <= 4; ++n) {
      const Poly& p = P_.back();
      const Poly dp = poly_deriv(p);
      Poly next(p.size() + 1, 0.0);
      for (std::size_t i = 0; i < p.size(); ++i) next[i + 1] += -0.5 * m_ * p[i];
      for (std::size_t i = 0; i < dp.size(); ++i) {
        next[i] += 0.5 * dp[i];
        next[i + 2] -= 0.5 * dp[i];
      }
      P_.push_back(next);
    }
  }
  double eval(double t, int order) const override {
    if (order < 0 || order > 4) throw MomentUndefined("derivative order beyond 4");
    const double x = std::tanh(0.5 * t);
    // sech^m via exp to avoid overflow of cosh
    const double a = 0.5 * t;
    const double log_sech = -(a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0));
    return std::exp(m_ * log_sech) * poly_eval(P_[order], x);
  }
  std::optional<double> spectrum(double w) const override {
    if (std::abs(m_ - 1.0) < 1e-15) return 1.0 / std::cosh(kPi * w);
    return std::nullopt;
  }

 private:
  double m_;
  std::vector<Poly> P_;
};

// r(t) = sin(t)/t, spectrum 1/2 on [-1, 1].
class SincImpl : public CovImpl {
 public:
  double eval(double t, int order) const override {
    if (order < 0 || order > 4) throw MomentUndefined("derivative order beyond 4");
    if (t < 4.0) {
      // r(t) = sum_j (-1)^j t^{2j} / (2j+1)!, differentiated term by term
      double s = 0.0;
      double fact = 1.0;  // (2j+1)!
      for (int j = 0; j < 40; ++j) {
        if (j > 0) fact *= static_cast<double>((2 * j) * (2 * j + 1));
        const int p = 2 * j;
        if (p < order) continue;
        double coeff = (j % 2 == 0 ? 1.0 : -1.0) / fact;
        for (int q = 0; q < order; ++q) coeff *= static_cast<double>(p - q);
        s += coeff * std::pow(t, p - order);
      }
      return s;
    }
    const double s = std::sin(t), c = std::cos(t);
    const double t2 = t * t, t3 = t2 * t, t4 = t3 * t, t5 = t4 * t;
    switch (order) {
      case 0: return s / t;
      case 1: return c / t - s / t2;
      case 2: return -s / t - 2.0 * c / t2 + 2.0 * s / t3;
      case 3: return -c / t + 3.0 * s / t2 + 6.0 * c / t3 - 6.0 * s / t4;
      default: return s / t + 4.0 * c / t2 - 12.0 * s / t3 - 24.0 * c / t4 + 24.0 * s / t5;
    }
  }
  double lambda4() const override { return 0.2; }
  std::optional<double> spectrum(double w) const override { return std::abs(w) <= 1.0 ? 0.5 : 0.0; }
};

// Spectrum 1/(1 + w^14); covariance by residues at the poles in the upper
// half plane: r(t) = Re[-(i pi / 7) sum_k w_k exp(i w_k t)], t >= 0.
class ButterworthImpl : public CovImpl {
 public:
  ButterworthImpl() {
    for (int k = 0; k < 7; ++k) poles_.push_back(std::polar(1.0, kPi * (2.0 * k + 1.0) / 14.0));
  }
  double eval(double t, int order) const override {
    if (order < 0 || order > 4) throw MomentUndefined("derivative order beyond 4");
    using cd = std::complex<double>;
    cd s(0.0, 0.0);
    for (const cd& w : poles_) s += w * std::pow(cd(0.0, 1.0) * w, order) * std::exp(cd(0.0, 1.0) * w * t);
    if (t == 0.0 && order % 2 == 1) return 0.0;
    return (cd(0.0, -kPi / 7.0) * s).real();
  }
  std::optional<double> spectrum(double w) const override { return 1.0 / (1.0 + std::pow(w, 14)); }

 private:
  std::vector<std::complex<double>> poles_;
};

// Two-sided spectral density tabulated on w >= 0 (or on a symmetric grid);
// r^(n)(t) = 2 int_0^inf w^n cos(w t + n pi/2) S(w) dw by the trapezoid rule.
class TabulatedImpl : public CovImpl {
 public:
  TabulatedImpl(std::vector<double> w, std::vector<double> s, bool assume_finite_l4) {
    if (w.size() != s.size() || w.size() < 3) throw ConfigError("tabulated spectrum needs >= 3 matching (w, S) pairs");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!(s[i] >= 0.0) || !std::isfinite(s[i])) throw ConfigError("tabulated spectrum must be finite and nonnegative");
      if (i > 0 && !(w[i] > w[i - 1])) throw ConfigError("tabulated spectrum grid must be increasing");
    }
    two_sided_ = w.front() < 0.0;
    // drop the far tail where S < 1e-12 max S
    const double smax = *std::max_element(s.begin(), s.end());
    std::size_t lo = 0, hi = s.size();
    while (hi > lo + 3 && s[hi - 1] < 1e-12 * smax) --hi;
    if (two_sided_)
      while (lo + 3 < hi && s[lo] < 1e-12 * smax) ++lo;
    w_.assign(w.begin() + lo, w.begin() + hi);
    s_.assign(s.begin() + lo, s.begin() + hi);
    wt_.assign(w_.size(), 0.0);
    dw_max_ = 0.0;
    for (std::size_t i = 1; i < w_.size(); ++i) {
      const double h = w_[i] - w_[i - 1];
      dw_max_ = std::max(dw_max_, h);
      wt_[i - 1] += 0.5 * h;
      wt_[i] += 0.5 * h;
    }
    const double factor = two_sided_ ? 1.0 : 2.0;
    for (double& x : wt_) x *= factor;
    // lambda4 finiteness: tail of w^4 S over the last tenth of the grid
    double l4 = 0.0, l4_tail = 0.0;
    const double w_tail = w_.back() - 0.1 * (w_.back() - std::max(0.0, w_.front()));
    for (std::size_t i = 0; i < w_.size(); ++i) {
      const double c = wt_[i] * std::pow(w_[i], 4) * s_[i];
      l4 += c;
      if (w_[i] >= w_tail) l4_tail += c;
    }
    infinite_l4_ = !assume_finite_l4 && l4 > 0.0 && l4_tail > 0.05 * l4;
    // Richardson-style check on lambda0: full grid against every other point
    double coarse = 0.0;
    for (std::size_t i = 2; i < w_.size(); i += 2) coarse += (w_[i] - w_[i - 2]) * 0.5 * (s_[i] + s_[i - 2]);
    coarse *= factor;
    quad_error_ = std::abs(eval(0.0, 0) - coarse) / 3.0;
  }
  double eval(double t, int order) const override {
    if (order < 0 || order > 4) throw MomentUndefined("derivative order beyond 4");
    if (order == 4 && infinite_l4_) throw MomentUndefined("fourth spectral moment diverges");
    if (dw_max_ * std::abs(t) > kPi)
      throw NumericalError("tabulated spectrum: lag " + std::to_string(t) + " beyond the resolvable range (dw * t > pi)");
    const double phase = 0.5 * kPi * order;
    double s = 0.0;
    for (std::size_t i = 0; i < w_.size(); ++i) {
      const double wn = order == 0 ? 1.0 : std::pow(w_[i], order);
      s += wt_[i] * wn * s_[i] * std::cos(w_[i] * t + phase);
    }
    return s;
  }
  bool regular() const override { return !infinite_l4_; }
  double lambda4() const override {
    return infinite_l4_ ? std::numeric_limits<double>::infinity() : eval(0.0, 4);
  }
  std::optional<double> spectrum(double w) const override {
    w = two_sided_ ? w : std::abs(w);
    if (w < w_.front() || w > w_.back()) return 0.0;
    auto it = std::upper_bound(w_.begin(), w_.end(), w);
    if (it == w_.end()) return s_.back();
    const std::size_t i = static_cast<std::size_t>(it - w_.begin());
    const double f = (w - w_[i - 1]) / (w_[i] - w_[i - 1]);
    return (1.0 - f) * s_[i - 1] + f * s_[i];
  }
  double quadrature_error() const { return quad_error_; }
  double max_lag() const { return kPi / dw_max_; }

 private:
  std::vector<double> w_, s_, wt_;
  bool two_sided_ = false;
  bool infinite_l4_ = false;
  double dw_max_ = 0.0;
  double quad_error_ = 0.0;
};

class ClosedFormImpl : public CovImpl {
 public:
  ClosedFormImpl(std::function<double(double, int)> f, int max_order, bool regular)
      : f_(std::move(f)), max_order_(max_order), regular_(regular) {}
  double eval(double t, int order) const override {
    if (order > max_order_) throw MomentUndefined("closed-form model provides derivatives up to order " + std::to_string(max_order_));
    if (order == 4 && t == 0.0 && !regular_) throw MomentUndefined("fourth derivative at 0 of an irregular covariance");
    return f_(t, order);
  }
  int max_order() const override { return max_order_; }
  bool regular() const override { return regular_; }
  double lambda4() const override {
    if (!regular_ || max_order_ < 4) return std::numeric_limits<double>::infinity();
    return f_(0.0, 4);
  }

 private:
  std::function<double(double, int)> f_;
  int max_order_;
  bool regular_;
};

inline std::vector<double> jonswap_density(const JonswapParams& p, std::vector<double>& w) {
  const double wp = kTwoPi / p.peak_period;
  w.resize(p.n_omega);
  std::vector<double> s(p.n_omega);
  const double wmax = p.cutoff * wp;
  for (std::size_t i = 0; i < p.n_omega; ++i) {
    w[i] = wmax * static_cast<double>(i) / static_cast<double>(p.n_omega - 1);
    const double x = w[i];
    if (x <= 0.0) {
      s[i] = 0.0;
      continue;
    }
    const double sig = x <= wp ? p.sigma_a : p.sigma_b;
    const double peak = std::pow(p.gamma, std::exp(-(x - wp) * (x - wp) / (2.0 * sig * sig * wp * wp)));
    const double r = wp / x;
    s[i] = 0.5 * std::pow(r, 5) * std::exp(-1.25 * r * r * r * r) * peak;
  }
  return s;
}

}  // namespace detail

/// A stationary covariance r(t) = base(scale * t) / amplitude.
class CovarianceModel {
 public:
  CovarianceModel() = default;

  /// Rational-spectrum models LH1..LH7.
  static CovarianceModel rational(int k) {
    static const std::vector<detail::Poly> polys = {
        {1.0, 1.0, 1.0 / 3.0},
        {1.0, 1.0, 6.0 / 15.0, 1.0 / 15.0},
        {1.0, 1.0, 3.0 / 7.0, 2.0 / 21.0, 1.0 / 105.0},
        {1.0, 1.0, -1.0 / 3.0, -2.0 / 3.0, 1.0 / 9.0},
        {1.0, 1.0},
        {1.0, 1.0, -1.0 / 3.0},
        {1.0, 1.0, -2.0, 1.0 / 3.0},
    };
    if (k < 1 || k > 7) throw ConfigError("rational model index must be 1..7, got " + std::to_string(k));
    return CovarianceModel(ModelKind::Rational, "LH" + std::to_string(k),
                           std::make_shared<detail::RationalImpl>(polys[static_cast<std::size_t>(k - 1)]));
  }

  /// cos(k t) exp(-t^2/2): WH0, WH1, ...
  static CovarianceModel shifted_gaussian(int k) {
    if (k < 0) throw ConfigError("shifted Gaussian index must be nonnegative");
    return CovarianceModel(ModelKind::ShiftedGaussian, "WH" + std::to_string(k),
                           std::make_shared<detail::ShiftedGaussianImpl>(k));
  }

  /// sech(t/2)^(d/2): diffusion in dimension d.
  static CovarianceModel diffusion(int d) {
    if (d < 1) throw ConfigError("diffusion dimension must be positive");
    return CovarianceModel(ModelKind::Diffusion, "BMS" + std::to_string(d),
                           std::make_shared<detail::DiffusionImpl>(d));
  }

  static CovarianceModel white_noise_sinc() {
    return CovarianceModel(ModelKind::WhiteNoiseSinc, "WN", std::make_shared<detail::SincImpl>());
  }

  static CovarianceModel butterworth14() {
    return CovarianceModel(ModelKind::Butterworth14, "BS", std::make_shared<detail::ButterworthImpl>());
  }

  static CovarianceModel jonswap(const JonswapParams& p = {}) {
    std::vector<double> w;
    auto s = detail::jonswap_density(p, w);
    return CovarianceModel(ModelKind::Jonswap, "J", std::make_shared<detail::TabulatedImpl>(w, s, true));
  }

  /// Two-sided spectral density tabulated on an increasing grid. A grid that
  /// starts at w >= 0 is mirrored to negative frequencies.
  static CovarianceModel tabulated(std::vector<double> w, std::vector<double> s, std::string code = "TAB") {
    return CovarianceModel(ModelKind::Tabulated, std::move(code),
                           std::make_shared<detail::TabulatedImpl>(std::move(w), std::move(s), false));
  }

  /// f(t, n) = n-th derivative of r at t >= 0 (right limit at 0 for odd n).
  static CovarianceModel closed_form(std::function<double(double, int)> f, int max_order = 4, bool regular = true,
                                     std::string code = "CF") {
    return CovarianceModel(ModelKind::ClosedForm, std::move(code),
                           std::make_shared<detail::ClosedFormImpl>(std::move(f), max_order, regular));
  }

  /// Parses "LH1".."LH7", "WHk", "BMSd", "WN", "BS", "J".
  static CovarianceModel from_code(const std::string& code) {
    std::string c;
    for (char ch : code) c += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    auto index = [&](std::size_t prefix) -> int {
      const std::string rest = c.substr(prefix);
      if (rest.empty() || rest.size() > 4 || !std::all_of(rest.begin(), rest.end(), ::isdigit))
        throw ConfigError("unknown model code '" + code + "'");
      return std::stoi(rest);
    };
    if (c == "WN") return white_noise_sinc();
    if (c == "BS") return butterworth14();
    if (c == "J") return jonswap();
    if (c.rfind("LH", 0) == 0) return rational(index(2));
    if (c.rfind("WH", 0) == 0) return shifted_gaussian(index(2));
    if (c.rfind("BMS", 0) == 0) return diffusion(index(3));
    throw ConfigError("unknown model code '" + code + "'");
  }

  ModelKind kind() const { return kind_; }
  const std::string& code() const { return code_; }
  double scale() const { return scale_; }
  double amplitude() const { return amplitude_; }

  /// n-th derivative of r at t (any sign); r^(n)(-t) = (-1)^n r^(n)(t).
  double derivative(double t, int order) const {
    if (!impl_) throw ConfigError("empty covariance model");
    const double at = std::abs(t);
    double v = impl_->eval(scale_ * at, order) * std::pow(scale_, order) / amplitude_;
    if (t < 0.0 && order % 2 == 1) v = -v;
    return v;
  }
  double cov(double t) const { return derivative(t, 0); }
  double cov_d1(double t) const { return derivative(t, 1); }
  double cov_d2(double t) const { return derivative(t, 2); }
  double cov_d4(double t) const { return derivative(t, 4); }

  SpectralMoments moments() const {
    SpectralMoments m;
    m.lambda0 = derivative(0.0, 0);
    m.lambda2 = -derivative(0.0, 2);
    m.regular = impl_->regular();
    if (m.regular) {
      m.lambda4 = impl_->lambda4() * std::pow(scale_, 4) / amplitude_;
      if (std::isfinite(m.lambda4) && m.lambda4 > 0.0) m.alpha = m.lambda2 / std::sqrt(m.lambda0 * m.lambda4);
      else m.regular = std::isfinite(m.lambda4);
    } else {
      m.lambda4 = std::numeric_limits<double>::infinity();
      if (impl_->max_order() >= 3) m.C = impl_->eval(0.0, 3) * std::pow(scale_, 3) / amplitude_;
    }
    return m;
  }

  /// Rescaled copy with r(0) = 1 and -r''(0) = 1.
  CovarianceModel normalized() const {
    const double l0 = derivative(0.0, 0);
    const double l2 = -derivative(0.0, 2);
    if (!(l0 > 0.0)) throw NumericalError("covariance model has r(0) <= 0");
    if (!(l2 > 0.0)) throw NumericalError("covariance model has lambda2 = 0; cannot normalize");
    CovarianceModel out = *this;
    out.amplitude_ = amplitude_ * l0;
    out.scale_ = scale_ * std::sqrt(l0 / l2);
    return out;
  }

  /// Upcrossing intensity of level u, sqrt(lambda2/lambda0)/(2 pi) exp(-u^2/(2 lambda0)).
  double upcrossing_rate(double u = 0.0) const {
    const double l0 = derivative(0.0, 0);
    const double l2 = -derivative(0.0, 2);
    return std::sqrt(l2 / l0) / kTwoPi * std::exp(-0.5 * u * u / l0);
  }

  /// Two-sided spectral density of this (scaled) model where available.
  std::optional<double> spectral_density(double w) const {
    auto s = impl_->spectrum(w / scale_);
    if (!s) return std::nullopt;
    return *s / (scale_ * amplitude_);
  }

  /// Quadrature error estimate of r(0) for tabulated spectra, 0 otherwise.
  double quadrature_error() const {
    if (auto* t = dynamic_cast<const detail::TabulatedImpl*>(impl_.get())) return t->quadrature_error() / amplitude_;
    return 0.0;
  }

 private:
  CovarianceModel(ModelKind kind, std::string code, std::shared_ptr<const detail::CovImpl> impl)
      : kind_(kind), code_(std::move(code)), impl_(std::move(impl)) {}

  ModelKind kind_ = ModelKind::ClosedForm;
  std::string code_;
  std::shared_ptr<const detail::CovImpl> impl_;
  double scale_ = 1.0;
  double amplitude_ = 1.0;
};

/// Constant K of the small-interval limit f_T(0+) = K alpha for irregular processes.
inline constexpr double kIrregularLimitConstant = 1.15597;

/// K * alpha with alpha = C / (6 lambda2), evaluated on the normalized model.
inline double irregular_limit(const CovarianceModel& model) {
  const SpectralMoments m = model.normalized().moments();
  if (m.regular || m.C == 0.0) throw ConfigError("irregular_limit called on a regular model (" + model.code() + ")");
  return kIrregularLimitConstant * m.C / (6.0 * m.lambda2);
}

/// r(t_k) of a tabulated spectrum at the given lags.
inline std::vector<double> spectrum_to_cov(const std::vector<double>& w, const std::vector<double>& s,
                                           const std::vector<double>& t) {
  detail::TabulatedImpl impl(w, s, true);
  std::vector<double> r(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) r[i] = impl.eval(std::abs(t[i]), 0);
  return r;
}

/// r, r', r'' at lags k * dt, k = 0..n-1.
class LagTable {
 public:
  LagTable() = default;
  LagTable(const CovarianceModel& model, double dt, std::size_t n) : dt_(dt), r_(3, std::vector<double>(n)) {
    for (int o = 0; o < 3; ++o)
      for (std::size_t k = 0; k < n; ++k) r_[static_cast<std::size_t>(o)][k] = model.derivative(dt * static_cast<double>(k), o);
  }
  double dt() const { return dt_; }
  std::size_t size() const { return r_.empty() ? 0 : r_[0].size(); }
  /// order-th derivative of r at lag (index difference) k, any sign.
  double at(int order, long k) const {
    const std::size_t a = static_cast<std::size_t>(k < 0 ? -k : k);
    if (a >= size()) throw ConfigError("lag index outside the lag table");
    const double v = r_[static_cast<std::size_t>(order)][a];
    return (k < 0 && order == 1) ? -v : v;
  }

 private:
  double dt_ = 0.0;
  std::vector<std::vector<double>> r_;
};

/// A process value X(t) or derivative X'(t) at grid time index `index`.
struct GridVar {
  enum Type { Value, Derivative } type = Value;
  long index = 0;
};

/// Covariance of grid variables from a lag table:
/// Cov(X(s), X(t)) = r(t-s), Cov(X(s), X'(t)) = r'(t-s), Cov(X'(s), X'(t)) = -r''(t-s).
inline Eigen::MatrixXd assemble_covariance(const LagTable& lags, const std::vector<GridVar>& vars) {
  const std::size_t n = vars.size();
  Eigen::MatrixXd S(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const GridVar& a = vars[i];
      const GridVar& b = vars[j];
      const long lag = b.index - a.index;
      double v;
      if (a.type == GridVar::Value && b.type == GridVar::Value) v = lags.at(0, lag);
      else if (a.type == GridVar::Value) v = lags.at(1, lag);
      else if (b.type == GridVar::Value) v = lags.at(1, -lag);
      else v = -lags.at(2, lag);
      S(i, j) = v;
      S(j, i) = v;
    }
  }
  return S;
}

/// Same as assemble_covariance for arbitrary (off-grid) times.
inline Eigen::MatrixXd assemble_covariance(const CovarianceModel& model, const std::vector<std::pair<GridVar::Type, double>>& vars) {
  const std::size_t n = vars.size();
  Eigen::MatrixXd S(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const auto& [ta, sa] = vars[i];
      const auto& [tb, sb] = vars[j];
      const double lag = sb - sa;
      double v;
      if (ta == GridVar::Value && tb == GridVar::Value) v = model.derivative(lag, 0);
      else if (ta == GridVar::Value) v = model.derivative(lag, 1);
      else if (tb == GridVar::Value) v = model.derivative(-lag, 1);
      else v = -model.derivative(lag, 2);
      S(i, j) = v;
      S(j, i) = v;
    }
  }
  return S;
}

struct GridSpec {
  double dt = 0.2;
  int n_left = 0;   // grid steps in (-t1, 0)
  int n_right = 0;  // grid steps in (0, t2)
  std::size_t max_dim = 400;
};

/// Covariance blocks of [Xt; Xd; Xc] for the two-interval configuration
/// -t1 < 0 < t2. The variables are reflected, Y = u - X, so the mean is u at
/// value coordinates and 0 at derivative coordinates; the covariance equals
/// that of X (reflection changes sign of every variable at once).
struct BlockCovariance {
  Eigen::MatrixXd sigma;
  Eigen::VectorXd mean;
  std::vector<std::string> labels;
  std::size_t n_t = 0;  // interior values
  std::size_t n_d = 3;  // derivatives at -t1, 0, t2
  std::size_t n_c = 3;  // values at -t1, 0, t2
  double min_eigenvalue = 0.0;
};

inline BlockCovariance build_block_covariance(const CovarianceModel& model, const GridSpec& grid, double t1, double t2,
                                              double u, double ridge = 1e-7, bool check_psd = true) {
  const long n1 = std::lround(t1 / grid.dt);
  const long n2 = std::lround(t2 / grid.dt);
  if (n1 < 1 || n2 < 1 || std::abs(n1 * grid.dt - t1) > 1e-9 * (1.0 + t1) || std::abs(n2 * grid.dt - t2) > 1e-9 * (1.0 + t2))
    throw ConfigError("t1 and t2 must be positive multiples of dt");
  const std::size_t n_t = static_cast<std::size_t>(n1 - 1 + n2 - 1);
  if (n_t + 6 > grid.max_dim) throw ConfigError("block covariance dimension " + std::to_string(n_t + 6) + " exceeds max_dim");
  LagTable lags(model, grid.dt, static_cast<std::size_t>(n1 + n2 + 1));
  std::vector<GridVar> vars;
  BlockCovariance out;
  for (long i = -n1 + 1; i < 0; ++i) {
    vars.push_back({GridVar::Value, i});
    out.labels.push_back("X(" + std::to_string(i * grid.dt) + ")");
  }
  for (long i = 1; i < n2; ++i) {
    vars.push_back({GridVar::Value, i});
    out.labels.push_back("X(" + std::to_string(i * grid.dt) + ")");
  }
  for (long i : {-n1, 0L, n2}) {
    vars.push_back({GridVar::Derivative, i});
    out.labels.push_back("dX(" + std::to_string(i * grid.dt) + ")");
  }
  for (long i : {-n1, 0L, n2}) {
    vars.push_back({GridVar::Value, i});
    out.labels.push_back("X(" + std::to_string(i * grid.dt) + ")");
  }
  out.n_t = n_t;
  out.sigma = assemble_covariance(lags, vars);
  out.sigma.diagonal().array() += ridge;
  out.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vars.size()));
  for (std::size_t i = 0; i < vars.size(); ++i)
    if (vars[i].type == GridVar::Value) out.mean(static_cast<Eigen::Index>(i)) = u;
  if (check_psd) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.sigma, Eigen::EigenvaluesOnly);
    out.min_eigenvalue = es.eigenvalues().minCoeff();
    if (out.min_eigenvalue < -1e-8)
      throw NumericalError("block covariance not positive definite after ridge; min eigenvalue " +
                           std::to_string(out.min_eigenvalue));
  }
  return out;
}

}  // namespace crossint
