#pragma once

// Crossing-interval distributions from the generalized Rice formula:
// first-passage density, stationary interval tail and pdf, joint pdf of two
// and three successive intervals, triple crossing intensity, delay-time
// relations, and persistence probabilities with exponent estimation.

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "crossint/core.hpp"
#include "crossint/covmodel.hpp"
#include "crossint/mvnexp.hpp"

namespace crossint {

enum class Side { Above, Below };

/// A crossing of level u at grid index `index`, upward or downward.
struct Crossing {
  long index = 0;
  bool up = true;
};

/// Grid indices first..last (inclusive) constrained to one side of u.
struct Segment {
  long first = 0;
  long last = -1;
  Side side = Side::Above;
};

struct CrossingLayout {
  std::vector<Crossing> crossings;
  std::vector<Segment> segments;
};

/// Variables ordered [segment values (time order); derivatives at crossings;
/// values at crossings]. Derivatives carry x^+ (upcrossing) or x^- (down)
/// weights; values at crossings are conditioned on u.
inline MvnProblem build_crossing_problem(const LagTable& lags, const CrossingLayout& layout, double u,
                                         double ridge = 1e-7) {
  std::vector<GridVar> vars;
  std::vector<double> lo, hi;
  const double inf = std::numeric_limits<double>::infinity();
  for (const Segment& s : layout.segments) {
    for (long i = s.first; i <= s.last; ++i) {
      vars.push_back({GridVar::Value, i});
      lo.push_back(s.side == Side::Above ? u : -inf);
      hi.push_back(s.side == Side::Above ? inf : u);
    }
  }
  const std::size_t n_t = vars.size();
  for (const Crossing& c : layout.crossings) {
    vars.push_back({GridVar::Derivative, c.index});
    lo.push_back(-inf);
    hi.push_back(inf);
  }
  for (const Crossing& c : layout.crossings) {
    vars.push_back({GridVar::Value, c.index});
    lo.push_back(-inf);
    hi.push_back(inf);
  }
  MvnProblem p;
  p.cov = assemble_covariance(lags, vars);
  p.cov.diagonal().array() += ridge;
  const auto n = static_cast<Eigen::Index>(vars.size());
  p.mean = Eigen::VectorXd::Zero(n);
  p.lower = Eigen::Map<Eigen::VectorXd>(lo.data(), n);
  p.upper = Eigen::Map<Eigen::VectorXd>(hi.data(), n);
  const std::size_t nc = layout.crossings.size();
  for (std::size_t k = 0; k < nc; ++k) {
    p.weights.push_back({n_t + k, layout.crossings[k].up ? WeightSign::Positive : WeightSign::Negative});
    p.cond_indices.push_back(n_t + nc + k);
    p.cond_values.push_back(u);
  }
  return p;
}

struct CrossingOptions {
  MvnOptions mvn;          // speed, seed, threads, max_dim
  double ridge = 1e-7;     // diagonal regularization of every covariance matrix
  bool extrapolate = true; // half-step extrapolation for the one-crossing routes
  bool prefix_route = false; // one natural-order run instead of one integral per point
};

/// Gridded one-dimensional density.
struct Density1D {
  std::vector<double> t;
  std::vector<double> f;
  std::vector<double> err;   // sampling error (3 sigma)
  std::vector<double> terr;  // truncation error
  double normalization = 0.0;  // trapezoid integral over the grid
  double tail_mass = 0.0;      // exponential closure beyond the grid
  double mean = 0.0;           // with the tail closure, divided by total mass
  double level = 0.0;
};

namespace detail {

// Exponential tail closure from the last part of a gridded density:
// returns (mass, first moment) beyond t.back(), or zeros if the tail does not
// look exponentially decaying.
inline std::pair<double, double> exponential_tail(const std::vector<double>& t, const std::vector<double>& f) {
  const std::size_t n = t.size();
  if (n < 8) return {0.0, 0.0};
  const std::size_t m = std::max<std::size_t>(4, n / 10);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = n - m; i < n; ++i) {
    if (!(f[i] > 0.0)) return {0.0, 0.0};
    const double y = std::log(f[i]);
    sx += t[i];
    sy += y;
    sxx += t[i] * t[i];
    sxy += t[i] * y;
  }
  const double md = static_cast<double>(m);
  const double slope = (md * sxy - sx * sy) / (md * sxx - sx * sx);
  if (!(slope < 0.0)) return {0.0, 0.0};
  const double theta = -slope;
  const double T = t.back();
  const double fT = f.back();
  return {fT / theta, fT * (T / theta + 1.0 / (theta * theta))};
}

inline void finish_density(Density1D& d) {
  d.normalization = trapezoid(d.t, d.f);
  std::vector<double> tf(d.t.size());
  for (std::size_t i = 0; i < d.t.size(); ++i) tf[i] = d.t[i] * d.f[i];
  const double m1 = trapezoid(d.t, tf);
  const auto [tm, t1] = exponential_tail(d.t, d.f);
  d.tail_mass = tm;
  const double total = d.normalization + tm;
  d.mean = total > 0.0 ? (m1 + t1) / total : 0.0;
}

inline long grid_steps(double t, double dt) {
  const long n = std::lround(t / dt);
  if (std::abs(static_cast<double>(n) * dt - t) > 1e-9 * (1.0 + std::abs(t)))
    throw ConfigError("time " + std::to_string(t) + " is not a multiple of dt " + std::to_string(dt));
  return n;
}

inline MvnOptions cell_options(const CrossingOptions& o, std::uint64_t cell) {
  MvnOptions m = o.mvn;
  m.threads = 1;
  m.seed = o.mvn.seed * 0x9E3779B97F4A7C15ULL + cell * 0xBF58476D1CE4E5B9ULL + 1;
  return m;
}

}  // namespace detail

namespace detail {

// v[k] = E[X'(0)^+- 1{X on `side` of u at grid points 1..k-1} | X(0) = u] f(u)
// for k = 0..n at grid points k = 0, stride, 2 stride, ... (others zero),
// with 3-sigma errors. Either one natural-order prefix run or one reordered
// integral per point.
inline std::pair<std::vector<double>, std::vector<double>> one_sided_raw(const CovarianceModel& model, double dt,
                                                                         long n, long stride, double u, Side side,
                                                                         const CrossingOptions& opt) {
  LagTable lags(model, dt, static_cast<std::size_t>(n + 1));
  std::vector<double> v(static_cast<std::size_t>(n + 1), 0.0), e(v.size(), 0.0);
  v[0] = normal::pdf(u) * kInvSqrtTwoPi;
  if (n >= 1) v[1] = v[0];  // no interior points
  auto layout = [&](long k) {
    CrossingLayout lay;
    lay.crossings.push_back({0, side == Side::Above});
    if (k >= 2) lay.segments.push_back({1, k - 1, side});
    return lay;
  };
  if (opt.prefix_route) {
    MvnOptions mo = opt.mvn;
    mo.prefix = true;
    const IntegralResult r = mvn_weighted(build_crossing_problem(lags, layout(n), u, opt.ridge), mo);
    for (std::size_t k = 0; k < r.prefix_values.size(); ++k) {
      v[k + 2] = r.prefix_values[k];
      e[k + 2] = r.prefix_errors[k];
    }
    return {v, e};
  }
  std::vector<long> ks;
  for (long k = 2; k <= n; ++k)
    if (k % stride == 0) ks.push_back(k);
  parallel_for(ks.size(), opt.mvn.threads, [&](std::size_t i) {
    const long k = ks[i];
    const IntegralResult r = mvn_weighted(build_crossing_problem(lags, layout(k), u, opt.ridge),
                                          cell_options(opt, static_cast<std::uint64_t>(k) * 4 + (side == Side::Below) +
                                                                2 * (stride > 1)));
    v[static_cast<std::size_t>(k)] = r.value;
    e[static_cast<std::size_t>(k)] = r.sampling_error;
  });
  return {v, e};
}

// The grid check misses crossings between grid points next to the
// conditioning crossing, an O(dt) bias; remove it with a half-step run.
inline std::pair<std::vector<double>, std::vector<double>> one_sided(const CovarianceModel& model, double dt, long n,
                                                                     double u, Side side, const CrossingOptions& opt) {
  auto coarse = one_sided_raw(model, dt, n, 1, u, side, opt);
  if (!opt.extrapolate) return coarse;
  const auto fine = one_sided_raw(model, 0.5 * dt, 2 * n, opt.prefix_route ? 1 : 2, u, side, opt);
  for (std::size_t k = 2; k < coarse.first.size(); ++k) {
    coarse.first[k] = std::max(0.0, 2.0 * fine.first[2 * k] - coarse.first[k]);
    coarse.second[k] = std::hypot(2.0 * fine.second[2 * k], coarse.second[k]);
  }
  return coarse;
}

}  // namespace detail

/// Density of the first crossing time A after the origin on t = k dt,
/// k = 0..n: E[X'(0)^+ 1{X > u on (0, a)} | X(0) = u] f(u) plus the mirrored
/// term for an excursion below u.
inline Density1D first_passage_density(const CovarianceModel& model_in, double dt, long n, double u,
                                       const CrossingOptions& opt = {}) {
  const CovarianceModel model = model_in.normalized();
  if (n < 2) throw ConfigError("first_passage_density needs at least 2 grid steps");
  Density1D d;
  d.level = u;
  d.t = linspace(0.0, dt * static_cast<double>(n), static_cast<std::size_t>(n + 1));
  d.f.assign(d.t.size(), 0.0);
  d.err.assign(d.t.size(), 0.0);
  d.terr.assign(d.t.size(), 0.0);
  for (Side side : {Side::Above, Side::Below}) {
    const auto [v, e] = detail::one_sided(model, dt, n, u, side, opt);
    for (std::size_t k = 0; k < v.size(); ++k) {
      d.f[k] += v[k];
      d.err[k] = std::hypot(d.err[k], e[k]);
    }
  }
  detail::finish_density(d);
  return d;
}

/// Stationary tail P(T > t) of excursions on `side` of u at t = k dt,
/// k = 0..n: nu^{-1} E[X'(0)^+ 1{X > u on (0, t)} | X(0) = u] f(u).
/// `mean` holds the area under the tail (the mean interval length on the grid).
inline Density1D interval_tail(const CovarianceModel& model_in, double dt, long n, double u, Side side = Side::Above,
                               const CrossingOptions& opt = {}) {
  const CovarianceModel model = model_in.normalized();
  if (n < 2) throw ConfigError("interval_tail needs at least 2 grid steps");
  const double nu = model.upcrossing_rate(u);
  const auto [v, e] = detail::one_sided(model, dt, n, u, side, opt);
  Density1D d;
  d.level = u;
  d.t = linspace(0.0, dt * static_cast<double>(n), static_cast<std::size_t>(n + 1));
  d.f.resize(v.size());
  d.err.resize(v.size());
  d.terr.assign(v.size(), 0.0);
  for (std::size_t k = 0; k < v.size(); ++k) {
    d.f[k] = v[k] / nu;
    d.err[k] = e[k] / nu;
  }
  d.normalization = 1.0;
  d.mean = trapezoid(d.t, d.f);
  return d;
}

/// Stationary pdf of excursion intervals on `side` of u at one value t:
/// nu^{-1} E[X'(0)^+ X'(t)^- 1{X > u on (0,t)} | X(0) = X(t) = u] f(u, u).
inline IntegralResult interval_pdf_value(const CovarianceModel& normalized_model, const LagTable& lags, long steps,
                                         double u, Side side, const CrossingOptions& opt, std::uint64_t cell) {
  CrossingLayout lay;
  const bool above = side == Side::Above;
  lay.crossings.push_back({0, above});
  lay.crossings.push_back({steps, !above});
  if (steps >= 2) lay.segments.push_back({1, steps - 1, side});
  IntegralResult r = mvn_weighted(build_crossing_problem(lags, lay, u, opt.ridge), detail::cell_options(opt, cell));
  const double nu = normalized_model.upcrossing_rate(u);
  r.value /= nu;
  r.sampling_error /= nu;
  r.truncation_error /= nu;
  return r;
}

/// f_T on t = 0, dt, ..., n dt. For irregular models the value at 0 is the
/// limit K alpha and the value at dt is interpolated between 0 and 2 dt.
inline Density1D interval_pdf(const CovarianceModel& model_in, double dt, long n, double u, Side side = Side::Above,
                              const CrossingOptions& opt = {}) {
  const CovarianceModel model = model_in.normalized();
  LagTable lags(model, dt, static_cast<std::size_t>(n + 1));
  Density1D d;
  d.level = u;
  d.t = linspace(0.0, dt * static_cast<double>(n), static_cast<std::size_t>(n + 1));
  d.f.assign(d.t.size(), 0.0);
  d.err.assign(d.t.size(), 0.0);
  d.terr.assign(d.t.size(), 0.0);
  parallel_for(static_cast<std::size_t>(n), opt.mvn.threads, [&](std::size_t i) {
    const long k = static_cast<long>(i) + 1;
    const IntegralResult r = interval_pdf_value(model, lags, k, u, side, opt, static_cast<std::uint64_t>(k));
    d.f[static_cast<std::size_t>(k)] = r.value;
    d.err[static_cast<std::size_t>(k)] = r.sampling_error;
    d.terr[static_cast<std::size_t>(k)] = r.truncation_error;
  });
  const SpectralMoments m = model.moments();
  if (!m.regular && m.C != 0.0 && n >= 2) {
    d.f[0] = irregular_limit(model);
    d.f[1] = 0.5 * (d.f[0] + d.f[2]);
  }
  detail::finish_density(d);
  return d;
}

/// Joint density of an excursion above u (T1) followed by one below u (T2).
struct JointDensity2D {
  std::vector<double> t1, t2;
  Eigen::MatrixXd f;     // f(i, k) at (t1[i], t2[k])
  Eigen::MatrixXd err;
  Eigen::MatrixXd terr;
  std::vector<double> m1, m2;  // marginals
  double mean1 = 0.0, mean2 = 0.0;
  double corr = 0.0;
  double kl = 0.0;
  double normalization = 0.0;
  double level = 0.0;
  std::size_t missing_cells = 0;
  double seconds = 0.0;
};

/// Marginals, normalization, means and correlation from trapezoid moments.
/// Moments are divided by the normalization integral.
inline void joint_summaries(JointDensity2D& j) {
  const std::size_t n1 = j.t1.size(), n2 = j.t2.size();
  j.m1.assign(n1, 0.0);
  j.m2.assign(n2, 0.0);
  std::vector<double> row(n2), col(n1);
  for (std::size_t i = 0; i < n1; ++i) {
    for (std::size_t k = 0; k < n2; ++k) row[k] = j.f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    j.m1[i] = trapezoid(j.t2, row);
  }
  for (std::size_t k = 0; k < n2; ++k) {
    for (std::size_t i = 0; i < n1; ++i) col[i] = j.f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    j.m2[k] = trapezoid(j.t1, col);
  }
  j.normalization = trapezoid(j.t1, j.m1);
  auto moment = [](const std::vector<double>& t, const std::vector<double>& m, int p) {
    std::vector<double> y(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) y[i] = std::pow(t[i], p) * m[i];
    return trapezoid(t, y);
  };
  const double Z = j.normalization > 0.0 ? j.normalization : 1.0;
  const double e1 = moment(j.t1, j.m1, 1) / Z, e2 = moment(j.t2, j.m2, 1) / Z;
  const double e11 = moment(j.t1, j.m1, 2) / Z, e22 = moment(j.t2, j.m2, 2) / Z;
  std::vector<double> inner(n1);
  for (std::size_t i = 0; i < n1; ++i) {
    for (std::size_t k = 0; k < n2; ++k) row[k] = j.t2[k] * j.f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    inner[i] = j.t1[i] * trapezoid(j.t2, row);
  }
  const double e12 = trapezoid(j.t1, inner) / Z;
  j.mean1 = e1;
  j.mean2 = e2;
  const double v1 = e11 - e1 * e1, v2 = e22 - e2 * e2;
  j.corr = (v1 > 0.0 && v2 > 0.0) ? (e12 - e1 * e2) / std::sqrt(v1 * v2) : std::numeric_limits<double>::quiet_NaN();
}

struct JointGrid {
  double dt = 0.2;
  long n1 = 60;  // t1 = 0, dt, ..., n1 dt
  long n2 = 60;
};

/// Kullback-Leibler distance between the joint density and the product of
/// its marginals, both renormalized to unit mass on the grid. Missing (NaN)
/// cells are skipped.
inline double kl_distance(const JointDensity2D& j) {
  const auto n1 = j.f.rows(), n2 = j.f.cols();
  double fmax = 0.0;
  for (Eigen::Index i = 0; i < n1; ++i)
    for (Eigen::Index k = 0; k < n2; ++k)
      if (!std::isnan(j.f(i, k))) fmax = std::max(fmax, j.f(i, k));
  const double eps = std::numeric_limits<double>::epsilon() * std::max(fmax, 1e-300);
  if (static_cast<std::size_t>(n1) != j.m1.size() || static_cast<std::size_t>(n2) != j.m2.size())
    throw ConfigError("kl_distance: marginals do not match the grid");
  double sf = 0.0, sg = 0.0;
  for (Eigen::Index i = 0; i < n1; ++i)
    for (Eigen::Index k = 0; k < n2; ++k) {
      if (std::isnan(j.f(i, k))) continue;
      sf += std::max(j.f(i, k), 0.0) + eps;
      sg += std::max(j.m1[static_cast<std::size_t>(i)] * j.m2[static_cast<std::size_t>(k)], 0.0) + eps;
    }
  double kl = 0.0;
  for (Eigen::Index i = 0; i < n1; ++i)
    for (Eigen::Index k = 0; k < n2; ++k) {
      if (std::isnan(j.f(i, k))) continue;
      const double p = (std::max(j.f(i, k), 0.0) + eps) / sf;
      const double q = (std::max(j.m1[static_cast<std::size_t>(i)] * j.m2[static_cast<std::size_t>(k)], 0.0) + eps) / sg;
      kl += p * std::log(p / q);
    }
  return std::max(kl, 0.0);
}

/// f_{T1,T2}(t1, t2) = nu^{-1} E[X'(-t1)^+ X'(0)^- X'(t2)^+ 1{X > u on (-t1,0), X < u on (0,t2)}
///                     | X(-t1) = X(0) = X(t2) = u] f(u, u, u)
/// on the full grid. At u = 0 the lower triangle is filled by time reversal;
/// irregular models get the axes filled from the adjacent row and column.
inline JointDensity2D joint_interval_pdf(const CovarianceModel& model_in, const JointGrid& grid, double u,
                                         const CrossingOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  const CovarianceModel model = model_in.normalized();
  const long n1 = grid.n1, n2 = grid.n2;
  if (n1 < 2 || n2 < 2) throw ConfigError("joint grid needs at least 2 steps per axis");
  if (static_cast<std::size_t>(n1 + n2 - 2 + 6) > opt.mvn.max_dim)
    throw ConfigError("joint grid exceeds max_dim; reduce n1 + n2");
  LagTable lags(model, grid.dt, static_cast<std::size_t>(n1 + n2 + 1));
  const double nu = model.upcrossing_rate(u);
  JointDensity2D j;
  j.level = u;
  j.t1 = linspace(0.0, grid.dt * static_cast<double>(n1), static_cast<std::size_t>(n1 + 1));
  j.t2 = linspace(0.0, grid.dt * static_cast<double>(n2), static_cast<std::size_t>(n2 + 1));
  j.f = Eigen::MatrixXd::Zero(n1 + 1, n2 + 1);
  j.err = Eigen::MatrixXd::Zero(n1 + 1, n2 + 1);
  j.terr = Eigen::MatrixXd::Zero(n1 + 1, n2 + 1);
  std::vector<char> missing(static_cast<std::size_t>(n1 * n2), 0);
  // at u = 0 time reversal gives f(t1, t2) = f(t2, t1): integrate k >= i only
  const bool sym = u == 0.0 && n1 == n2;
  parallel_for(static_cast<std::size_t>(n1 * n2), opt.mvn.threads, [&](std::size_t c) {
    const long i = static_cast<long>(c) / n2 + 1;
    const long k = static_cast<long>(c) % n2 + 1;
    if (sym && k < i) return;
    CrossingLayout lay;
    lay.crossings = {{-i, true}, {0, false}, {k, true}};
    if (i >= 2) lay.segments.push_back({-i + 1, -1, Side::Above});
    if (k >= 2) lay.segments.push_back({1, k - 1, Side::Below});
    try {
      const IntegralResult r =
          mvn_weighted(build_crossing_problem(lags, lay, u, opt.ridge), detail::cell_options(opt, c));
      j.f(i, k) = r.value / nu;
      j.err(i, k) = r.sampling_error / nu;
      j.terr(i, k) = r.truncation_error / nu;
    } catch (const NumericalError&) {
      missing[c] = 1;
    }
  });
  if (sym) {
    for (long i = 1; i <= n1; ++i)
      for (long k = 1; k < i; ++k) {
        j.f(i, k) = j.f(k, i);
        j.err(i, k) = j.err(k, i);
        j.terr(i, k) = j.terr(k, i);
        missing[static_cast<std::size_t>((i - 1) * n2 + (k - 1))] = missing[static_cast<std::size_t>((k - 1) * n2 + (i - 1))];
      }
  }
  for (char m : missing) j.missing_cells += static_cast<std::size_t>(m);
  const SpectralMoments m = model.moments();
  if (!m.regular && m.C != 0.0) {
    for (long k = 1; k <= n2; ++k) j.f(0, k) = j.f(1, k);
    for (long i = 1; i <= n1; ++i) j.f(i, 0) = j.f(i, 1);
  }
  joint_summaries(j);
  j.kl = kl_distance(j);
  j.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return j;
}

/// Bin centres x_j = x0 + j * width (j = 0..n-1) for the Markov test
/// densities; x0 and width must be multiples of the indicator spacing dt.
struct BinGrid {
  double x0 = 0.5;
  double width = 0.5;
  std::size_t n = 12;
  double dt = 0.1;
  std::vector<long> steps() const {
    const long s0 = detail::grid_steps(x0, dt), sw = detail::grid_steps(width, dt);
    if (s0 < 1 || sw < 1) throw ConfigError("BinGrid: x0 and width must be positive multiples of dt");
    std::vector<long> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = s0 + sw * static_cast<long>(j);
    return out;
  }
  std::vector<double> centres() const {
    std::vector<double> x(n);
    for (std::size_t j = 0; j < n; ++j) x[j] = x0 + width * static_cast<double>(j);
    return x;
  }
};

/// Gridded density of three successive intervals: T0 below u, T1 above,
/// T2 below.
struct TriDensity {
  std::vector<double> x;  // bin centres, shared by all axes
  std::vector<double> f;  // f[(a * n + b) * n + c]
  std::vector<double> err;
  double level = 0.0;
  std::size_t missing_cells = 0;
  std::size_t n() const { return x.size(); }
  double at(std::size_t a, std::size_t b, std::size_t c) const { return f[(a * n() + b) * n() + c]; }
};

inline TriDensity tri_interval_pdf(const CovarianceModel& model_in, const BinGrid& bins, double u,
                                   const CrossingOptions& opt = {}) {
  const CovarianceModel model = model_in.normalized();
  const std::vector<long> st = bins.steps();
  const long nmax = st.back();
  if (static_cast<std::size_t>(3 * nmax + 6) > opt.mvn.max_dim) throw ConfigError("tri-interval grid exceeds max_dim");
  LagTable lags(model, bins.dt, static_cast<std::size_t>(3 * nmax + 1));
  const double nu = model.upcrossing_rate(u);
  TriDensity d;
  d.level = u;
  d.x = bins.centres();
  const std::size_t n = bins.n;
  d.f.assign(n * n * n, 0.0);
  d.err.assign(n * n * n, 0.0);
  std::vector<char> missing(n * n * n, 0);
  const bool sym = u == 0.0;
  parallel_for(n * n * n, opt.mvn.threads, [&](std::size_t c) {
    const std::size_t ia = c / (n * n), ib = (c / n) % n, ic = c % n;
    if (sym && ic < ia) return;  // filled by time reversal below
    const long a = st[ia], b = st[ib], e = st[ic];
    CrossingLayout lay;
    lay.crossings = {{-b - a, false}, {-b, true}, {0, false}, {e, true}};
    if (a >= 2) lay.segments.push_back({-b - a + 1, -b - 1, Side::Below});
    if (b >= 2) lay.segments.push_back({-b + 1, -1, Side::Above});
    if (e >= 2) lay.segments.push_back({1, e - 1, Side::Below});
    try {
      const IntegralResult r =
          mvn_weighted(build_crossing_problem(lags, lay, u, opt.ridge), detail::cell_options(opt, c));
      d.f[c] = r.value / nu;
      d.err[c] = r.sampling_error / nu;
    } catch (const NumericalError&) {
      missing[c] = 1;
    }
  });
  for (char m : missing) d.missing_cells += static_cast<std::size_t>(m);
  if (sym) {
    // time reversal at u = 0: f(a, b, c) = f(c, b, a)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < a; ++c) {
          d.f[(a * n + b) * n + c] = d.f[(c * n + b) * n + a];
          d.err[(a * n + b) * n + c] = d.err[(c * n + b) * n + a];
        }
  }
  return d;
}

/// Joint density of (T1 above, T2 below) on the same bins.
inline JointDensity2D joint_interval_pdf_binned(const CovarianceModel& model_in, const BinGrid& bins, double u,
                                                const CrossingOptions& opt = {}) {
  const CovarianceModel model = model_in.normalized();
  const std::vector<long> st = bins.steps();
  LagTable lags(model, bins.dt, static_cast<std::size_t>(2 * st.back() + 1));
  const double nu = model.upcrossing_rate(u);
  JointDensity2D j;
  j.level = u;
  j.t1 = bins.centres();
  j.t2 = bins.centres();
  const std::size_t n = bins.n;
  j.f = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  j.err = j.f;
  j.terr = j.f;
  parallel_for(n * n, opt.mvn.threads, [&](std::size_t c) {
    const long a = st[c / n], b = st[c % n];
    CrossingLayout lay;
    lay.crossings = {{-a, true}, {0, false}, {b, true}};
    if (a >= 2) lay.segments.push_back({-a + 1, -1, Side::Above});
    if (b >= 2) lay.segments.push_back({1, b - 1, Side::Below});
    const IntegralResult r =
        mvn_weighted(build_crossing_problem(lags, lay, u, opt.ridge), detail::cell_options(opt, c + 7777777));
    j.f(static_cast<Eigen::Index>(c / n), static_cast<Eigen::Index>(c % n)) = r.value / nu;
    j.err(static_cast<Eigen::Index>(c / n), static_cast<Eigen::Index>(c % n)) = r.sampling_error / nu;
  });
  if (u == 0.0) {
    const Eigen::MatrixXd sym = 0.5 * (j.f + j.f.transpose());
    j.f = sym;
  }
  joint_summaries(j);
  return j;
}

/// nu^{+-+}(s, t, w) = E[X'(s)^+ X'(t)^- X'(w)^+ | X(s) = X(t) = X(w) = u] f(u, u, u), s < t < w.
inline IntegralResult triple_crossing_intensity(const CovarianceModel& model_in, double s, double t, double w,
                                                double u = 0.0, const CrossingOptions& opt = {}) {
  if (!(s < t && t < w)) throw ConfigError("triple_crossing_intensity requires s < t < w");
  const CovarianceModel model = model_in.normalized();
  using V = std::pair<GridVar::Type, double>;
  const std::vector<V> vars = {{GridVar::Derivative, s}, {GridVar::Derivative, t}, {GridVar::Derivative, w},
                               {GridVar::Value, s},      {GridVar::Value, t},      {GridVar::Value, w}};
  MvnProblem p = MvnProblem::unbounded(assemble_covariance(model, vars));
  p.cov.diagonal().array() += opt.ridge;
  p.weights = {{0, WeightSign::Positive}, {1, WeightSign::Negative}, {2, WeightSign::Positive}};
  p.cond_indices = {3, 4, 5};
  p.cond_values = {u, u, u};
  return mvn_weighted(p, opt.mvn);
}

/// Densities implied by an interval density f_T with mean mu:
/// f_{A,B}(a,b) = f_T(a+b)/mu, f_{A+B}(t) = t f_T(t)/mu, f_A(t) = int_t^inf f_T / mu.
struct DelayRelations {
  Density1D fA;
  Density1D fAB;             // density of A + B
  Eigen::MatrixXd joint_AB;  // f_{A,B} on the grid of fT (zero beyond it)
};

inline DelayRelations delay_relations(const Density1D& fT) {
  const std::size_t n = fT.t.size();
  if (n < 3) throw ConfigError("delay_relations needs a density on >= 3 grid points");
  const double total = fT.normalization + fT.tail_mass;
  if (!(fT.mean > 0.0)) throw ConfigError("delay_relations: mean must be positive");
  if (std::abs(total - 1.0) > 0.05) throw ConfigError("delay_relations: input density is not normalized");
  const double mu = fT.mean;
  DelayRelations out;
  out.fA.t = fT.t;
  out.fAB.t = fT.t;
  out.fA.f.assign(n, 0.0);
  out.fAB.f.assign(n, 0.0);
  // tail integral from the right, including the exponential closure
  double acc = fT.tail_mass;
  out.fA.f[n - 1] = acc / mu;
  for (std::size_t i = n - 1; i-- > 0;) {
    acc += 0.5 * (fT.t[i + 1] - fT.t[i]) * (fT.f[i] + fT.f[i + 1]);
    out.fA.f[i] = acc / mu;
  }
  for (std::size_t i = 0; i < n; ++i) out.fAB.f[i] = fT.t[i] * fT.f[i] / mu;
  out.joint_AB = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  // uniform grid assumed for the joint: index sum
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; a + b < n; ++b)
      out.joint_AB(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = fT.f[a + b] / mu;
  for (Density1D* d : {&out.fA, &out.fAB}) {
    d->err.assign(n, 0.0);
    d->terr.assign(n, 0.0);
    d->level = fT.level;
    detail::finish_density(*d);
  }
  return out;
}

/// Asymmetric version: the law of (A, B, delta) from the densities above
/// and below u. Returns P(delta = 1) and the conditional joint densities.
struct AsymmetricDelay {
  double p_above = 0.5;
  Eigen::MatrixXd joint_above;  // f_{A,B | delta = 1}
  Eigen::MatrixXd joint_below;  // f_{A,B | delta = -1}
};

inline AsymmetricDelay delay_relations(const Density1D& f_plus, const Density1D& f_minus) {
  if (!(f_plus.mean > 0.0) || !(f_minus.mean > 0.0)) throw ConfigError("delay_relations: means must be positive");
  AsymmetricDelay out;
  out.p_above = f_plus.mean / (f_plus.mean + f_minus.mean);
  out.joint_above = delay_relations(f_plus).joint_AB;
  out.joint_below = delay_relations(f_minus).joint_AB;
  return out;
}

/// Cumulative distribution of a gridded density (trapezoid).
inline std::vector<double> cumulative(const Density1D& d) {
  std::vector<double> F(d.t.size(), 0.0);
  for (std::size_t i = 1; i < d.t.size(); ++i) F[i] = F[i - 1] + 0.5 * (d.t[i] - d.t[i - 1]) * (d.f[i] + d.f[i - 1]);
  return F;
}

// =============================================================================
// Persistence
// =============================================================================

struct PersistenceCurve {
  std::vector<double> T;
  std::vector<double> Q;        // average over runs of P(no crossing of u in [0, T])
  std::vector<double> Q_err;    // 95% t-interval half width over runs
  std::vector<double> local_theta;
  std::vector<char> unreliable;  // Q below 1e-12
  int n_runs = 0;
  double theta_hat = std::numeric_limits<double>::quiet_NaN();
  double fit_lo = 0.0, fit_hi = 0.0;
  double level = 0.0;
};

enum class PersistenceMethod {
  Prefix,     // one natural-order pass gives every T on the grid
  Pointwise   // one reordered integral per reported T
};

struct PersistenceOptions {
  double dt = 0.1;
  double T_max = 30.0;
  long report_stride = 10;      // report Q every stride * dt
  int n_runs = 50;
  PersistenceMethod method = PersistenceMethod::Pointwise;
  CrossingOptions crossing;
};

/// Q_T = P(X > u on the grid of [0,T]) + P(X < u on the grid of [0,T]),
/// averaged over independent randomizations. The model is used as given
/// (no normalization), so T is in the model's own time unit.
inline PersistenceCurve persistence_QT(const CovarianceModel& model, double u, const PersistenceOptions& po) {
  const long n = detail::grid_steps(po.T_max, po.dt);
  if (n < 2) throw ConfigError("persistence grid needs at least 2 steps");
  if (static_cast<std::size_t>(n + 1) > po.crossing.mvn.max_dim)
    throw ConfigError("persistence grid exceeds max_dim (" + std::to_string(n + 1) + " points)");
  const long stride = std::max(1L, po.report_stride);
  LagTable lags(model, po.dt, static_cast<std::size_t>(n + 1));
  std::vector<long> report;
  for (long k = stride; k <= n; k += stride) report.push_back(k);
  if (report.empty() || report.back() != n) report.push_back(n);
  const std::size_t R = report.size();
  const int runs = std::max(1, po.n_runs);
  std::vector<std::vector<double>> q(static_cast<std::size_t>(runs), std::vector<double>(R, 0.0));

  auto problem = [&](long steps, Side side) {
    CrossingLayout lay;
    lay.segments.push_back({0, steps, side});
    return build_crossing_problem(lags, lay, u, po.crossing.ridge);
  };
  const std::vector<Side> sides = u == 0.0 ? std::vector<Side>{Side::Above} : std::vector<Side>{Side::Above, Side::Below};
  const double mult = u == 0.0 ? 2.0 : 1.0;

  parallel_for(static_cast<std::size_t>(runs), po.crossing.mvn.threads, [&](std::size_t run) {
    for (Side side : sides) {
      if (po.method == PersistenceMethod::Prefix) {
        MvnOptions mo = detail::cell_options(po.crossing, run * 2 + (side == Side::Below));
        mo.prefix = true;
        const IntegralResult r = mvn_probability(problem(n, side), mo);
        for (std::size_t i = 0; i < R; ++i) q[run][i] += mult * r.prefix_values[static_cast<std::size_t>(report[i])];
      } else {
        for (std::size_t i = 0; i < R; ++i) {
          MvnOptions mo = detail::cell_options(po.crossing, (run * R + i) * 2 + (side == Side::Below));
          mo.prefix = false;
          mo.reorder = true;
          q[run][i] += mult * mvn_probability(problem(report[i], side), mo).value;
        }
      }
    }
  });

  PersistenceCurve c;
  c.level = u;
  c.n_runs = runs;
  c.T.push_back(0.0);
  c.Q.push_back(1.0);
  c.Q_err.push_back(0.0);
  const double tq = runs > 1 ? boost::math::quantile(boost::math::students_t(runs - 1.0), 0.975) : 0.0;
  for (std::size_t i = 0; i < R; ++i) {
    double m = 0.0;
    for (int r = 0; r < runs; ++r) m += q[static_cast<std::size_t>(r)][i];
    m /= runs;
    double v = 0.0;
    for (int r = 0; r < runs; ++r) v += (q[static_cast<std::size_t>(r)][i] - m) * (q[static_cast<std::size_t>(r)][i] - m);
    v = runs > 1 ? v / (runs - 1) : 0.0;
    c.T.push_back(po.dt * static_cast<double>(report[i]));
    c.Q.push_back(m);
    c.Q_err.push_back(tq * std::sqrt(v / runs));
  }
  c.unreliable.assign(c.Q.size(), 0);
  for (std::size_t i = 0; i < c.Q.size(); ++i) c.unreliable[i] = c.Q[i] < 1e-12;
  return c;
}

enum class ExponentFit { Global, LocalQuadratic };

struct ExponentEstimate {
  double theta = std::numeric_limits<double>::quiet_NaN();
  double fit_lo = 0.0, fit_hi = 0.0;
  std::vector<double> coefficients;  // polynomial in T, lowest order first
  double residual_rms = 0.0;
};

/// Slope of -log Q_T against T on [T_lo, T_hi]: the least-squares line
/// (Global) or the derivative of a quadratic fit at the window midpoint
/// (LocalQuadratic). Defaults: the second half of the curve.
inline ExponentEstimate persistence_exponent(PersistenceCurve& curve, ExponentFit fit = ExponentFit::LocalQuadratic,
                                             std::optional<double> T_lo = std::nullopt,
                                             std::optional<double> T_hi = std::nullopt) {
  const double Tm = curve.T.empty() ? 0.0 : curve.T.back();
  const double lo = T_lo.value_or(0.5 * Tm);
  const double hi = T_hi.value_or(Tm);
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < curve.T.size(); ++i) {
    if (curve.T[i] < lo - 1e-12 || curve.T[i] > hi + 1e-12) continue;
    if (!(curve.Q[i] > 0.0)) throw NumericalError("nonpositive Q in the fit window at T = " + std::to_string(curve.T[i]));
    xs.push_back(curve.T[i]);
    ys.push_back(-std::log(curve.Q[i]));
  }
  const int degree = fit == ExponentFit::Global ? 1 : 2;
  if (xs.size() < static_cast<std::size_t>(degree + 2)) throw ConfigError("too few points in the fit window");
  const auto m = static_cast<Eigen::Index>(xs.size());
  Eigen::MatrixXd A(m, degree + 1);
  Eigen::VectorXd y(m);
  const double mid = 0.5 * (lo + hi);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (int p = 0; p <= degree; ++p) A(i, p) = std::pow(xs[static_cast<std::size_t>(i)] - mid, p);
    y(i) = ys[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd beta = A.colPivHouseholderQr().solve(y);
  ExponentEstimate e;
  e.fit_lo = lo;
  e.fit_hi = hi;
  e.theta = beta(1);  // derivative at the midpoint in both cases
  // convert to coefficients in T
  if (degree == 1) e.coefficients = {beta(0) - beta(1) * mid, beta(1)};
  else e.coefficients = {beta(0) - beta(1) * mid + beta(2) * mid * mid, beta(1) - 2.0 * beta(2) * mid, beta(2)};
  e.residual_rms = std::sqrt((A * beta - y).squaredNorm() / static_cast<double>(m));
  // local slopes by central differences
  curve.local_theta.assign(curve.T.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 1; i + 1 < curve.T.size(); ++i)
    if (curve.Q[i - 1] > 0.0 && curve.Q[i + 1] > 0.0)
      curve.local_theta[i] = -(std::log(curve.Q[i + 1]) - std::log(curve.Q[i - 1])) / (curve.T[i + 1] - curve.T[i - 1]);
  curve.theta_hat = e.theta;
  curve.fit_lo = lo;
  curve.fit_hi = hi;
  return e;
}

}  // namespace crossint
