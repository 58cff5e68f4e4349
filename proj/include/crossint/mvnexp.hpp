#pragma once

// Rectangle probabilities and derivative-weighted, conditioned expectations
// of multivariate normal vectors:
//
//   E[ prod_d w_d(X_d) 1{lower <= X_I <= upper} | X_c = x_c ] f_{X_c}(x_c)
//
// evaluated by a sequential-conditioning (separation of variables) transform
// integrated with a randomized rank-1 lattice rule.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "crossint/core.hpp"
#include "crossint/lattice.hpp"
#include "crossint/normal.hpp"

namespace crossint {

using normal::WeightSign;

struct WeightSpec {
  std::size_t index = 0;
  WeightSign sign = WeightSign::Absolute;
};

/// Problem statement. Variables that are neither weights nor conditioned are
/// indicator variables constrained to [lower, upper].
struct MvnProblem {
  Eigen::MatrixXd cov;
  Eigen::VectorXd mean;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::vector<WeightSpec> weights;
  std::vector<std::size_t> cond_indices;
  std::vector<double> cond_values;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }

  /// Zero mean, unbounded indicators for n variables with covariance S.
  static MvnProblem unbounded(const Eigen::MatrixXd& S) {
    MvnProblem p;
    p.cov = S;
    const Eigen::Index n = S.rows();
    p.mean = Eigen::VectorXd::Zero(n);
    p.lower = Eigen::VectorXd::Constant(n, -std::numeric_limits<double>::infinity());
    p.upper = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    return p;
  }

  std::vector<std::size_t> indicator_indices() const {
    std::vector<char> used(dim(), 0);
    for (const auto& w : weights) used[w.index] = 1;
    for (std::size_t c : cond_indices) used[c] = 1;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < dim(); ++i)
      if (!used[i]) out.push_back(i);
    return out;
  }

  void validate() const {
    const std::size_t n = dim();
    if (static_cast<std::size_t>(cov.rows()) != n || static_cast<std::size_t>(cov.cols()) != n ||
        static_cast<std::size_t>(lower.size()) != n || static_cast<std::size_t>(upper.size()) != n)
      throw ConfigError("MvnProblem: inconsistent dimensions");
    if (cond_indices.size() != cond_values.size()) throw ConfigError("MvnProblem: conditioning indices and values differ in length");
    std::vector<int> seen(n, 0);
    for (const auto& w : weights) {
      if (w.index >= n) throw ConfigError("MvnProblem: weight index out of range");
      ++seen[w.index];
    }
    for (std::size_t c : cond_indices) {
      if (c >= n) throw ConfigError("MvnProblem: conditioning index out of range");
      ++seen[c];
    }
    for (int s : seen)
      if (s > 1) throw ConfigError("MvnProblem: a variable is listed as both weight and conditioning (or twice)");
    for (std::size_t i = 0; i < n; ++i)
      if (!(lower(static_cast<Eigen::Index>(i)) < upper(static_cast<Eigen::Index>(i))) && !seen[i])
        throw ConfigError("MvnProblem: lower bound must be below upper bound");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + cov.cwiseAbs().maxCoeff()))
      throw ConfigError("MvnProblem: covariance is not symmetric");
  }
};

/// A problem with the conditioning variables eliminated.
struct ConditionedProblem {
  MvnProblem problem;
  double log_density = 0.0;  // log f_{X_c}(x_c); 0 when nothing was conditioned
  double density() const { return std::exp(log_density); }
};

/// Gaussian conditioning on X_c = x_c via the Schur complement.
inline ConditionedProblem condition(const MvnProblem& p, double ridge = 0.0) {
  p.validate();
  ConditionedProblem out;
  if (p.cond_indices.empty()) {
    out.problem = p;
    return out;
  }
  const std::size_t n = p.dim();
  std::vector<char> is_cond(n, 0);
  for (std::size_t c : p.cond_indices) is_cond[c] = 1;
  std::vector<std::size_t> keep;
  std::vector<long> new_index(n, -1);
  for (std::size_t i = 0; i < n; ++i)
    if (!is_cond[i]) {
      new_index[i] = static_cast<long>(keep.size());
      keep.push_back(i);
    }
  const auto nc = static_cast<Eigen::Index>(p.cond_indices.size());
  const auto nk = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd Scc(nc, nc), Skc(nk, nc), Skk(nk, nk);
  Eigen::VectorXd dc(nc);
  for (Eigen::Index a = 0; a < nc; ++a) {
    const auto ia = static_cast<Eigen::Index>(p.cond_indices[static_cast<std::size_t>(a)]);
    dc(a) = p.cond_values[static_cast<std::size_t>(a)] - p.mean(ia);
    for (Eigen::Index b = 0; b < nc; ++b) Scc(a, b) = p.cov(ia, static_cast<Eigen::Index>(p.cond_indices[static_cast<std::size_t>(b)]));
    Scc(a, a) += ridge;
    for (Eigen::Index k = 0; k < nk; ++k) Skc(k, a) = p.cov(static_cast<Eigen::Index>(keep[static_cast<std::size_t>(k)]), ia);
  }
  for (Eigen::Index a = 0; a < nk; ++a)
    for (Eigen::Index b = 0; b < nk; ++b)
      Skk(a, b) = p.cov(static_cast<Eigen::Index>(keep[static_cast<std::size_t>(a)]), static_cast<Eigen::Index>(keep[static_cast<std::size_t>(b)]));
  Eigen::LLT<Eigen::MatrixXd> llt(Scc);
  if (llt.info() != Eigen::Success) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(Scc);
    throw NumericalError("conditioning block is singular (rank " + std::to_string(lu.rank()) + " of " +
                         std::to_string(nc) + ")");
  }
  const Eigen::MatrixXd Lc = llt.matrixL();
  double logdet = 0.0;
  for (Eigen::Index a = 0; a < nc; ++a) {
    if (!(Lc(a, a) > 0.0)) throw NumericalError("conditioning block is not positive definite");
    logdet += 2.0 * std::log(Lc(a, a));
  }
  const Eigen::VectorXd alpha = llt.solve(dc);
  const Eigen::MatrixXd W = llt.solve(Skc.transpose());  // nc x nk
  out.log_density = -0.5 * dc.dot(alpha) - 0.5 * logdet - 0.5 * static_cast<double>(nc) * std::log(kTwoPi);

  MvnProblem& q = out.problem;
  q.cov = Skk - Skc * W;
  q.cov = 0.5 * (q.cov + q.cov.transpose());
  q.mean.resize(nk);
  q.lower.resize(nk);
  q.upper.resize(nk);
  const Eigen::VectorXd shift = Skc * alpha;
  for (Eigen::Index k = 0; k < nk; ++k) {
    const auto i = static_cast<Eigen::Index>(keep[static_cast<std::size_t>(k)]);
    q.mean(k) = p.mean(i) + shift(k);
    q.lower(k) = p.lower(i);
    q.upper(k) = p.upper(i);
  }
  for (const auto& w : p.weights) q.weights.push_back({static_cast<std::size_t>(new_index[w.index]), w.sign});
  return out;
}

struct IntegralResult {
  double value = 0.0;
  double sampling_error = 0.0;    // 3 x standard error over randomizations
  double truncation_error = 0.0;
  std::uint64_t n_evals = 0;
  std::uint64_t seed = 0;
  // prefix mode: P(first k indicators satisfied), k = 1..n_indicators, in
  // the problem's indicator order (weights and conditioning applied)
  std::vector<double> prefix_values;
  std::vector<double> prefix_errors;
};

/// Sample budget for speed presets 1 (slowest, most accurate) .. 9.
struct SpeedPreset {
  std::uint64_t lattice_points;
  int shifts;
};

inline SpeedPreset speed_preset(int speed) {
  static const SpeedPreset table[] = {
      {8191, 16},  // 1: ~131k evaluations
      {4093, 16},  // 2: ~65k
      {2039, 12},  // 3: ~24k
      {1021, 12},  // 4: ~12k
      {509, 12},   // 5: ~6k
      {251, 12},   // 6: ~3k
      {127, 12},   // 7: ~1.5k
      {61, 12},    // 8
      {31, 12},    // 9
  };
  if (speed < 1 || speed > 9) throw ConfigError("speed preset must be in 1..9");
  return table[speed - 1];
}

struct MvnOptions {
  int speed = 3;
  std::optional<std::uint64_t> lattice_points;  // overrides the preset
  std::optional<int> shifts;                    // overrides the preset
  std::uint64_t seed = 12345;
  unsigned threads = 1;
  std::size_t max_dim = 400;
  bool reorder = true;        // greedy variable ordering (ignored in prefix mode)
  bool prefix = false;        // report all prefix probabilities in indicator order
  double pivot_tol = 1e-10;   // relative to the largest variance
  double sd_tol = 1e-6;       // conditional s.d. below this (relative) => deterministic
  double ridge = 1e-10;       // relative to the largest variance, added to the diagonal
};

/// Unit-cube integrand produced by the separation-of-variables transform.
struct SovPlan {
  enum class Role { Weight, Indicator };
  struct Var {
    Role role = Role::Indicator;
    WeightSign sign = WeightSign::Absolute;
    double mean = 0.0;
    double lower = 0.0, upper = 0.0;
    double sd = 0.0;               // L(k,k); 0 for deterministic variables
    double residual_sd = 0.0;      // neglected s.d. of deterministic variables
    bool deterministic = false;
    std::size_t original = 0;      // index in the (conditioned) problem
    long prefix_slot = -1;         // position among indicators in prefix mode
  };
  std::vector<Var> vars;
  // strictly lower part of the Cholesky factor, packed by rows:
  // row k occupies L[offset[k] .. offset[k] + k)
  std::vector<double> L;
  std::vector<std::size_t> offset;
  std::size_t n_random = 0;        // number of QMC coordinates
  bool infeasible = false;
  std::size_t n_prefix = 0;
};

namespace detail {

inline double expected_value(const SovPlan::Var& v, double mu, double sd) {
  if (sd <= 0.0) return 0.0;
  if (v.role == SovPlan::Role::Weight) return normal::weighted_mean(mu, sd, v.sign);
  return normal::truncated_mean((v.lower - mu) / sd, (v.upper - mu) / sd);
}

}  // namespace detail

/// Builds the sequential-conditioning plan: weights first, then indicators
/// in greedy order of smallest conditional interval probability (or natural
/// order), with pivoted Cholesky and deterministic resolution of variables
/// whose conditional variance vanishes.
inline SovPlan sov_transform(const MvnProblem& p, const MvnOptions& opt = {}) {
  if (!p.cond_indices.empty()) throw ConfigError("sov_transform expects a conditioned problem");
  const std::size_t n = p.dim();
  SovPlan plan;
  std::vector<SovPlan::Var> cand(n);
  std::vector<char> is_weight(n, 0);
  for (const auto& w : p.weights) {
    is_weight[w.index] = 1;
    cand[w.index].role = SovPlan::Role::Weight;
    cand[w.index].sign = w.sign;
  }
  long slot = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cand[i].original = i;
    cand[i].mean = p.mean(static_cast<Eigen::Index>(i));
    cand[i].lower = p.lower(static_cast<Eigen::Index>(i));
    cand[i].upper = p.upper(static_cast<Eigen::Index>(i));
    if (!is_weight[i]) cand[i].prefix_slot = slot++;
  }
  plan.n_prefix = static_cast<std::size_t>(slot);

  // Working copies: full covariance and the Cholesky columns built so far.
  Eigen::MatrixXd S = p.cov;
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
  if (max_diag <= 0.0) max_diag = 1.0;
  // a duplicated variable keeps about twice the ridge as conditional variance
  const double det_tol = (opt.pivot_tol + 2.0 * opt.ridge) * max_diag;
  Eigen::MatrixXd Lfull = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<double> cond_var(n);
  for (std::size_t i = 0; i < n; ++i) cond_var[i] = S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
  std::vector<double> expected(n, 0.0);  // E[z_k] under the plan, for greedy ordering
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<char> placed(n, 0);

  const bool greedy = opt.reorder && !opt.prefix;
  const std::size_t n_weights = p.weights.size();
  for (std::size_t k = 0; k < n; ++k) {
    // choose the next variable
    std::size_t pick = n;
    if (k < n_weights) {
      pick = p.weights[k].index;
    } else if (!greedy) {
      for (std::size_t i = 0; i < n; ++i)
        if (!placed[i] && !is_weight[i]) {
          pick = i;
          break;
        }
    } else {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        if (placed[i] || is_weight[i]) continue;
        double mu = cand[i].mean;
        for (std::size_t j = 0; j < k; ++j) mu += Lfull(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * expected[j];
        const double v = std::max(cond_var[i], 0.0);
        double prob;
        if (v <= det_tol) {
          prob = (mu >= cand[i].lower && mu <= cand[i].upper) ? 1.0 : 0.0;
        } else {
          const double sd = std::sqrt(v);
          prob = normal::interval_mass((cand[i].lower - mu) / sd, (cand[i].upper - mu) / sd);
        }
        if (prob < best) {
          best = prob;
          pick = i;
        }
      }
    }
    placed[pick] = 1;
    perm[k] = pick;
    const auto pk = static_cast<Eigen::Index>(pick);
    const auto ke = static_cast<Eigen::Index>(k);
    SovPlan::Var var = cand[pick];
    const double v = cond_var[pick];
    if (v < -1e-3 * max_diag)
      throw NumericalError("covariance not positive semidefinite (conditional variance " + std::to_string(v) + ")");
    const double sd = std::sqrt(std::max(v, 0.0));
    if (v <= det_tol || sd <= opt.sd_tol * std::sqrt(max_diag)) {
      var.deterministic = true;
      var.sd = 0.0;
      var.residual_sd = sd;
    } else {
      var.sd = sd;
      // column k of L for the remaining variables
      for (std::size_t i = 0; i < n; ++i) {
        if (placed[i]) continue;
        const auto ie = static_cast<Eigen::Index>(i);
        double s = S(ie, pk);
        for (std::size_t j = 0; j < k; ++j) s -= Lfull(ie, static_cast<Eigen::Index>(j)) * Lfull(pk, static_cast<Eigen::Index>(j));
        Lfull(ie, ke) = s / sd;
        cond_var[i] -= Lfull(ie, ke) * Lfull(ie, ke);
      }
    }
    Lfull(pk, ke) = var.sd;
    double mu = var.mean;
    for (std::size_t j = 0; j < k; ++j) mu += Lfull(pk, static_cast<Eigen::Index>(j)) * expected[j];
    expected[k] = var.deterministic ? 0.0 : detail::expected_value(var, mu, sd);
    plan.vars.push_back(var);
  }

  // pack rows in plan order
  plan.offset.resize(n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    plan.offset[k] = off;
    off += k;
  }
  plan.L.assign(off, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < k; ++j)
      plan.L[plan.offset[k] + j] = Lfull(static_cast<Eigen::Index>(perm[k]), static_cast<Eigen::Index>(j));

  // QMC coordinates: every random variable except a trailing one whose value
  // is never used afterwards.
  std::size_t last_random = n;
  for (std::size_t k = 0; k < n; ++k)
    if (!plan.vars[k].deterministic) last_random = k;
  std::size_t n_random = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (!plan.vars[k].deterministic) ++n_random;
  bool later_uses_last = false;
  if (last_random < n)
    for (std::size_t k = last_random + 1; k < n; ++k)
      if (plan.L[plan.offset[k] + last_random] != 0.0) later_uses_last = true;
  plan.n_random = (last_random < n && !later_uses_last) ? n_random - 1 : n_random;

  // constant deterministic variables decide feasibility up front
  for (std::size_t k = 0; k < n; ++k) {
    const auto& v = plan.vars[k];
    if (!v.deterministic) continue;
    bool constant = true;
    for (std::size_t j = 0; j < k; ++j)
      if (plan.L[plan.offset[k] + j] != 0.0) constant = false;
    if (constant && v.role == SovPlan::Role::Indicator && (v.mean < v.lower || v.mean > v.upper)) plan.infeasible = true;
  }
  return plan;
}

namespace detail {

// Evaluates the SOV integrand at one point of the unit cube. Returns the
// integrand value; `trunc` receives the neglected-variance error proxy and
// `prefix` (if non-null) the running product after each indicator slot.
inline double sov_integrand(const SovPlan& plan, const double* u, std::vector<double>& z, double& trunc,
                            double* prefix) {
  const std::size_t n = plan.vars.size();
  double prod = 1.0;
  double soft_gap = 0.0;
  std::size_t q = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const SovPlan::Var& v = plan.vars[k];
    const double* Lk = plan.L.data() + plan.offset[k];
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    std::size_t j = 0;
    for (; j + 4 <= k; j += 4) {
      acc[0] += Lk[j] * z[j];
      acc[1] += Lk[j + 1] * z[j + 1];
      acc[2] += Lk[j + 2] * z[j + 2];
      acc[3] += Lk[j + 3] * z[j + 3];
    }
    for (; j < k; ++j) acc[0] += Lk[j] * z[j];
    const double mu = v.mean + ((acc[0] + acc[1]) + (acc[2] + acc[3]));
    if (v.deterministic) {
      z[k] = 0.0;
      double f;
      if (v.role == SovPlan::Role::Weight) {
        f = normal::weighted_mass(mu, v.residual_sd, v.sign);
      } else {
        f = (mu >= v.lower && mu <= v.upper) ? 1.0 : 0.0;
        if (v.residual_sd > 0.0) {
          const double soft = normal::interval_mass((v.lower - mu) / v.residual_sd, (v.upper - mu) / v.residual_sd);
          soft_gap = std::max(soft_gap, std::abs(soft - f));
        }
      }
      prod *= f;
    } else if (v.role == SovPlan::Role::Weight) {
      prod *= normal::weighted_mass(mu, v.sd, v.sign);
      if (q < plan.n_random && prod > 0.0) z[k] = normal::weighted_quantile(mu, v.sd, v.sign, u[q]);
      else z[k] = 0.0;
      ++q;
    } else {
      const double a = (v.lower - mu) / v.sd;
      const double b = (v.upper - mu) / v.sd;
      if (q < plan.n_random) {
        double mass;
        const double zq = normal::truncated_quantile_mass(a, b, u[q], mass);
        prod *= mass;
        z[k] = prod > 0.0 ? zq : 0.0;
      } else {
        prod *= normal::interval_mass(a, b);
        z[k] = 0.0;
      }
      ++q;
    }
    if (prefix && v.prefix_slot >= 0) prefix[v.prefix_slot] = prod;
    if (prod == 0.0) {
      if (prefix)
        for (std::size_t r = k + 1; r < n; ++r)
          if (plan.vars[r].prefix_slot >= 0) prefix[plan.vars[r].prefix_slot] = 0.0;
      trunc = 0.0;
      return 0.0;
    }
  }
  trunc = soft_gap * prod;
  return prod;
}

}  // namespace detail

/// Core driver shared by mvn_probability and mvn_weighted.
inline IntegralResult mvn_integrate(const MvnProblem& problem, const MvnOptions& opt = {}) {
  if (problem.dim() > opt.max_dim)
    throw ConfigError("problem dimension " + std::to_string(problem.dim()) + " exceeds max_dim " + std::to_string(opt.max_dim));
  const double ridge = problem.dim() ? opt.ridge * std::max(problem.cov.diagonal().maxCoeff(), 0.0) : 0.0;
  const ConditionedProblem cp = condition(problem, ridge);
  const MvnProblem& p = cp.problem;
  const double factor = cp.density();
  IntegralResult res;
  res.seed = opt.seed;
  MvnOptions o = opt;
  if (o.prefix) o.reorder = false;
  if (p.dim() == 0) {
    res.value = factor;
    return res;
  }
  MvnProblem pr = p;
  if (ridge > 0.0) pr.cov.diagonal().array() += ridge;
  const SovPlan plan = sov_transform(pr, o);
  const std::size_t n_prefix = o.prefix ? plan.n_prefix : 0;
  if (plan.infeasible) {
    res.prefix_values.assign(n_prefix, 0.0);
    res.prefix_errors.assign(n_prefix, 0.0);
    return res;
  }
  const SpeedPreset preset = speed_preset(o.speed);
  const std::uint64_t n_points = o.lattice_points.value_or(preset.lattice_points);
  const int shifts = std::max(2, o.shifts.value_or(preset.shifts));
  const std::size_t dim = plan.n_random;

  std::vector<double> shift_means(static_cast<std::size_t>(shifts), 0.0);
  std::vector<double> shift_trunc(static_cast<std::size_t>(shifts), 0.0);
  std::vector<std::vector<double>> shift_prefix(static_cast<std::size_t>(shifts), std::vector<double>(n_prefix, 0.0));

  if (dim == 0) {
    // the integrand is constant
    std::vector<double> z(plan.vars.size(), 0.0), pre(n_prefix, 0.0);
    double tr = 0.0;
    const double v = detail::sov_integrand(plan, nullptr, z, tr, n_prefix ? pre.data() : nullptr);
    res.value = v * factor;
    res.truncation_error = tr * factor;
    res.n_evals = 1;
    for (double& x : pre) x *= factor;
    res.prefix_values = pre;
    res.prefix_errors.assign(n_prefix, 0.0);
    return res;
  }

  const lattice::KorobovLattice lat(n_points, dim);
  const std::uint64_t N = lat.size();
  parallel_for(static_cast<std::size_t>(shifts), o.threads, [&](std::size_t s) {
    std::seed_seq seq{static_cast<std::uint32_t>(o.seed & 0xffffffffu), static_cast<std::uint32_t>(o.seed >> 32),
                      static_cast<std::uint32_t>(s), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> shift(dim);
    for (double& x : shift) x = unif(rng);
    std::vector<double> u(dim), z(plan.vars.size(), 0.0), pre(n_prefix, 0.0);
    std::vector<double>& acc_pre = shift_prefix[s];
    double acc = 0.0, acc_tr = 0.0;
    for (std::uint64_t k = 0; k < N; ++k) {
      lat.point(k, shift, u);
      double tr = 0.0;
      acc += detail::sov_integrand(plan, u.data(), z, tr, n_prefix ? pre.data() : nullptr);
      acc_tr += tr;
      for (std::size_t i = 0; i < n_prefix; ++i) acc_pre[i] += pre[i];
    }
    const double inv = 1.0 / static_cast<double>(N);
    shift_means[s] = acc * inv;
    shift_trunc[s] = acc_tr * inv;
    for (double& x : acc_pre) x *= inv;
  });

  auto summarize = [&](auto get, double& mean, double& err) {
    double m = 0.0;
    for (int s = 0; s < shifts; ++s) m += get(static_cast<std::size_t>(s));
    m /= shifts;
    double v = 0.0;
    for (int s = 0; s < shifts; ++s) {
      const double d = get(static_cast<std::size_t>(s)) - m;
      v += d * d;
    }
    v /= static_cast<double>(shifts - 1);
    mean = m;
    err = 3.0 * std::sqrt(v / shifts);
  };
  double value, err;
  summarize([&](std::size_t s) { return shift_means[s]; }, value, err);
  double trunc = 0.0;
  for (double t : shift_trunc) trunc += t;
  trunc /= shifts;
  res.value = value * factor;
  res.sampling_error = err * factor;
  res.truncation_error = trunc * factor;
  res.n_evals = N * static_cast<std::uint64_t>(shifts);
  res.prefix_values.resize(n_prefix);
  res.prefix_errors.resize(n_prefix);
  for (std::size_t i = 0; i < n_prefix; ++i) {
    double m, e;
    summarize([&](std::size_t s) { return shift_prefix[s][i]; }, m, e);
    res.prefix_values[i] = m * factor;
    res.prefix_errors[i] = e * factor;
  }
  return res;
}

/// P(lower <= X <= upper) (optionally conditioned, times the density factor).
inline IntegralResult mvn_probability(const MvnProblem& problem, const MvnOptions& opt = {}) {
  if (!problem.weights.empty()) throw ConfigError("mvn_probability: problem has weight variables; use mvn_weighted");
  return mvn_integrate(problem, opt);
}

/// E[prod w(X_d) 1{bounds} | X_c = x_c] f_{X_c}(x_c).
inline IntegralResult mvn_weighted(const MvnProblem& problem, const MvnOptions& opt = {}) {
  if (problem.weights.empty()) throw ConfigError("mvn_weighted: no weight variables");
  return mvn_integrate(problem, opt);
}

/// Writes a conditioned problem as CSV: one row per variable with role,
/// mean, bounds and the covariance row.
inline std::string dump_problem_csv(const MvnProblem& problem) {
  const ConditionedProblem cp = condition(problem);
  const MvnProblem& p = cp.problem;
  std::vector<std::string> role(p.dim(), "indicator");
  for (const auto& w : p.weights)
    role[w.index] = w.sign == WeightSign::Positive ? "weight+" : (w.sign == WeightSign::Negative ? "weight-" : "weight|");
  std::string out = "# log_density=" + std::to_string(cp.log_density) + "\nrole,mean,lower,upper";
  for (std::size_t j = 0; j < p.dim(); ++j) out += ",c" + std::to_string(j);
  out += "\n";
  char buf[64];
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const auto ie = static_cast<Eigen::Index>(i);
    out += role[i];
    for (double x : {p.mean(ie), p.lower(ie), p.upper(ie)}) {
      std::snprintf(buf, sizeof buf, ",%.17g", x);
      out += buf;
    }
    for (std::size_t j = 0; j < p.dim(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", p.cov(ie, static_cast<Eigen::Index>(j)));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace crossint
