#pragma once

// Dependence between successive crossing intervals: correlation, KL
// distance to independence, the discrete Markov transition kernel and the
// three-interval Markov test.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "crossint/core.hpp"
#include "crossint/crossings.hpp"

namespace crossint {

/// Pearson correlation of (T1, T2) from trapezoid grid moments, each divided
/// by the normalization integral.
inline double interval_correlation(const JointDensity2D& f) {
  JointDensity2D g = f;
  joint_summaries(g);
  if (!std::isfinite(g.corr)) throw NumericalError("interval_correlation: degenerate marginal variance");
  return std::clamp(g.corr, -1.0, 1.0);
}

struct MarkovModel {
  std::vector<double> states;
  Eigen::MatrixXd P;                 // row-stochastic
  std::vector<std::size_t> dropped;  // state indices with zero mass (rows left as zeros)
  std::vector<double> stationary;    // row masses of the joint, normalized
};

/// P(T2 = x_k | T1 = x_j) = f(x_j, x_k) / sum_k f(x_j, x_k).
inline MarkovModel markov_transition(const JointDensity2D& f) {
  const auto n = f.f.rows();
  if (f.f.cols() != n) throw ConfigError("markov_transition: square grid required");
  MarkovModel m;
  m.states = f.t1;
  m.P = Eigen::MatrixXd::Zero(n, n);
  m.stationary.assign(static_cast<std::size_t>(n), 0.0);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    double row = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) row += std::max(f.f(j, k), 0.0);
    m.stationary[static_cast<std::size_t>(j)] = row;
    total += row;
    if (!(row > 0.0)) {
      m.dropped.push_back(static_cast<std::size_t>(j));
      continue;
    }
    for (Eigen::Index k = 0; k < n; ++k) m.P(j, k) = std::max(f.f(j, k), 0.0) / row;
  }
  if (!(total > 0.0)) throw NumericalError("markov_transition: all-zero density");
  for (double& x : m.stationary) x /= total;
  return m;
}

/// Conditional density of T2 given T1 = t1[j] (renormalized to unit
/// trapezoid mass on the t2 grid).
inline std::vector<double> conditional_density(const JointDensity2D& f, std::size_t j) {
  std::vector<double> row(static_cast<std::size_t>(f.f.cols()));
  for (std::size_t k = 0; k < row.size(); ++k)
    row[k] = std::max(0.0, f.f(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)));
  const double z = trapezoid(f.t2, row);
  if (z > 0.0)
    for (double& x : row) x /= z;
  return row;
}

struct MarkovSlice {
  std::size_t i = 0, j = 0;  // conditioning bins T0 = x_i, T1 = x_j
  double mass = 0.0;         // share of the total 3D mass in the slice
  double l1 = 0.0;           // sum_k |P(k | i, j) - P(k | j)|
  double max_abs = 0.0;      // max_k |P(k | i, j) - P(k | j)|
};

struct MarkovTestResult {
  double max_dev = 0.0;   // max over kept slices and k of |P(k | i, j) - P(k | j)|
  double mean_dev = 0.0;  // mass-weighted mean over kept slices of the L1 distance
  std::vector<MarkovSlice> slices;
  std::size_t skipped = 0;  // slices below the mass floor
};

/// Compares P(T2 = x_k | T0 = x_i, T1 = x_j) from the three-interval density
/// with P(T2 = x_k | T1 = x_j) from the two-interval density. Slices whose
/// mass is below `mass_floor` of the total are skipped.
inline MarkovTestResult markov_test(const TriDensity& f3, const JointDensity2D& f2, double mass_floor = 1e-4) {
  const std::size_t n = f3.n();
  if (static_cast<std::size_t>(f2.f.rows()) != n || static_cast<std::size_t>(f2.f.cols()) != n)
    throw ConfigError("markov_test: 2D and 3D grids differ");
  const MarkovModel mk = markov_transition(f2);
  double total = 0.0;
  for (double v : f3.f) total += std::max(v, 0.0);
  if (!(total > 0.0)) throw NumericalError("markov_test: all-zero 3D density");
  MarkovTestResult res;
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double slice = 0.0;
      for (std::size_t k = 0; k < n; ++k) slice += std::max(f3.at(i, j, k), 0.0);
      if (slice < mass_floor * total || mk.stationary[j] == 0.0) {
        ++res.skipped;
        continue;
      }
      MarkovSlice s;
      s.i = i;
      s.j = j;
      s.mass = slice / total;
      for (std::size_t k = 0; k < n; ++k) {
        const double d = std::abs(std::max(f3.at(i, j, k), 0.0) / slice -
                                  mk.P(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)));
        s.l1 += d;
        s.max_abs = std::max(s.max_abs, d);
      }
      res.max_dev = std::max(res.max_dev, s.max_abs);
      res.mean_dev += s.mass * s.l1;
      wsum += s.mass;
      res.slices.push_back(s);
    }
  }
  if (wsum > 0.0) res.mean_dev /= wsum;
  return res;
}

/// Three-interval density of the Markov chain built from f2:
/// f3(i, j, k) = f2(i, j) P(k | j). Used as an exact-Markov reference.
inline TriDensity markov_extension(const JointDensity2D& f2) {
  const MarkovModel mk = markov_transition(f2);
  const std::size_t n = mk.states.size();
  TriDensity d;
  d.x = mk.states;
  d.f.assign(n * n * n, 0.0);
  d.err.assign(n * n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k)
        d.f[(i * n + j) * n + k] = std::max(0.0, f2.f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) *
                                   mk.P(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
  return d;
}

}  // namespace crossint
