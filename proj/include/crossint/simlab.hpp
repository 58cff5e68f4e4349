#pragma once

// Simulation oracle: stationary Gaussian paths by circulant embedding,
// crossing-interval extraction and empirical densities.

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "crossint/core.hpp"
#include "crossint/covmodel.hpp"
#include "crossint/crossings.hpp"

namespace crossint {

struct SimulationInfo {
  std::size_t embedding_size = 0;
  double min_eigenvalue = 0.0;   // before clipping, relative to the largest
  double clipped_mass = 0.0;     // sum of clipped negative eigenvalues / sum of positive
  double clip_threshold = 1e-9;
};

struct SimulationOptions {
  double clip_threshold = 1e-9;
  std::size_t max_embedding = std::size_t{1} << 26;
  unsigned threads = 1;
};

namespace detail {

// FFTW planning is not thread safe.
inline std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

inline std::uint64_t path_seed(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x51A1u};
  std::uint64_t out[1];
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  out[0] = (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
  return out[0];
}

}  // namespace detail

/// Circulant-embedding eigenvalues for the covariance on a grid of n points.
/// The embedding size is doubled until the smallest eigenvalue is above
/// -clip_threshold * largest; remaining negatives are clipped to zero.
inline std::vector<double> circulant_eigenvalues(const CovarianceModel& model, std::size_t n, double dt,
                                                 const SimulationOptions& opt, SimulationInfo& info) {
  std::size_t m = std::bit_ceil(std::max<std::size_t>(2 * (n - 1), 2));
  for (;;) {
    std::vector<double> c(m);
    for (std::size_t j = 0; j <= m / 2; ++j) c[j] = model.cov(dt * static_cast<double>(j));
    for (std::size_t j = m / 2 + 1; j < m; ++j) c[j] = c[m - j];
    std::vector<double> lam(m / 2 + 1);
    // real even sequence: eigenvalues via DCT-I of the first half
    std::vector<double> half(c.begin(), c.begin() + static_cast<long>(m / 2 + 1));
    {
      std::lock_guard<std::mutex> lock(detail::fftw_mutex());
      fftw_plan p = fftw_plan_r2r_1d(static_cast<int>(m / 2 + 1), half.data(), lam.data(), FFTW_REDFT00, FFTW_ESTIMATE);
      fftw_execute(p);
      fftw_destroy_plan(p);
    }
    const double mx = *std::max_element(lam.begin(), lam.end());
    const double mn = *std::min_element(lam.begin(), lam.end());
    info.embedding_size = m;
    info.min_eigenvalue = mn / mx;
    info.clip_threshold = opt.clip_threshold;
    if (mn >= -opt.clip_threshold * mx || 2 * m > opt.max_embedding) {
      if (mn < -opt.clip_threshold * mx)
        throw NumericalError("circulant embedding has negative eigenvalues (min/max = " + std::to_string(mn / mx) +
                             ") at the maximal size; use a spectral simulation method instead");
      double neg = 0.0, pos = 0.0;
      for (double& l : lam) {
        if (l < 0.0) {
          neg -= l;
          l = 0.0;
        } else {
          pos += l;
        }
      }
      info.clipped_mass = pos > 0.0 ? neg / pos : 0.0;
      // full spectrum of length m from the symmetric half
      std::vector<double> full(m);
      for (std::size_t k = 0; k <= m / 2; ++k) full[k] = lam[k];
      for (std::size_t k = m / 2 + 1; k < m; ++k) full[k] = lam[m - k];
      return full;
    }
    m *= 2;
  }
}

/// n_paths independent stationary Gaussian paths of n_points samples with
/// spacing dt, exact in distribution up to eigenvalue clipping. Paths come
/// in pairs (real and imaginary parts of one complex FFT); pair p uses a
/// seed derived from (seed, p).
inline std::vector<std::vector<double>> simulate_paths(const CovarianceModel& model, std::size_t n_points, double dt,
                                                       std::size_t n_paths, std::uint64_t seed,
                                                       const SimulationOptions& opt = {},
                                                       SimulationInfo* info_out = nullptr) {
  if (n_points < 2 || !(dt > 0.0)) throw ConfigError("simulate_paths: need n_points >= 2 and dt > 0");
  SimulationInfo info;
  const std::vector<double> lam = circulant_eigenvalues(model, n_points, dt, opt, info);
  const std::size_t m = lam.size();
  std::vector<double> sq(m);
  for (std::size_t k = 0; k < m; ++k) sq[k] = std::sqrt(lam[k] / static_cast<double>(m));
  std::vector<std::vector<double>> paths(n_paths, std::vector<double>(n_points));
  const std::size_t pairs = (n_paths + 1) / 2;
  parallel_for(pairs, opt.threads, [&](std::size_t p) {
    std::mt19937_64 rng(detail::path_seed(seed, p));
    std::normal_distribution<double> N;
    fftw_complex* buf = fftw_alloc_complex(m);
    fftw_plan plan;
    {
      std::lock_guard<std::mutex> lock(detail::fftw_mutex());
      plan = fftw_plan_dft_1d(static_cast<int>(m), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    }
    for (std::size_t k = 0; k < m; ++k) {
      buf[k][0] = sq[k] * N(rng);
      buf[k][1] = sq[k] * N(rng);
    }
    fftw_execute(plan);
    for (std::size_t i = 0; i < n_points; ++i) paths[2 * p][i] = buf[i][0];
    if (2 * p + 1 < n_paths)
      for (std::size_t i = 0; i < n_points; ++i) paths[2 * p + 1][i] = buf[i][1];
    {
      std::lock_guard<std::mutex> lock(detail::fftw_mutex());
      fftw_destroy_plan(plan);
    }
    fftw_free(buf);
  });
  if (info_out) *info_out = info;
  return paths;
}

/// Alternating excursion intervals: label +1 for above u, -1 for below.
struct IntervalSequence {
  std::vector<double> length;
  std::vector<signed char> label;
  std::vector<double> crossing_times;  // all crossing times (for delay sampling)
  bool no_crossings = false;
};

/// Crossings by sign change of X - u with linear interpolation; the partial
/// intervals before the first and after the last crossing are dropped.
inline IntervalSequence extract_intervals(const std::vector<double>& path, double dt, double u = 0.0) {
  IntervalSequence s;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const bool a = path[i] > u, b = path[i + 1] > u;
    if (a == b) continue;
    const double frac = (u - path[i]) / (path[i + 1] - path[i]);
    s.crossing_times.push_back(dt * (static_cast<double>(i) + frac));
  }
  if (s.crossing_times.empty()) {
    s.no_crossings = true;
    return s;
  }
  // sign just after the first crossing
  std::size_t first = static_cast<std::size_t>(s.crossing_times.front() / dt);
  bool above = path[std::min(first + 1, path.size() - 1)] > u;
  for (std::size_t c = 0; c + 1 < s.crossing_times.size(); ++c) {
    s.length.push_back(s.crossing_times[c + 1] - s.crossing_times[c]);
    s.label.push_back(above ? 1 : -1);
    above = !above;
  }
  return s;
}

/// Concatenate sequences from several paths (pairs never span two paths:
/// a separator is recorded by starting each path's block at an even offset
/// with its own labels).
struct IntervalSample {
  std::vector<IntervalSequence> blocks;
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.length.size();
    return n;
  }
};

/// Delays from equally spaced origins to the next crossing (A) and since the
/// previous crossing (B).
struct DelaySample {
  std::vector<double> A, B;
};

inline DelaySample delay_samples(const IntervalSequence& s, double spacing) {
  DelaySample d;
  const auto& c = s.crossing_times;
  if (c.size() < 2) return d;
  for (double t = c.front() + spacing; t < c.back(); t += spacing) {
    const auto it = std::upper_bound(c.begin(), c.end(), t);
    d.A.push_back(*it - t);
    d.B.push_back(t - *(it - 1));
  }
  return d;
}

/// Empirical cdf of `x` on a grid.
inline std::vector<double> empirical_cdf(std::vector<double> x, const std::vector<double>& grid) {
  std::sort(x.begin(), x.end());
  std::vector<double> F(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i)
    F[i] = static_cast<double>(std::upper_bound(x.begin(), x.end(), grid[i]) - x.begin()) /
           static_cast<double>(std::max<std::size_t>(x.size(), 1));
  return F;
}

struct EmpiricalJoint {
  JointDensity2D density;   // err holds 3-sigma Poisson half widths
  std::size_t n_pairs = 0;
  bool few_pairs = false;   // fewer than 1e4 pairs
};

/// Histogram of consecutive (above, below) pairs with cells centred on the
/// grid points, normalized to a density over all pairs.
inline EmpiricalJoint empirical_joint(const IntervalSample& sample, const std::vector<double>& t1,
                                      const std::vector<double>& t2) {
  if (t1.size() < 2 || t2.size() < 2) throw ConfigError("empirical_joint: grids need >= 2 points");
  const double h1 = t1[1] - t1[0], h2 = t2[1] - t2[0];
  EmpiricalJoint e;
  JointDensity2D& j = e.density;
  j.t1 = t1;
  j.t2 = t2;
  j.f = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(t1.size()), static_cast<Eigen::Index>(t2.size()));
  for (const auto& b : sample.blocks) {
    for (std::size_t i = 0; i + 1 < b.length.size(); ++i) {
      if (b.label[i] != 1) continue;
      ++e.n_pairs;
      const double x = b.length[i], y = b.length[i + 1];
      const long a = std::lround((x - t1.front()) / h1), c = std::lround((y - t2.front()) / h2);
      if (a < 0 || c < 0 || a >= static_cast<long>(t1.size()) || c >= static_cast<long>(t2.size())) continue;
      j.f(a, c) += 1.0;
    }
  }
  const double norm = static_cast<double>(std::max<std::size_t>(e.n_pairs, 1)) * h1 * h2;
  // an empty cell still carries the error of a single count
  j.err = 3.0 * j.f.array().max(1.0).sqrt().matrix() / norm;
  j.f /= norm;
  j.terr = Eigen::MatrixXd::Zero(j.f.rows(), j.f.cols());
  e.few_pairs = e.n_pairs < 10000;
  joint_summaries(j);
  j.kl = kl_distance(j);
  return e;
}

/// Fraction of windows [0, T] (one per path start, spaced by the largest T)
/// in which the path stays on one side of u.
inline PersistenceCurve empirical_persistence(const std::vector<std::vector<double>>& paths, double dt,
                                              const std::vector<double>& T_grid, double u = 0.0) {
  if (T_grid.empty()) throw ConfigError("empirical_persistence: empty T grid");
  const double Tmax = *std::max_element(T_grid.begin(), T_grid.end());
  const std::size_t w = static_cast<std::size_t>(std::ceil(Tmax / dt));
  std::vector<double> count(T_grid.size(), 0.0);
  double windows = 0.0;
  for (const auto& p : paths) {
    for (std::size_t s = 0; s + w < p.size(); s += w + 1) {
      windows += 1.0;
      const bool side = p[s] > u;
      std::size_t k = 0;  // first index where the side changes
      while (k <= w && (p[s + k] > u) == side) ++k;
      const double stay = dt * static_cast<double>(k - 1);
      for (std::size_t i = 0; i < T_grid.size(); ++i)
        if (T_grid[i] <= stay + 1e-12) count[i] += 1.0;
    }
  }
  PersistenceCurve c;
  c.level = u;
  c.n_runs = static_cast<int>(windows);
  c.T = T_grid;
  for (std::size_t i = 0; i < T_grid.size(); ++i) {
    const double q = windows > 0 ? count[i] / windows : 0.0;
    c.Q.push_back(q);
    c.Q_err.push_back(windows > 0 ? 1.96 * std::sqrt(q * (1.0 - q) / windows) : 0.0);
  }
  c.unreliable.assign(c.Q.size(), 0);
  return c;
}

/// Intervals of `n_paths` simulated paths, generated in batches of
/// `batch` paths so that memory stays bounded.
inline IntervalSample simulate_intervals(const CovarianceModel& model, std::size_t n_points, double dt,
                                         std::size_t n_paths, std::uint64_t seed, double u = 0.0,
                                         const SimulationOptions& opt = {}, std::size_t batch = 64) {
  IntervalSample out;
  for (std::size_t done = 0, b = 0; done < n_paths; done += batch, ++b) {
    const std::size_t k = std::min(batch, n_paths - done);
    for (const auto& p : simulate_paths(model, n_points, dt, k, detail::path_seed(seed, 0xB000 + b), opt))
      out.blocks.push_back(extract_intervals(p, dt, u));
  }
  return out;
}

struct JointComparison {
  std::size_t cells = 0;       // cells with analytic mass >= floor
  std::size_t beyond = 0;      // cells with |diff| > factor * combined
  double max_ratio = 0.0;      // max |diff| / combined
  double max_abs = 0.0;        // max |diff|
  double fraction_beyond_err = 0.0;  // share of cells with |diff| > combined
  bool pass = false;
};

/// Cellwise analytic vs histogram density on the histogram grid. The
/// combined error is hypot(err + terr of the analytic value, histogram err);
/// cells lying outside the analytic grid are ignored.
inline JointComparison compare_joint(const JointDensity2D& analytic, const JointDensity2D& empirical,
                                     double factor = 3.0, double mass_floor = 1e-4) {
  if (analytic.t1.size() < 2 || empirical.t1.size() < 2) throw ConfigError("compare_joint: empty grids");
  const double h1 = empirical.t1[1] - empirical.t1[0], h2 = empirical.t2[1] - empirical.t2[0];
  const double a1 = analytic.t1[1] - analytic.t1[0], a2 = analytic.t2[1] - analytic.t2[0];
  JointComparison c;
  std::size_t loose = 0;
  for (std::size_t i = 0; i < empirical.t1.size(); ++i) {
    for (std::size_t k = 0; k < empirical.t2.size(); ++k) {
      const long ia = std::lround((empirical.t1[i] - analytic.t1.front()) / a1);
      const long ka = std::lround((empirical.t2[k] - analytic.t2.front()) / a2);
      if (ia < 0 || ka < 0 || ia >= static_cast<long>(analytic.t1.size()) || ka >= static_cast<long>(analytic.t2.size()))
        continue;
      if (std::abs(analytic.t1[static_cast<std::size_t>(ia)] - empirical.t1[i]) > 1e-9 * a1 ||
          std::abs(analytic.t2[static_cast<std::size_t>(ka)] - empirical.t2[k]) > 1e-9 * a2)
        continue;
      const double fa = analytic.f(ia, ka);
      if (std::isnan(fa) || fa * h1 * h2 < mass_floor) continue;
      const double ea = (analytic.err.size() ? analytic.err(ia, ka) : 0.0) + (analytic.terr.size() ? analytic.terr(ia, ka) : 0.0);
      const auto ie = static_cast<Eigen::Index>(i), ke = static_cast<Eigen::Index>(k);
      const double comb = std::hypot(ea, empirical.err(ie, ke));
      const double d = std::abs(fa - empirical.f(ie, ke));
      ++c.cells;
      c.max_abs = std::max(c.max_abs, d);
      const double ratio = comb > 0.0 ? d / comb : (d > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
      c.max_ratio = std::max(c.max_ratio, ratio);
      if (ratio > factor) ++c.beyond;
      if (ratio > 1.0) ++loose;
    }
  }
  c.fraction_beyond_err = c.cells ? static_cast<double>(loose) / static_cast<double>(c.cells) : 0.0;
  c.pass = c.cells > 0 && c.beyond == 0;
  return c;
}

/// Little-endian float64 records (length, label) per interval.
inline void write_intervals_binary(const std::string& file, const IntervalSequence& s) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + file);
  static_assert(std::endian::native == std::endian::little, "binary layout assumes a little-endian host");
  for (std::size_t i = 0; i < s.length.size(); ++i) {
    const double rec[2] = {s.length[i], static_cast<double>(s.label[i])};
    out.write(reinterpret_cast<const char*>(rec), sizeof rec);
  }
}

inline IntervalSequence read_intervals_binary(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + file);
  IntervalSequence s;
  double rec[2];
  while (in.read(reinterpret_cast<char*>(rec), sizeof rec)) {
    s.length.push_back(rec[0]);
    s.label.push_back(static_cast<signed char>(rec[1]));
  }
  return s;
}

}  // namespace crossint
