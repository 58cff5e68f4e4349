#pragma once

// Randomized rank-1 Korobov lattice rules on the unit cube.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <utility>
#include <vector>

#include "crossint/core.hpp"

namespace crossint::lattice {

inline bool is_prime(std::uint64_t n) {
  if (n < 2) return false;
  if (n % 2 == 0) return n == 2;
  for (std::uint64_t d = 3; d * d <= n; d += 2)
    if (n % d == 0) return false;
  return true;
}

inline std::uint64_t next_prime(std::uint64_t n) {
  while (!is_prime(n)) ++n;
  return n;
}

namespace detail {

// Weighted P2 figure of merit of the Korobov vector (1, a, a^2, ...) mod n,
// evaluated over the leading `dims` coordinates with weights 0.8^j.
inline double korobov_p2(std::uint64_t n, std::uint64_t a, int dims) {
  std::vector<std::uint64_t> z(dims);
  z[0] = 1;
  for (int j = 1; j < dims; ++j) z[j] = (z[j - 1] * a) % n;
  std::vector<double> gamma(dims);
  for (int j = 0; j < dims; ++j) gamma[j] = 2.0 * kPi * kPi * std::pow(0.8, j);
  double total = 0.0;
  for (std::uint64_t k = 0; k < n; ++k) {
    double prod = 1.0;
    for (int j = 0; j < dims; ++j) {
      const double x = static_cast<double>((k * z[j]) % n) / static_cast<double>(n);
      prod *= 1.0 + gamma[j] * (x * x - x + 1.0 / 6.0);
    }
    total += prod;
  }
  return total / static_cast<double>(n) - 1.0;
}

}  // namespace detail

/// Korobov generator for a prime number of points. The search is done once
/// per point count and cached; the candidate set is fixed so the result does
/// not depend on the caller.
inline std::uint64_t korobov_generator(std::uint64_t n) {
  static std::mutex mutex;
  static std::map<std::uint64_t, std::uint64_t> cache;
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(n); it != cache.end()) return it->second;
  }
  if (n < 5) return 1;
  const int dims = 24;
  // Bounded search cost: about 4e7 inner products regardless of n.
  const std::uint64_t n_candidates = std::clamp<std::uint64_t>(40000000ULL / (n * dims), 16, n / 2);
  std::mt19937_64 rng(n);
  std::uniform_int_distribution<std::uint64_t> pick(2, n / 2);
  std::uint64_t best_a = 1;
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t c = 0; c < n_candidates; ++c) {
    const std::uint64_t a = n_candidates >= n / 2 - 1 ? c + 2 : pick(rng);
    if (a >= n) break;
    const double p = detail::korobov_p2(n, a, dims);
    if (p < best) {
      best = p;
      best_a = a;
    }
  }
  std::lock_guard lock(mutex);
  cache[n] = best_a;
  return best_a;
}

/// A rank-1 lattice in `dim` dimensions with `n` (prime) points.
class KorobovLattice {
 public:
  KorobovLattice(std::uint64_t n, std::size_t dim) : n_(next_prime(std::max<std::uint64_t>(n, 5))), z_(dim) {
    const std::uint64_t a = korobov_generator(n_);
    std::uint64_t p = 1;
    for (std::size_t j = 0; j < dim; ++j) {
      z_[j] = static_cast<double>(p) / static_cast<double>(n_);
      p = (p * a) % n_;
    }
  }

  std::uint64_t size() const { return n_; }
  std::size_t dim() const { return z_.size(); }

  /// Point k with random shift, folded by the tent (baker) transform.
  void point(std::uint64_t k, const std::vector<double>& shift, std::vector<double>& out) const {
    const double kd = static_cast<double>(k);
    for (std::size_t j = 0; j < z_.size(); ++j) {
      double x = kd * z_[j] + shift[j];
      x -= std::floor(x);
      x = 1.0 - std::abs(2.0 * x - 1.0);
      // keep strictly inside (0,1) for inverse-cdf transforms
      out[j] = std::clamp(x, 1e-16, 1.0 - 1e-16);
    }
  }

 private:
  std::uint64_t n_;
  std::vector<double> z_;
};

}  // namespace crossint::lattice
