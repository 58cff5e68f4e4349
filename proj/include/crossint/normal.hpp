#pragma once

// Univariate normal building blocks used in the inner integration loops:
// cdf/pdf, a fast quantile, interval masses, and the first-moment-weighted
// truncated normal (mass, mean and inverse cdf).

#include <cmath>
#include <limits>

#include "crossint/core.hpp"

namespace crossint::normal {

inline double pdf(double x) { return kInvSqrtTwoPi * std::exp(-0.5 * x * x); }

inline double cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

/// Wichura's AS241 (PPND16), relative accuracy about 1e-16.
inline double quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r + 67265.770927008700853) * r +
                45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((r * 5226.495278852545925 + 28729.085735721942674) * r + 39307.89580009271061) * r +
                21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

/// P(a < Z < b) for standard normal Z, without cancellation in the tails.
inline double interval_mass(double a, double b) {
  if (!(b > a)) return 0.0;
  if (a > 0.0) return cdf(-a) - cdf(-b);
  return cdf(b) - cdf(a);
}

/// Inverse of the cdf restricted to (a, b): returns z with
/// P(a < Z < z) = w * P(a < Z < b).
inline double truncated_quantile(double a, double b, double w) {
  double z;
  if (a > 0.0) {
    const double ua = cdf(-a), ub = cdf(-b);
    z = -quantile(ua - w * (ua - ub));
  } else {
    const double la = cdf(a), lb = cdf(b);
    z = quantile(la + w * (lb - la));
  }
  return std::clamp(z, a, b);
}

/// interval_mass(a, b) and truncated_quantile(a, b, w) sharing the cdf calls.
inline double truncated_quantile_mass(double a, double b, double w, double& mass) {
  if (!(b > a)) {
    mass = 0.0;
    return a;
  }
  double z;
  if (a > 0.0) {
    const double ua = cdf(-a), ub = cdf(-b);
    mass = ua - ub;
    z = -quantile(ua - w * mass);
  } else {
    const double la = cdf(a), lb = cdf(b);
    mass = lb - la;
    z = quantile(la + w * mass);
  }
  return std::clamp(z, a, b);
}

/// Mean of Z conditioned on a < Z < b.
inline double truncated_mean(double a, double b) {
  const double m = interval_mass(a, b);
  const double pa = std::isfinite(a) ? pdf(a) : 0.0;
  const double pb = std::isfinite(b) ? pdf(b) : 0.0;
  if (m < 1e-300) {
    if (std::isinf(a) && std::isinf(b)) return 0.0;
    if (std::isinf(a)) return b;
    if (std::isinf(b)) return a;
    return 0.5 * (a + b);
  }
  return (pa - pb) / m;
}

/// E[(Z + a)^+] = phi(a) + a Phi(a).
inline double positive_part_mean(double a) { return pdf(a) + a * cdf(a); }

/// Sign constraint and weight carried by a derivative variable X:
/// Positive -> weight x on x >= 0, Negative -> weight -x on x <= 0,
/// Absolute -> weight |x| everywhere.
enum class WeightSign { Positive, Negative, Absolute };

/// E[w(X)] for X ~ N(mu, sigma^2) with the weight of `sign`.
inline double weighted_mass(double mu, double sigma, WeightSign sign) {
  if (sigma <= 0.0) {
    switch (sign) {
      case WeightSign::Positive: return std::max(mu, 0.0);
      case WeightSign::Negative: return std::max(-mu, 0.0);
      case WeightSign::Absolute: return std::abs(mu);
    }
  }
  const double a = mu / sigma;
  switch (sign) {
    case WeightSign::Positive: return sigma * positive_part_mean(a);
    case WeightSign::Negative: return sigma * positive_part_mean(-a);
    case WeightSign::Absolute: return sigma * (positive_part_mean(a) + positive_part_mean(-a));
  }
  return 0.0;
}

namespace detail {

// Standardized upper tail of the x^+ weighted density: with X = sigma (a + Z),
// returns int_z^inf (a + v) phi(v) dv for z >= -a.
inline double weighted_tail(double a, double z) { return pdf(z) + a * cdf(-z); }

// Solves weighted_tail(a, z) = target for z >= -a (tail decreasing in z).
// Targets in the upper half of the mass are solved on the head mass
// sqrt(H(z)), H = total - tail, which is nearly linear in z next to -a;
// the rest on the log tail, which is concave. Both use bracketed Newton.
inline double invert_weighted_tail(double a, double target) {
  const double z0 = -a;
  const double total = weighted_tail(a, z0);
  if (target >= total) return z0;
  if (target <= 0.0) return std::numeric_limits<double>::infinity();
  double lo = z0, hi = std::numeric_limits<double>::infinity();
  const double head = total - target;
  if (head < 0.5 * total) {
    const double p0 = pdf(z0);
    const double sh = std::sqrt(head);
    // large a: H ~ a (Phi(z) - Phi(-a)); small a: H ~ p0 (z + a)^2 / 2
    double z = a > 1.0 ? std::max(z0, quantile(std::min(cdf(z0) + head / a, 1.0 - 1e-16)))
                       : z0 + std::sqrt(2.0 * head / std::max(p0, 1e-300));
    for (int it = 0; it < 100; ++it) {
      const double H = std::max(p0 - pdf(z) + a * interval_mass(z0, z), 0.0);
      const double g = std::sqrt(H) - sh;
      if (g < 0.0) lo = z; else hi = z;
      const double slope = H > 0.0 ? (a + z) * pdf(z) / (2.0 * std::sqrt(H)) : 0.0;
      double zn = slope > 0.0 ? z - g / slope : z;
      if (slope > 0.0 && std::abs(zn - z) < 1e-12 * (1.0 + std::abs(z))) return zn;
      if (!(zn > lo && zn < hi)) zn = std::isfinite(hi) ? 0.5 * (lo + hi) : lo + 2.0 * (lo - z0) + 1.0;
      z = zn;
    }
    return z;
  }
  const double log_target = std::log(target);
  double z = a > 1.0 ? std::max(z0, -quantile(std::max(target / a, 1e-300))) : std::max(z0, 0.0) + 0.5;
  for (int it = 0; it < 100; ++it) {
    const double t = weighted_tail(a, z);
    if (!(t > 0.0)) {  // underflow: far right of the root
      hi = z;
      z = 0.5 * (lo + hi);
      continue;
    }
    const double f = std::log(t) - log_target;
    if (f > 0.0) lo = z; else hi = z;
    const double slope = -(a + z) * pdf(z) / t;
    double zn = slope != 0.0 ? z - f / slope : z;
    if (slope != 0.0 && std::abs(zn - z) < 1e-12 * (1.0 + std::abs(z))) return zn;
    if (!(zn > lo && zn < hi)) zn = std::isfinite(hi) ? 0.5 * (lo + hi) : lo + 2.0 * (lo - z0) + 1.0;
    z = zn;
    if (z > 60.0) return z;
  }
  return z;
}

}  // namespace detail

/// Draws from the density proportional to w(x) phi((x - mu)/sigma) by
/// inversion at u in (0, 1). Returns the standardized value (x - mu)/sigma.
inline double weighted_quantile(double mu, double sigma, WeightSign sign, double u) {
  const double a = mu / sigma;
  switch (sign) {
    case WeightSign::Positive: {
      const double total = positive_part_mean(a);
      return detail::invert_weighted_tail(a, (1.0 - u) * total);
    }
    case WeightSign::Negative: {
      // Reflect: x' = -x has mean -mu and the positive-part weight.
      const double total = positive_part_mean(-a);
      return -detail::invert_weighted_tail(-a, u * total);
    }
    case WeightSign::Absolute: {
      const double neg = positive_part_mean(-a);
      const double pos = positive_part_mean(a);
      const double split = neg / (neg + pos);
      if (u < split) return weighted_quantile(mu, sigma, WeightSign::Negative, u / split);
      return weighted_quantile(mu, sigma, WeightSign::Positive, (u - split) / (1.0 - split));
    }
  }
  return 0.0;
}

/// Mean of the standardized variable under the weighted density.
inline double weighted_mean(double mu, double sigma, WeightSign sign) {
  const double a = mu / sigma;
  // int_{-a}^inf z (a + z) phi(z) dz = Phi(a)
  const double pos_first = positive_part_mean(a);
  const double pos_second = cdf(a);
  const double neg_first = positive_part_mean(-a);
  const double neg_second = -cdf(-a);
  switch (sign) {
    case WeightSign::Positive: return pos_first > 0 ? pos_second / pos_first : -a;
    case WeightSign::Negative: return neg_first > 0 ? neg_second / neg_first : -a;
    case WeightSign::Absolute: return (pos_second + neg_second) / (pos_first + neg_first);
  }
  return 0.0;
}

}  // namespace crossint::normal
