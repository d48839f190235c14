#ifndef VINECAL_NORMAL_HPP
#define VINECAL_NORMAL_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

namespace vinecal {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178032973640562;

/// Quantile inputs are clamped into [kUniformFloor, 1 - kUniformFloor].
inline constexpr double kUniformFloor = 1e-12;

/// Number of times a uniform was clamped before the normal quantile. Diagnostic only.
inline std::atomic<std::uint64_t> quantile_clamp_count{0};

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

inline double norm_logpdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

inline double norm_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

namespace detail {

// Rational approximation (Acklam) good to ~1e-9 relative, then one Halley step
// against erfc brings it to working precision.
inline double norm_quantile_rational(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace detail

/// Standard normal quantile. Requires p in (0, 1).
inline double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("norm_quantile: p must lie in (0, 1)");
  double x = detail::norm_quantile_rational(p);
  // Halley refinement; the error term is computed on the smaller tail to avoid cancellation.
  const double e = (p < 0.5) ? norm_cdf(x) - p : -(norm_cdf(-x) - (1.0 - p));
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  x = x - u / (1.0 + 0.5 * x * u);
  return x;
}

/// Normal score of a uniform with clamping into the open unit interval.
inline double uniform_to_score(double u) {
  if (u < kUniformFloor || u > 1.0 - kUniformFloor) {
    quantile_clamp_count.fetch_add(1, std::memory_order_relaxed);
    u = std::clamp(u, kUniformFloor, 1.0 - kUniformFloor);
  }
  return norm_quantile(u);
}

}  // namespace vinecal

#endif  // VINECAL_NORMAL_HPP
