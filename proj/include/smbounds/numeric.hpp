#pragma once

// Scalar numerical kernels shared by the population engine and inference:
// standard-normal functions, monotone root bracketing and adaptive
// Gauss-Kronrod quadrature over a set of breakpoints.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "smbounds/error.hpp"

namespace smb {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Absolute tolerance in probability for quantile inversion.
inline constexpr double kQuantileTol = 1e-10;
/// Requested accuracy of every adaptive quadrature call.
inline constexpr double kQuadratureTol = 1e-7;

inline double normal_pdf(double x) {
  constexpr double inv_sqrt_2pi = 0.398942280401432677939946059934;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double normal_cdf(double x) {
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

inline double normal_quantile(double p) {
  if (p <= 0.0) return -kInf;
  if (p >= 1.0) return kInf;
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double clamp01(double p) { return std::clamp(p, 0.0, 1.0); }

/// Bisection for the root of a monotone function on [lo, hi]. The bracket
/// must contain a sign change; stops once the interval is below `xtol`.
template <class F>
double bisect(F&& f, double lo, double hi, double xtol, int max_iter = 400) {
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0) == (fhi > 0)) {
    throw Error(ErrorCode::RootBracketFailure,
                "no sign change on [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  for (int it = 0; it < max_iter && hi - lo > xtol; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0) == (flo > 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Smallest t in [lo, hi] with cdf(t) >= p, to `ptol` in probability.
/// Assumes cdf is nondecreasing and cdf(lo) < p <= cdf(hi).
template <class Cdf>
double invert_cdf(Cdf&& cdf, double p, double lo, double hi, double ptol = kQuantileTol) {
  double flo = cdf(lo);
  double fhi = cdf(hi);
  for (int it = 0; it < 2000 && fhi - flo > ptol; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double fm = cdf(mid);
    if (fm >= p) {
      hi = mid;
      fhi = fm;
    } else {
      lo = mid;
      flo = fm;
    }
  }
  return hi;
}

/// Adaptive 15-point Gauss-Kronrod integral of f over [a, b], split at the
/// given breakpoints so that narrow features are never straddled by a
/// single initial panel. Throws NonIntegrable when the error estimate of
/// any panel exceeds `tol` (absolute, scaled by the panel's L1 norm).
template <class F>
double integrate(F&& f, double a, double b, std::span<const double> breakpoints = {},
                 double tol = kQuadratureTol) {
  if (!(b > a)) return 0.0;
  std::vector<double> cuts{a};
  for (double x : breakpoints) {
    if (x > a && x < b) cuts.push_back(x);
  }
  cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double err = 0.0;
    double l1 = 0.0;
    const double piece = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
        f, cuts[i], cuts[i + 1], 20, 1e-12, &err, &l1);
    if (!std::isfinite(piece) || err > tol * std::max(1.0, l1)) {
      throw Error(ErrorCode::NonIntegrable,
                  "quadrature on [" + std::to_string(cuts[i]) + ", " + std::to_string(cuts[i + 1]) +
                      "] did not reach tolerance (error estimate " + std::to_string(err) + ")");
    }
    total += piece;
  }
  return total;
}

}  // namespace smb
