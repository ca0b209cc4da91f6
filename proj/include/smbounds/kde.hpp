#pragma once

// Kernel density estimation for the quantile-density nuisance and the fold
// diagnostics. Bandwidths are standard deviations of the kernel, so a given
// h means the same amount of smoothing for every kernel.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smbounds/error.hpp"
#include "smbounds/numeric.hpp"

namespace smb {

enum class Kernel { gaussian, epanechnikov };
enum class BandwidthRule { silverman, sheather_jones, fixed };

constexpr std::string_view to_string(Kernel k) {
  return k == Kernel::gaussian ? "gaussian" : "epanechnikov";
}

constexpr std::string_view to_string(BandwidthRule r) {
  switch (r) {
    case BandwidthRule::silverman: return "silverman";
    case BandwidthRule::sheather_jones: return "sheather_jones";
    case BandwidthRule::fixed: return "fixed";
  }
  return "unknown";
}

struct KdeOptions {
  Kernel kernel = Kernel::gaussian;
  BandwidthRule rule = BandwidthRule::silverman;
  double bandwidth = 0.0;  // used when rule == fixed
};

/// Kernel with unit standard deviation.
inline double kernel_value(Kernel k, double u) {
  if (k == Kernel::gaussian) return normal_pdf(u);
  constexpr double r5 = 2.23606797749978969641;
  if (std::abs(u) >= r5) return 0.0;
  return 0.75 / r5 * (1.0 - u * u / 5.0);
}

/// Roughness R(K) = integral of K^2 for the unit-variance kernel.
inline double kernel_roughness(Kernel k) {
  if (k == Kernel::gaussian) return 0.5 / std::sqrt(std::numbers::pi);
  return 3.0 / (5.0 * 2.23606797749978969641);
}

/// Half-width of the kernel's support in units of h (gaussian truncated).
inline double kernel_reach(Kernel k) { return k == Kernel::gaussian ? 9.0 : 2.23606797749978969641; }

namespace detail {

/// Type-7 (linear interpolation) sample quantile of sorted data; used only
/// for scale estimates inside bandwidth rules.
inline double interpolated_quantile(std::span<const double> sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double sample_sd(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// min(sd, IQR / 1.349), falling back to whichever is positive.
inline double robust_scale(std::span<const double> sorted, double iqr_divisor) {
  const double sd = sample_sd(sorted);
  const double iqr =
      (interpolated_quantile(sorted, 0.75) - interpolated_quantile(sorted, 0.25)) / iqr_divisor;
  double s = std::min(sd, iqr);
  if (!(s > 0.0)) s = std::max(sd, iqr);
  return s;
}

}  // namespace detail

/// Silverman's rule of thumb 0.9 min(sd, IQR/1.34) n^(-1/5).
inline double bandwidth_silverman(std::span<const double> values) {
  if (values.size() < 2) throw Error(ErrorCode::BadBandwidth, "need at least two values");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double s = detail::robust_scale(v, 1.34);
  if (!(s > 0.0)) throw Error(ErrorCode::BadBandwidth, "values have zero spread");
  return 0.9 * s * std::pow(static_cast<double>(v.size()), -0.2);
}

/// Sheather-Jones solve-the-equation bandwidth with binned pair counts
/// (1000 bins), following the construction of R's bw.SJ.
inline double bandwidth_sheather_jones(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) throw Error(ErrorCode::BadBandwidth, "need at least two values");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double scale = detail::robust_scale(v, 1.349);
  if (!(scale > 0.0)) throw Error(ErrorCode::BadBandwidth, "values have zero spread");

  constexpr std::size_t nb = 1000;
  const double xmin = v.front();
  const double dd = (v.back() - xmin) * 1.01 / static_cast<double>(nb);
  std::vector<double> bins(nb, 0.0);
  for (double x : v) {
    const auto b = std::min(nb - 1, static_cast<std::size_t>((x - xmin) / dd));
    bins[b] += 1.0;
  }
  // cnt[k] = number of unordered pairs whose bins are k apart.
  std::vector<double> cnt(nb, 0.0);
  for (std::size_t i = 0; i < nb; ++i) {
    if (bins[i] == 0.0) continue;
    cnt[0] += bins[i] * (bins[i] - 1.0) / 2.0;
    for (std::size_t j = i + 1; j < nb; ++j) cnt[j - i] += bins[i] * bins[j];
  }
  const double nd = static_cast<double>(n);
  const double sqrt2pi = std::sqrt(2.0 * std::numbers::pi);
  auto phi4 = [&](double h) {
    double sum = 0.0;
    for (std::size_t k = 0; k < nb; ++k) {
      double delta = static_cast<double>(k) * dd / h;
      delta *= delta;
      if (delta >= 1000.0) break;
      sum += std::exp(-delta / 2.0) * (delta * delta - 6.0 * delta + 3.0) * cnt[k];
    }
    sum = 2.0 * sum + nd * 3.0;
    return sum / (nd * (nd - 1.0) * std::pow(h, 5.0) * sqrt2pi);
  };
  auto phi6 = [&](double h) {
    double sum = 0.0;
    for (std::size_t k = 0; k < nb; ++k) {
      double delta = static_cast<double>(k) * dd / h;
      delta *= delta;
      if (delta >= 1000.0) break;
      sum += std::exp(-delta / 2.0) *
             (delta * delta * delta - 15.0 * delta * delta + 45.0 * delta - 15.0) * cnt[k];
    }
    sum = 2.0 * sum - 15.0 * nd;
    return sum / (nd * (nd - 1.0) * std::pow(h, 7.0) * sqrt2pi);
  };

  const double a = 1.24 * scale * std::pow(nd, -1.0 / 7.0);
  const double b = 1.23 * scale * std::pow(nd, -1.0 / 9.0);
  const double c1 = 1.0 / (2.0 * std::sqrt(std::numbers::pi) * nd);
  const double td = -phi6(b);
  if (!std::isfinite(td) || td <= 0.0) {
    throw Error(ErrorCode::BadBandwidth, "sample too sparse for the Sheather-Jones rule");
  }
  const double alph2 = 1.357 * std::pow(phi4(a) / td, 1.0 / 7.0);
  auto fsd = [&](double h) { return std::pow(c1 / phi4(alph2 * std::pow(h, 5.0 / 7.0)), 0.2) - h; };
  const double hmax = 1.144 * scale * std::pow(nd, -0.2);
  double lower = 0.1 * hmax;
  double upper = hmax;
  for (int itry = 1; fsd(lower) * fsd(upper) > 0.0; ++itry) {
    if (itry > 99) throw Error(ErrorCode::BadBandwidth, "no Sheather-Jones root in range");
    if (itry % 2) {
      upper *= 1.2;
    } else {
      lower /= 1.2;
    }
  }
  return bisect(fsd, lower, upper, 1e-3 * lower);
}

inline double select_bandwidth(std::span<const double> values, const KdeOptions& opt) {
  switch (opt.rule) {
    case BandwidthRule::fixed:
      if (!(opt.bandwidth > 0.0) || !std::isfinite(opt.bandwidth)) {
        throw Error(ErrorCode::BadBandwidth, "bandwidth must be positive");
      }
      return opt.bandwidth;
    case BandwidthRule::silverman: return bandwidth_silverman(values);
    case BandwidthRule::sheather_jones: return bandwidth_sheather_jones(values);
  }
  throw Error(ErrorCode::BadBandwidth, "unknown bandwidth rule");
}

/// Density estimate at each evaluation point with bandwidth h.
inline std::vector<double> kde_with_bandwidth(std::span<const double> values,
                                              std::span<const double> at, Kernel kernel,
                                              double h) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "density estimate of an empty set");
  if (!(h > 0.0) || !std::isfinite(h)) throw Error(ErrorCode::BadBandwidth, "bandwidth must be positive");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double reach = kernel_reach(kernel) * h;
  const double norm = 1.0 / (static_cast<double>(sorted.size()) * h);
  std::vector<double> out;
  out.reserve(at.size());
  for (double x : at) {
    auto lo = std::lower_bound(sorted.begin(), sorted.end(), x - reach);
    auto hi = std::upper_bound(lo, sorted.end(), x + reach);
    double s = 0.0;
    for (auto it = lo; it != hi; ++it) s += kernel_value(kernel, (x - *it) / h);
    out.push_back(s * norm);
  }
  return out;
}

struct KdeResult {
  std::vector<double> density;
  double bandwidth = 0.0;
};

inline KdeResult kde(std::span<const double> values, std::span<const double> at,
                     const KdeOptions& opt = {}) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "density estimate of an empty set");
  KdeResult r;
  r.bandwidth = select_bandwidth(values, opt);
  r.density = kde_with_bandwidth(values, at, opt.kernel, r.bandwidth);
  return r;
}

}  // namespace smb
