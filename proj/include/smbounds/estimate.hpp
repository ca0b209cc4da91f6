#pragma once

// Sample-analog bound estimators. Every moment system used here is exactly
// identified, so each estimator is the closed-form plug-in solution:
// cell proportions, order statistics and trimmed means of the selected
// treated outcomes, and the selected control mean.
//
// Quantile conventions. The lower-tail quantile at share r is the k-th order
// statistic with k the smallest integer such that k/n >= r. The upper-tail
// quantile at share r is its mirror image, the (n - k + 1)-th order
// statistic, so that negating the data exchanges the two tails exactly.
// Trimmed means keep every value on the kept side of the boundary,
// including ties.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smbounds/core.hpp"
#include "smbounds/error.hpp"
#include "smbounds/law.hpp"

namespace smb {

/// Smallest k in [1, n] with k / n >= r; 1 when r <= 0. Levels are ratios
/// of counts, so r n within a few ulps of an integer is taken as that integer.
inline std::size_t order_rank(std::size_t n, double r) {
  if (n == 0) throw Error(ErrorCode::EmptyInput, "no values");
  if (!(r > 0.0)) return 1;
  if (r >= 1.0) return n;
  double x = r * static_cast<double>(n);
  const double whole = std::round(x);
  if (std::abs(x - whole) <= 1e-9 * std::max(1.0, x)) x = whole;
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(x)), 1, n);
}

/// Lower quantile of already sorted values.
inline double sorted_quantile(std::span<const double> sorted, double r) {
  return sorted[order_rank(sorted.size(), r) - 1];
}

/// Upper quantile of already sorted values: the boundary of the top r share.
inline double sorted_upper_quantile(std::span<const double> sorted, double r) {
  return sorted[sorted.size() - order_rank(sorted.size(), r)];
}

/// Infimum-convention empirical quantile: the ceil(r n)-th order statistic,
/// the minimum at r = 0.
inline double empirical_quantile(std::span<const double> values, double r) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "quantile of an empty set");
  if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorCode::BadArgument, "quantile level outside [0, 1]");
  std::vector<double> v(values.begin(), values.end());
  const std::size_t k = order_rank(v.size(), r) - 1;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

/// Boundary of the top r share: the mirror of empirical_quantile.
inline double empirical_upper_quantile(std::span<const double> values, double r) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "quantile of an empty set");
  if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorCode::BadArgument, "quantile level outside [0, 1]");
  std::vector<double> v(values.begin(), values.end());
  const std::size_t k = v.size() - order_rank(v.size(), r);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

/// A trimmed mean with its boundary order statistic.
struct MuHat {
  double mu = 0.0;
  double quantile = 0.0;
  Tail tail = Tail::lower;
  std::size_t kept = 0;
  double variance = 0.0;  // of the kept values, divisor `kept`
};

inline MuHat sorted_trimmed_mean(std::span<const double> sorted, double r, Tail tail) {
  if (sorted.empty()) throw Error(ErrorCode::EmptyInput, "trimmed mean of an empty set");
  MuHat out;
  out.tail = tail;
  std::size_t first = 0;
  std::size_t last = sorted.size();
  if (tail == Tail::lower) {
    out.quantile = sorted_quantile(sorted, r);
    last = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), out.quantile) -
                                    sorted.begin());
  } else {
    out.quantile = sorted_upper_quantile(sorted, r);
    first = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), out.quantile) -
                                     sorted.begin());
  }
  out.kept = last - first;
  const auto kept = sorted.subspan(first, out.kept);
  const double n = static_cast<double>(out.kept);
  out.mu = std::accumulate(kept.begin(), kept.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : kept) ss += (v - out.mu) * (v - out.mu);
  out.variance = ss / n;
  return out;
}

/// Mean of the values at or below the r-quantile (lower) or at or above the
/// upper r-quantile (upper). r is clamped to (0, 1].
inline MuHat trimmed_mean(std::span<const double> values, double r, Tail tail) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "trimmed mean of an empty set");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return sorted_trimmed_mean(v, std::min(r, 1.0), tail);
}

/// Plug-in ingredients shared by the estimators, in trimming labels.
struct ArmData {
  std::vector<double> treated;  // selected outcomes of trimming arm 1, sorted
  std::vector<double> control;  // selected outcomes of trimming arm 0
  IdentifiedPrimitives prim;
  CellCounts counts;
  double control_variance = 0.0;  // divisor = count
  std::size_t n = 0;
};

inline ArmData arm_data(const SelectionSample& sample, double theta_L) {
  require_selected_cells(sample);
  ArmData a;
  a.prim = identified_primitives(sample, theta_L);
  a.counts = sample.trimming_counts();
  a.n = sample.size();
  a.treated = sample.outcomes(true);
  std::sort(a.treated.begin(), a.treated.end());
  a.control = sample.outcomes(false);
  double ss = 0.0;
  for (double y : a.control) ss += (y - a.prim.eta0) * (y - a.prim.eta0);
  a.control_variance = ss / static_cast<double>(a.control.size());
  return a;
}

/// Quantile-based parameters (beta, q, alpha, eta) of one bound side.
struct BetaHat {
  double beta = 0.0;   // order statistic
  double level = 0.0;  // tail share at which it is taken
  Tail tail = Tail::lower;
  double q = 0.0;
  double alpha = 0.0;
  double eta = 0.0;
};

/// Parameters of the unknown case: quantiles at the chosen and at the
/// Frechet trimming levels.
struct GammaHat {
  double gamma_L = 0.0;
  double gamma_F = 0.0;
  double level_L = 0.0;
  double level_F = 0.0;
  Tail tail = Tail::lower;
  double q = 0.0;
  double alpha = 0.0;
  double eta = 0.0;
};

namespace detail {

/// Per-tail levels are capped at 1/2 so the two quantiles cannot cross;
/// a level above the cap means the selection rates contradict the assumed
/// direction (q0 > 1).
inline double clamped_level(double r, const char* what, std::vector<std::string>& warnings,
                            double cap = 1.0) {
  if (r > cap || r < 0.0) {
    warnings.push_back(std::string("clamped ") + what + " trimming level " + std::to_string(r) +
                       " to [0, " + (cap == 1.0 ? "1" : "0.5") + "]");
    return std::clamp(r, 0.0, cap);
  }
  return r;
}

inline void warn_theta(const ArmData& a, double theta_L, std::vector<std::string>& warnings) {
  if (a.prim.q0 > 1.0) {
    warnings.push_back("selection rate of the untrimmed arm exceeds the trimmed arm's (q0 = " +
                       std::to_string(a.prim.q0) + "); the monotonicity direction may be reversed");
  }
  if (theta_L < a.prim.theta_F) {
    warnings.push_back("theta_L = " + std::to_string(theta_L) + " is below the estimated floor " +
                       std::to_string(a.prim.theta_F) + "; known-case estimator used as requested");
  }
}

/// Expresses bounds computed in trimming labels in the stored labels.
inline void orient(BoundsResult& b, bool flipped) {
  b.flipped = flipped;
  if (!flipped) return;
  const double lo = -b.upper;
  const double hi = -b.lower;
  b.lower = lo;
  b.upper = hi;
  std::swap(b.se_lower, b.se_upper);
}

}  // namespace detail

struct KnownSymmetryEstimate {
  BetaHat lower;
  BetaHat upper;
  BoundsResult bounds;
};

/// Known case (theta_L >= theta_F) under symmetry: quantiles at theta_L q/2
/// from each end of the treated-selected sample, minus the control mean.
inline KnownSymmetryEstimate estimate_known_symmetry(const SelectionSample& sample,
                                                     double theta_L) {
  const auto a = arm_data(sample, theta_L);
  KnownSymmetryEstimate e;
  auto& w = e.bounds.warnings;
  detail::warn_theta(a, theta_L, w);
  const double r = detail::clamped_level(theta_L * a.prim.q0 / 2.0, "per-tail", w, 0.5);
  e.lower = {sorted_quantile(a.treated, r), r, Tail::lower, a.prim.q0, a.prim.alpha0, a.prim.eta0};
  e.upper = {sorted_upper_quantile(a.treated, r), r, Tail::upper, a.prim.q0, a.prim.alpha0,
             a.prim.eta0};
  e.bounds.lower = e.lower.beta - a.prim.eta0;
  e.bounds.upper = e.upper.beta - a.prim.eta0;
  e.bounds.method = Method::stochastic_symmetry;
  e.bounds.symmetry = true;
  e.bounds.theta_used = theta_L;
  e.bounds.trim_fraction = r;
  detail::orient(e.bounds, sample.flipped());
  return e;
}

struct KnownTrimEstimate {
  MuHat lower;
  MuHat upper;
  double q = 0.0;
  double alpha = 0.0;
  double eta = 0.0;
  BoundsResult bounds;
};

/// Known case without symmetry: means of the lowest / highest theta_L q
/// share of the treated-selected sample, minus the control mean.
inline KnownTrimEstimate estimate_known_nosymmetry(const SelectionSample& sample, double theta_L) {
  const auto a = arm_data(sample, theta_L);
  KnownTrimEstimate e;
  auto& w = e.bounds.warnings;
  detail::warn_theta(a, theta_L, w);
  const double r = detail::clamped_level(theta_L * a.prim.q0, "trimming", w);
  e.lower = sorted_trimmed_mean(a.treated, r, Tail::lower);
  e.upper = sorted_trimmed_mean(a.treated, r, Tail::upper);
  e.q = a.prim.q0;
  e.alpha = a.prim.alpha0;
  e.eta = a.prim.eta0;
  e.bounds.lower = e.lower.mu - a.prim.eta0;
  e.bounds.upper = e.upper.mu - a.prim.eta0;
  e.bounds.method = theta_L == 1.0 ? Method::lee : Method::stochastic;
  e.bounds.theta_used = theta_L;
  e.bounds.trim_fraction = r;
  detail::orient(e.bounds, sample.flipped());
  return e;
}

/// Which branch attains the max (lower bound) or min (upper bound).
enum class Branch { L, F };

struct UnknownEstimate {
  GammaHat lower;
  GammaHat upper;
  // Trimmed means of the two branches, without symmetry only.
  std::optional<MuHat> mu_lower_L, mu_lower_F, mu_upper_L, mu_upper_F;
  Branch binding_lower = Branch::L;
  Branch binding_upper = Branch::L;
  BoundsResult bounds;
};

/// Unknown case: both the chosen and the Frechet trimming levels are
/// estimated; the lower bound is the larger and the upper bound the smaller
/// of the two branch values.
inline UnknownEstimate estimate_unknown(const SelectionSample& sample, double theta_L,
                                        bool symmetry) {
  const auto a = arm_data(sample, theta_L);
  UnknownEstimate e;
  auto& w = e.bounds.warnings;
  const double q = a.prim.q0;
  const double eta = a.prim.eta0;
  if (symmetry) {
    const double rL = detail::clamped_level(theta_L * q / 2.0, "per-tail", w, 0.5);
    const double rF = detail::clamped_level(a.prim.theta_F * q / 2.0, "Frechet per-tail", w, 0.5);
    e.lower = {sorted_quantile(a.treated, rL), sorted_quantile(a.treated, rF), rL, rF,
               Tail::lower, q, a.prim.alpha0, eta};
    e.upper = {sorted_upper_quantile(a.treated, rL), sorted_upper_quantile(a.treated, rF), rL, rF,
               Tail::upper, q, a.prim.alpha0, eta};
    e.binding_lower = e.lower.gamma_F > e.lower.gamma_L ? Branch::F : Branch::L;
    e.binding_upper = e.upper.gamma_F < e.upper.gamma_L ? Branch::F : Branch::L;
    e.bounds.lower = std::max(e.lower.gamma_L, e.lower.gamma_F) - eta;
    e.bounds.upper = std::min(e.upper.gamma_L, e.upper.gamma_F) - eta;
    e.bounds.trim_fraction = std::max(rL, rF);
  } else {
    const double rL = detail::clamped_level(theta_L * q, "trimming", w);
    const double rF = detail::clamped_level(a.prim.theta_F * q, "Frechet trimming", w);
    e.mu_lower_L = sorted_trimmed_mean(a.treated, rL, Tail::lower);
    e.mu_lower_F = sorted_trimmed_mean(a.treated, rF, Tail::lower);
    e.mu_upper_L = sorted_trimmed_mean(a.treated, rL, Tail::upper);
    e.mu_upper_F = sorted_trimmed_mean(a.treated, rF, Tail::upper);
    e.lower = {e.mu_lower_L->quantile, e.mu_lower_F->quantile, rL, rF, Tail::lower, q,
               a.prim.alpha0, eta};
    e.upper = {e.mu_upper_L->quantile, e.mu_upper_F->quantile, rL, rF, Tail::upper, q,
               a.prim.alpha0, eta};
    e.binding_lower = e.mu_lower_F->mu > e.mu_lower_L->mu ? Branch::F : Branch::L;
    e.binding_upper = e.mu_upper_F->mu < e.mu_upper_L->mu ? Branch::F : Branch::L;
    e.bounds.lower = std::max(e.mu_lower_L->mu, e.mu_lower_F->mu) - eta;
    e.bounds.upper = std::min(e.mu_upper_L->mu, e.mu_upper_F->mu) - eta;
    e.bounds.trim_fraction = std::max(rL, rF);
  }
  e.bounds.method = Method::unknown_max;
  e.bounds.symmetry = symmetry;
  e.bounds.theta_used = std::max(theta_L, a.prim.theta_F);
  e.bounds.warnings.push_back("upper bound takes the minimum over the two branch upper analogs");
  detail::orient(e.bounds, sample.flipped());
  return e;
}

/// Exchanges the roles of the arms for trimming. Applying it twice restores
/// the original sample.
inline SelectionSample flip_direction(const SelectionSample& sample) {
  return SelectionSample(sample.records(), !sample.flipped());
}

enum class CaseChoice { automatic, known, unknown };

struct EstimatorFlags {
  bool symmetry = false;
  CaseChoice case_choice = CaseChoice::automatic;
  /// Known-case path when theta_L >= estimated theta_F + margin.
  double auto_margin = 0.01;
};

/// Resolves automatic case selection for a sample.
inline bool use_known_case(const SelectionSample& sample, double theta_L,
                           const EstimatorFlags& flags) {
  switch (flags.case_choice) {
    case CaseChoice::known: return true;
    case CaseChoice::unknown: return false;
    case CaseChoice::automatic: break;
  }
  return theta_L >= identified_primitives(sample, theta_L).theta_F + flags.auto_margin;
}

/// Point bounds of the estimator selected by `flags`.
inline BoundsResult estimate_bounds(const SelectionSample& sample, double theta_L,
                                    const EstimatorFlags& flags) {
  if (!use_known_case(sample, theta_L, flags)) {
    return estimate_unknown(sample, theta_L, flags.symmetry).bounds;
  }
  if (flags.symmetry) return estimate_known_symmetry(sample, theta_L).bounds;
  return estimate_known_nosymmetry(sample, theta_L).bounds;
}

/// Selects the records of one covariate cell, keeping the direction.
inline SelectionSample covariate_cell(const SelectionSample& sample, const std::string& cell) {
  std::vector<Record> recs;
  for (const auto& r : sample.records()) {
    if (r.w && *r.w == cell) recs.push_back(r);
  }
  return SelectionSample(std::move(recs), sample.flipped());
}

struct CovariateEstimate {
  std::vector<std::string> cells;
  std::vector<double> weights;  // P(W = w | S = 1, trimming arm 0)
  std::vector<BoundsResult> cell_bounds;
  BoundsResult bounds;
};

/// Cellwise bounds aggregated with the covariate distribution of the
/// selected control units (the always-taker covariate law).
inline CovariateEstimate estimate_covariate_adjusted(const SelectionSample& sample,
                                                     double theta_L,
                                                     const EstimatorFlags& flags) {
  for (std::size_t i = 0; i < sample.records().size(); ++i) {
    if (!sample.records()[i].w) {
      throw Error(ErrorCode::MissingColumn,
                  "record " + std::to_string(i) + " has no covariate cell");
    }
  }
  CovariateEstimate out;
  out.cells = sample.covariate_cells();
  std::sort(out.cells.begin(), out.cells.end());
  double total = 0.0;
  for (const auto& c : out.cells) {
    const auto sub = covariate_cell(sample, c);
    require_selected_cells(sub, c);
    const double wgt = static_cast<double>(sub.trimming_counts()(0, 1));
    out.weights.push_back(wgt);
    total += wgt;
    auto b = estimate_bounds(sub, theta_L, flags);
    for (auto& msg : b.warnings) msg = "cell '" + c + "': " + msg;
    out.cell_bounds.push_back(std::move(b));
  }
  auto& res = out.bounds;
  res.method = Method::covariate_adjusted;
  res.symmetry = flags.symmetry;
  res.theta_used = theta_L;
  res.flipped = sample.flipped();
  for (std::size_t k = 0; k < out.cells.size(); ++k) {
    out.weights[k] /= total;
    res.lower += out.weights[k] * out.cell_bounds[k].lower;
    res.upper += out.weights[k] * out.cell_bounds[k].upper;
    res.trim_fraction += out.weights[k] * out.cell_bounds[k].trim_fraction;
    res.warnings.insert(res.warnings.end(), out.cell_bounds[k].warnings.begin(),
                        out.cell_bounds[k].warnings.end());
  }
  return out;
}

// Moment systems evaluated at the estimates. Each returns the vector of
// sample sums over units; closed-form estimates zero them up to rounding
// and, for indicator moments, up to the integer granularity of the counts.

namespace detail {

struct Unit {
  double y;  // 0 when unselected
  double s;
  double d;  // trimming label
};

inline std::vector<Unit> units(const SelectionSample& sample) {
  std::vector<Unit> u;
  u.reserve(sample.size());
  for (const auto& r : sample.records()) {
    u.push_back({r.s ? *r.y : 0.0, r.s ? 1.0 : 0.0, sample.trimming_arm(r) ? 1.0 : 0.0});
  }
  return u;
}

// Share-of-kept-tail indicator: 1{Y > b} for the lower tail, 1{Y >= b} for
// the upper tail.
inline double beyond(double y, double b, Tail tail) { return tail == Tail::lower ? y > b : y >= b; }

inline double tail_moment(double y, double b, double share, Tail tail) {
  return tail == Tail::lower ? beyond(y, b, tail) - (1.0 - share) : beyond(y, b, tail) - share;
}

}  // namespace detail

/// g: (quantile, q, alpha, eta) moments of the symmetry estimator, one side.
inline std::vector<double> moment_sums_g(const SelectionSample& sample, const BetaHat& b,
                                         double theta_L) {
  std::vector<double> m(4, 0.0);
  const double share = theta_L * b.q / 2.0;
  for (const auto& u : detail::units(sample)) {
    m[0] += detail::tail_moment(u.y, b.beta, share, b.tail) * u.s * u.d;
    m[1] += (b.q * u.s - b.alpha) * u.d;
    m[2] += (u.s - b.alpha) * (1.0 - u.d);
    m[3] += (u.y - b.eta) * u.s * (1.0 - u.d);
  }
  return m;
}

/// g~: the unknown-case system with the Frechet quantile.
inline std::vector<double> moment_sums_g_tilde(const SelectionSample& sample, const GammaHat& g,
                                               double theta_L) {
  std::vector<double> m(5, 0.0);
  const double share_L = theta_L * g.q / 2.0;
  const double share_F = (1.0 + g.q * (1.0 - 1.0 / g.alpha)) / 2.0;
  for (const auto& u : detail::units(sample)) {
    m[0] += detail::tail_moment(u.y, g.gamma_L, share_L, g.tail) * u.s * u.d;
    m[1] += detail::tail_moment(u.y, g.gamma_F, share_F, g.tail) * u.s * u.d;
    m[2] += (g.q * u.s - g.alpha) * u.d;
    m[3] += (u.s - g.alpha) * (1.0 - u.d);
    m[4] += (u.y - g.eta) * u.s * (1.0 - u.d);
  }
  return m;
}

namespace detail {

inline bool kept(double y, double b, Tail tail) { return tail == Tail::lower ? y <= b : y >= b; }

}  // namespace detail

/// h: (mu, quantile, q, alpha, eta) moments of the trimmed-mean estimator.
inline std::vector<double> moment_sums_h(const SelectionSample& sample, const MuHat& mu, double q,
                                         double alpha, double eta, double theta_L) {
  std::vector<double> m(5, 0.0);
  const double share = theta_L * q;
  for (const auto& u : detail::units(sample)) {
    const double sd = u.s * u.d;
    m[0] += (u.y - mu.mu) * sd * (u.s > 0 && detail::kept(u.y, mu.quantile, mu.tail));
    m[1] += detail::tail_moment(u.y, mu.quantile, share, mu.tail) * sd;
    m[2] += (q * u.s - alpha) * u.d;
    m[3] += (u.s - alpha) * (1.0 - u.d);
    m[4] += (u.y - eta) * u.s * (1.0 - u.d);
  }
  return m;
}

/// h~: both branches of the trimmed-mean system. The Frechet branch keeps
/// a theta_F q share.
inline std::vector<double> moment_sums_h_tilde(const SelectionSample& sample, const MuHat& mu_L,
                                               const MuHat& mu_F, const GammaHat& g,
                                               double theta_L) {
  std::vector<double> m(7, 0.0);
  const double share_L = theta_L * g.q;
  const double share_F = 1.0 + g.q * (1.0 - 1.0 / g.alpha);
  for (const auto& u : detail::units(sample)) {
    const double sd = u.s * u.d;
    m[0] += (u.y - mu_L.mu) * sd * (u.s > 0 && detail::kept(u.y, mu_L.quantile, mu_L.tail));
    m[1] += (u.y - mu_F.mu) * sd * (u.s > 0 && detail::kept(u.y, mu_F.quantile, mu_F.tail));
    m[2] += detail::tail_moment(u.y, g.gamma_L, share_L, g.tail) * sd;
    m[3] += detail::tail_moment(u.y, g.gamma_F, share_F, g.tail) * sd;
    m[4] += (g.q * u.s - g.alpha) * u.d;
    m[5] += (u.s - g.alpha) * (1.0 - u.d);
    m[6] += (u.y - g.eta) * u.s * (1.0 - u.d);
  }
  return m;
}

/// (sum g)'(sum g): the GMM objective at a parameter value.
inline double gmm_objective(const std::vector<double>& sums) {
  double s = 0.0;
  for (double v : sums) s += v * v;
  return s;
}

}  // namespace smb
