#pragma once

// Assumption checks: the implied bound on P(S1=1 | S0=0), the folded
// density comparison at a trimming quantile, and bound curves over a grid
// of theta_L values.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smbounds/core.hpp"
#include "smbounds/error.hpp"
#include "smbounds/estimate.hpp"
#include "smbounds/identify.hpp"
#include "smbounds/inference.hpp"
#include "smbounds/kde.hpp"
#include "smbounds/parallel.hpp"

namespace smb {

/// Upper bound on P(S1 = 1 | S0 = 0) implied by theta_L:
/// (P(S=1|D=1) - theta_L P(S=1|D=0)) / (1 - P(S=1|D=0)).
inline double theta_plausibility(const IdentifiedPrimitives& p, double theta_L) {
  if (p.alpha0 >= 1.0) {
    throw Error(ErrorCode::DegenerateControlSelection, "every control unit is selected");
  }
  return (p.p_s1_d1 - theta_L * p.alpha0) / (1.0 - p.alpha0);
}

// ---------------------------------------------------------------------------
// Folded density

enum class FoldArm { treated, control };

struct FoldReport {
  Tail side = Tail::lower;
  double fold_point = 0.0;
  std::vector<double> grid;     // symmetric about fold_point
  std::vector<double> density;  // f(x)
  std::vector<double> folded;   // f(2 c - x)
  double violation_measure = 0.0;
  double bandwidth = 0.0;       // 0 for an exact density
  std::size_t n = 0;
  // Pointwise 99% normal-approximation bands of the density estimate.
  std::optional<std::vector<double>> band_lo;
  std::optional<std::vector<double>> band_hi;
  // Some grid point where the folded lower band exceeds the density upper band.
  bool significant = false;

  bool violated() const { return violation_measure > 0.0; }
};

namespace detail {

/// Grid of 201 points centred on c covering [lo, hi].
inline std::vector<double> fold_grid(double c, double lo, double hi) {
  const double half = std::max(c - lo, hi - c);
  std::vector<double> g(201);
  for (int i = 0; i < 201; ++i) g[i] = c + half * (i - 100) / 100.0;
  g[100] = c;
  return g;
}

/// The side's condition compares f at points beyond the fold (x > c for
/// the lower side, x < c for the upper) with f reflected from the trimmed
/// tail. Differences below `floor` are treated as zero.
inline double fold_violation(const FoldReport& r, double floor) {
  double v = 0.0;
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    const bool beyond = r.side == Tail::lower ? r.grid[i] > r.fold_point : r.grid[i] < r.fold_point;
    if (!beyond) continue;
    const double d = r.folded[i] - r.density[i];
    if (d > floor) v = std::max(v, d);
  }
  return v;
}

}  // namespace detail

/// Exact folded density of a law at `fold_point`.
inline FoldReport fold_report(const OutcomeLaw& law, double fold_point, Tail side) {
  FoldReport r;
  r.side = side;
  r.fold_point = fold_point;
  auto [lo, hi] = law.support();
  r.grid = detail::fold_grid(fold_point, lo, hi);
  double fmax = 0.0;
  for (double x : r.grid) {
    r.density.push_back(law.pdf(x));
    r.folded.push_back(law.pdf(2.0 * fold_point - x));
    fmax = std::max(fmax, r.density.back());
  }
  r.violation_measure = detail::fold_violation(r, 1e-12 * fmax);
  r.significant = r.violation_measure > 0.0;
  return r;
}

/// Population fold check at the trimming quantile of the treated-selected
/// law (theta = max(theta_L, theta_F), per-tail share theta q0 / 2).
inline FoldReport tail_smoothness_report(const DgpSpec& dgp, double theta_L, Tail side) {
  const auto prim = population_primitives(dgp, theta_L);
  const auto law = treated_selected_law(dgp);
  const double r = std::clamp(prim.theta * prim.q0 / 2.0, 0.0, 0.5);
  const double c = side == Tail::lower ? law.quantile(r) : law.quantile(1.0 - r);
  return fold_report(law, c, side);
}

/// Sample fold check: KDE of the chosen arm's selected outcomes folded at
/// that sample's trimming quantile, with 99% pointwise bands
/// f +- z sqrt(f R(K) / (n h)).
inline FoldReport tail_smoothness_report(const SelectionSample& sample, double theta_L, Tail side,
                                         const KdeOptions& kopt = {},
                                         FoldArm arm = FoldArm::treated) {
  const auto a = arm_data(sample, theta_L);
  std::vector<double> values = arm == FoldArm::treated ? a.treated : a.control;
  std::sort(values.begin(), values.end());
  if (values.size() < 30) {
    throw Error(ErrorCode::TooFewObservations,
                "fold check needs at least 30 observations, have " + std::to_string(values.size()));
  }
  const double r = std::clamp(a.prim.theta * a.prim.q0 / 2.0, 0.0, 0.5);
  FoldReport rep;
  rep.side = side;
  rep.n = values.size();
  rep.fold_point = side == Tail::lower ? sorted_quantile(values, r) : sorted_upper_quantile(values, r);
  rep.bandwidth = select_bandwidth(values, kopt);
  const double h = rep.bandwidth;
  rep.grid = detail::fold_grid(rep.fold_point, values.front() - 3.0 * h, values.back() + 3.0 * h);
  std::vector<double> reflected(rep.grid.size());
  for (std::size_t i = 0; i < rep.grid.size(); ++i) reflected[i] = 2.0 * rep.fold_point - rep.grid[i];
  rep.density = kde_with_bandwidth(values, rep.grid, kopt.kernel, h);
  rep.folded = kde_with_bandwidth(values, reflected, kopt.kernel, h);
  rep.violation_measure = detail::fold_violation(rep, 0.0);

  const double z = normal_quantile(0.995);
  const double scale = kernel_roughness(kopt.kernel) / (static_cast<double>(rep.n) * h);
  std::vector<double> lo(rep.grid.size()), hi(rep.grid.size());
  for (std::size_t i = 0; i < rep.grid.size(); ++i) {
    const double w = z * std::sqrt(rep.density[i] * scale);
    lo[i] = std::max(0.0, rep.density[i] - w);
    hi[i] = rep.density[i] + w;
  }
  // Folded values are density values at reflected points, and the grid is
  // symmetric, so the folded band at i is the band at the mirrored index.
  const std::size_t m = rep.grid.size() - 1;
  for (std::size_t i = 0; i <= m; ++i) {
    const bool beyond = side == Tail::lower ? rep.grid[i] > rep.fold_point : rep.grid[i] < rep.fold_point;
    if (beyond && lo[m - i] > hi[i]) rep.significant = true;
  }
  rep.band_lo = std::move(lo);
  rep.band_hi = std::move(hi);
  return rep;
}

// ---------------------------------------------------------------------------
// Sensitivity over theta_L

struct SensitivityCurve {
  std::vector<double> grid;
  std::vector<BoundsResult> bounds;
  std::vector<double> plausibility;  // implied bound on P(S1=1 | S0=0)
  std::optional<double> crossing;    // smallest theta_L whose interval excludes 0
};

inline SensitivityCurve sensitivity_curve(const SelectionSample& sample, std::vector<double> grid,
                                          const InferenceOptions& opt = {}) {
  if (grid.empty()) throw Error(ErrorCode::BadConfig, "empty theta_L grid");
  std::sort(grid.begin(), grid.end());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] <= 1.0)) {
      throw Error(ErrorCode::BadConfig, "theta_L grid values must lie in (0, 1]");
    }
    if (i > 0 && grid[i] == grid[i - 1]) throw Error(ErrorCode::BadConfig, "repeated theta_L value");
  }
  SensitivityCurve c;
  c.grid = grid;
  c.bounds.resize(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) { c.bounds[i] = infer_bounds(sample, grid[i], opt).bounds; });
  const auto prim = identified_primitives(sample, 1.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    c.plausibility.push_back(prim.alpha0 < 1.0 ? theta_plausibility(prim, grid[i]) : kNaN);
    const auto& ci = c.bounds[i].ci;
    if (!c.crossing && ci && (ci->lo > 0.0 || ci->hi < 0.0)) c.crossing = grid[i];
  }
  return c;
}

}  // namespace smb
