#pragma once

// Marginal treatment effect bounds for always-takers at latent index v,
// evaluated on population models given by conditional selection
// probabilities and conditional outcome laws.

#include <cmath>
#include <functional>
#include <numbers>
#include <string_view>
#include <vector>

#include "smbounds/error.hpp"
#include "smbounds/law.hpp"
#include "smbounds/numeric.hpp"
#include "smbounds/parallel.hpp"

namespace smb {

struct MteModel {
  std::function<double(double)> p_s1_given_v;  // P(S1 = 1 | V = v)
  std::function<double(double)> p_s0_given_v;  // P(S0 = 1 | V = v)
  std::function<OutcomeLaw(double)> y1_given_v;  // Y1* | S1 = 1, V = v
  std::function<OutcomeLaw(double)> y0_given_v;  // Y0* | S0 = 1, V = v
  double support_lo = 0.0;
  double support_hi = 1.0;
  std::function<double(double)> truth;  // known mu(v), when available
};

enum class MteAssumption { monotone, stochastic, frechet_only };

constexpr std::string_view to_string(MteAssumption a) {
  switch (a) {
    case MteAssumption::monotone: return "monotone";
    case MteAssumption::stochastic: return "stochastic";
    case MteAssumption::frechet_only: return "frechet_only";
  }
  return "unknown";
}

struct MteBounds {
  std::vector<double> grid;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> s_of_v;
  MteAssumption assumption_set = MteAssumption::stochastic;
  double theta_L = 1.0;
};

/// Share of the S1 = 1 population at v attributed to always-takers:
/// eta(v) = P(S0|v) / P(S1|v), alpha~(v) = max(P(S0|v) + P(S1|v) - 1, 0) / P(S1|v).
inline double mte_trim_share(const MteModel& m, double v, double theta_L, MteAssumption set) {
  if (!(v >= m.support_lo && v <= m.support_hi)) {
    throw Error(ErrorCode::BadArgument, "v = " + std::to_string(v) + " outside the model support");
  }
  const double p1 = m.p_s1_given_v(v);
  const double p0 = m.p_s0_given_v(v);
  if (!(p1 > 0.0)) throw Error(ErrorCode::ZeroSelection, "P(S1=1 | V=v) = 0 at v = " + std::to_string(v));
  const double eta = p0 / p1;
  const double frechet = std::max(p0 + p1 - 1.0, 0.0) / p1;
  switch (set) {
    case MteAssumption::monotone: return eta;
    case MteAssumption::frechet_only: return frechet;
    case MteAssumption::stochastic: return std::max(theta_L * eta, frechet);
  }
  return eta;
}

inline std::vector<double> default_mte_grid() {
  std::vector<double> g;
  for (int i = 5; i <= 95; ++i) g.push_back(i / 100.0);
  return g;
}

inline MteBounds mte_bounds(const MteModel& m, const std::vector<double>& grid, double theta_L,
                            MteAssumption set) {
  if (!(theta_L > 0.0 && theta_L <= 1.0)) throw Error(ErrorCode::BadArgument, "theta_L must lie in (0, 1]");
  MteBounds b;
  b.grid = grid;
  b.assumption_set = set;
  b.theta_L = theta_L;
  b.lower.resize(grid.size());
  b.upper.resize(grid.size());
  b.s_of_v.resize(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) {
    const double v = grid[i];
    const double s = clamp01(mte_trim_share(m, v, theta_L, set));
    const auto y1 = m.y1_given_v(v);
    const double e0 = m.y0_given_v(v).mean();
    b.s_of_v[i] = s;
    b.lower[i] = y1.trimmed(s, Tail::lower).mean - e0;
    b.upper[i] = y1.trimmed(s, Tail::upper).mean - e0;
  });
  return b;
}

/// The two-threshold latent-index model: U_S = (eps_V + eps_S) / sqrt(2),
/// S_d = 1{U_S <= 0.1 + 0.4 d}, V = Phi(eps_V); with a fair sign xi,
/// Y1* = 5 eps_V and Y0* = eps_V when xi = 1, Y1* = Y0* = -eps_V otherwise.
/// Given V = v the outcome laws are two-point and independent of selection,
/// so mu(v) = 2 Phi^{-1}(v).
inline MteModel latent_index_mte_model() {
  MteModel m;
  m.p_s1_given_v = [](double v) { return normal_cdf(0.5 * std::numbers::sqrt2 - normal_quantile(v)); };
  m.p_s0_given_v = [](double v) { return normal_cdf(0.1 * std::numbers::sqrt2 - normal_quantile(v)); };
  m.y1_given_v = [](double v) {
    const double e = normal_quantile(v);
    return atom_law({5.0 * e, -e}, {0.5, 0.5});
  };
  m.y0_given_v = [](double v) {
    const double e = normal_quantile(v);
    return atom_law({e, -e}, {0.5, 0.5});
  };
  m.support_lo = 0.0;
  m.support_hi = 1.0;
  m.truth = [](double v) { return 2.0 * normal_quantile(v); };
  return m;
}

}  // namespace smb
