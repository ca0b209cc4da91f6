#pragma once

// Population engine: exact trimming bounds for a fully specified
// data-generating process, evaluated by quantile inversion of the
// treated-selected mixture plus adaptive quadrature of its trimmed moments.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "smbounds/core.hpp"
#include "smbounds/error.hpp"
#include "smbounds/law.hpp"
#include "smbounds/numeric.hpp"

namespace smb {

/// One principal stratum (s1, s0): its probability and the laws of the two
/// potential outcomes within it. Laws may be left empty when prob == 0.
struct Stratum {
  double prob = 0.0;
  OutcomeLaw y1;
  OutcomeLaw y0;
};

/// Joint law of (Y1*, Y0*, S1, S0, D) with D independent of the rest.
struct DgpSpec {
  std::array<std::array<Stratum, 2>, 2> strata{};  // [s1][s0]
  double p_d1 = 0.5;

  Stratum& at(int s1, int s0) { return strata[s1][s0]; }
  const Stratum& at(int s1, int s0) const { return strata[s1][s0]; }

  double p_s1() const { return at(1, 1).prob + at(1, 0).prob; }
  double p_s0() const { return at(1, 1).prob + at(0, 1).prob; }
  /// P(S1 = 1 | S0 = 1).
  double p_s1_given_s0() const { return at(1, 1).prob / p_s0(); }
};

/// Checks the stratum probabilities, that every law needed by a positive
/// stratum is present and integrates to one (to 1e-6), and optionally the
/// outcome-independence of S1 among S0 = 1 units (same laws across s1).
inline void validate_dgp(const DgpSpec& dgp, bool require_s1_independence = false) {
  double total = 0.0;
  for (int s1 = 0; s1 < 2; ++s1) {
    for (int s0 = 0; s0 < 2; ++s0) {
      const auto& st = dgp.at(s1, s0);
      if (!(st.prob >= 0.0)) throw Error(ErrorCode::BadConfig, "negative stratum probability");
      total += st.prob;
    }
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::BadConfig, "stratum probabilities sum to " + std::to_string(total));
  }
  if (!(dgp.p_d1 > 0.0 && dgp.p_d1 < 1.0)) {
    throw Error(ErrorCode::BadConfig, "treatment probability must lie in (0, 1)");
  }
  auto check_law = [](const OutcomeLaw& law, const std::string& what) {
    if (!law) throw Error(ErrorCode::BadConfig, "missing law for " + what);
    if (law.discrete()) return;
    auto [lo, hi] = law.support();
    const auto bp = law.breakpoints();
    const double mass = integrate([&](double t) { return law.pdf(t); }, lo, hi, bp);
    if (std::abs(mass - 1.0) > 1e-6) {
      throw Error(ErrorCode::BadConfig, what + " integrates to " + std::to_string(mass));
    }
  };
  for (int s1 = 0; s1 < 2; ++s1) {
    for (int s0 = 0; s0 < 2; ++s0) {
      const auto& st = dgp.at(s1, s0);
      if (st.prob <= 0.0) continue;
      const std::string tag = "stratum (s1=" + std::to_string(s1) + ", s0=" + std::to_string(s0) + ")";
      if (s1 == 1) check_law(st.y1, "Y1* in " + tag);
      if (s0 == 1) check_law(st.y0, "Y0* in " + tag);
    }
  }
  if (require_s1_independence && dgp.at(1, 1).prob > 0 && dgp.at(0, 1).prob > 0) {
    const auto& a = dgp.at(1, 1);
    const auto& b = dgp.at(0, 1);
    auto [lo, hi] = a.y1.support();
    for (int i = 0; i <= 200; ++i) {
      const double t = lo + (hi - lo) * i / 200.0;
      if (std::abs(a.y1.cdf(t) - b.y1.cdf(t)) > 1e-9 || std::abs(a.y0.cdf(t) - b.y0.cdf(t)) > 1e-9) {
        throw Error(ErrorCode::BadConfig,
                    "outcome laws differ between strata (1,1) and (0,1): S1 is not independent "
                    "of outcomes given S0 = 1");
      }
    }
  }
}

/// Law of Y given D=1, S=1: the S1=1 strata mixed by probability.
inline OutcomeLaw treated_selected_law(const DgpSpec& dgp) {
  if (dgp.p_s1() <= 0.0) throw Error(ErrorCode::DegenerateSelection, "P(S1=1) = 0");
  std::vector<double> w;
  std::vector<OutcomeLaw> parts;
  for (int s0 = 1; s0 >= 0; --s0) {
    const auto& st = dgp.at(1, s0);
    if (st.prob > 0) {
      w.push_back(st.prob);
      parts.push_back(st.y1);
    }
  }
  if (parts.size() == 1) return parts.front();
  return mixture_law(std::move(w), std::move(parts));
}

/// Law of Y given D=0, S=1.
inline OutcomeLaw control_selected_law(const DgpSpec& dgp) {
  if (dgp.p_s0() <= 0.0) throw Error(ErrorCode::DegenerateSelection, "P(S0=1) = 0");
  std::vector<double> w;
  std::vector<OutcomeLaw> parts;
  for (int s1 = 1; s1 >= 0; --s1) {
    const auto& st = dgp.at(s1, 1);
    if (st.prob > 0) {
      w.push_back(st.prob);
      parts.push_back(st.y0);
    }
  }
  if (parts.size() == 1) return parts.front();
  return mixture_law(std::move(w), std::move(parts));
}

/// P(Y <= y | D=1, S=1) = sum_{s0} pi_{1,s0} F1(y | 1, s0) / P(S1=1).
inline double mixture_cdf_treated(const DgpSpec& dgp, double y) {
  const double ps1 = dgp.p_s1();
  if (ps1 <= 0.0) throw Error(ErrorCode::DegenerateSelection, "P(S1=1) = 0");
  double s = 0.0;
  for (int s0 = 0; s0 < 2; ++s0) {
    const auto& st = dgp.at(1, s0);
    if (st.prob > 0) s += st.prob * st.y1.cdf(y);
  }
  return s / ps1;
}

inline IdentifiedPrimitives population_primitives(const DgpSpec& dgp, double theta_L) {
  return make_primitives(dgp.p_s0(), dgp.p_s1(), dgp.p_d1, control_selected_law(dgp).mean(),
                         theta_L);
}

/// E[Y1* - Y0* | S1 = S0 = 1].
inline double true_tau(const DgpSpec& dgp) {
  const auto& st = dgp.at(1, 1);
  if (st.prob <= 0.0) throw Error(ErrorCode::DegenerateSelection, "no always-takers");
  return st.y1.mean() - st.y0.mean();
}

enum class AssumptionSet { lee, stochastic, stochastic_symmetry };

constexpr std::string_view to_string(AssumptionSet a) {
  switch (a) {
    case AssumptionSet::lee: return "lee";
    case AssumptionSet::stochastic: return "stochastic";
    case AssumptionSet::stochastic_symmetry: return "stochastic_symmetry";
  }
  return "unknown";
}

struct PopulationBounds {
  double lower = 0.0;
  double upper = 0.0;
  AssumptionSet assumption_set = AssumptionSet::stochastic;
  double theta = 1.0;
  double trim_share = 1.0;  // theta * q0, clamped to [0, 1]
  double lower_quantile = 0.0;
  double upper_quantile = 0.0;
};

/// Trimming bounds without shape restrictions: the lowest / highest
/// theta*q0 share of the treated-selected law against the control mean.
inline PopulationBounds population_bounds_stochastic(const DgpSpec& dgp, double theta_L) {
  const auto prim = population_primitives(dgp, theta_L);
  const auto treated = treated_selected_law(dgp);
  const double share = clamp01(prim.theta * prim.q0);
  const auto lo = treated.trimmed(share, Tail::lower);
  const auto hi = treated.trimmed(share, Tail::upper);
  PopulationBounds b;
  b.assumption_set = theta_L == 1.0 ? AssumptionSet::lee : AssumptionSet::stochastic;
  b.theta = prim.theta;
  b.trim_share = share;
  b.lower = lo.mean - prim.eta0;
  b.upper = hi.mean - prim.eta0;
  b.lower_quantile = lo.quantile;
  b.upper_quantile = hi.quantile;
  return b;
}

inline PopulationBounds population_bounds_lee(const DgpSpec& dgp) {
  return population_bounds_stochastic(dgp, 1.0);
}

/// Bounds under symmetry (or mean-median coincidence) of the always-taker
/// law: quantiles at theta*q0/2 and 1 - theta*q0/2.
inline PopulationBounds population_bounds_symmetry(const DgpSpec& dgp, double theta_L) {
  const auto prim = population_primitives(dgp, theta_L);
  const auto treated = treated_selected_law(dgp);
  const double share = clamp01(prim.theta * prim.q0);
  PopulationBounds b;
  b.assumption_set = AssumptionSet::stochastic_symmetry;
  b.theta = prim.theta;
  b.trim_share = share;
  b.lower_quantile = treated.quantile(share / 2.0);
  b.upper_quantile = treated.quantile(1.0 - share / 2.0);
  b.lower = b.lower_quantile - prim.eta0;
  b.upper = b.upper_quantile - prim.eta0;
  return b;
}

/// Tail smoothness at the two symmetric trimming quantiles c_L, c_U of a
/// density f: f(c_L - a) <= f(c_L + a) and f(c_U - a) >= f(c_U + a) for all
/// a >= 0, checked on a grid of offsets.
struct TailSmoothness {
  double lower_fold = 0.0;
  double upper_fold = 0.0;
  double lower_violation = 0.0;  // sup_a (f(c_L - a) - f(c_L + a))_+
  double upper_violation = 0.0;  // sup_a (f(c_U + a) - f(c_U - a))_+
  bool lower_holds = true;
  bool upper_holds = true;
  bool holds() const { return lower_holds && upper_holds; }
};

inline TailSmoothness check_tail_smoothness(const OutcomeLaw& law, double lower_fold,
                                            double upper_fold, int grid = 4000) {
  TailSmoothness out;
  out.lower_fold = lower_fold;
  out.upper_fold = upper_fold;
  auto [lo, hi] = law.support();
  const double reach = hi - lo;
  double fmax = 0.0;
  for (int i = 0; i <= grid; ++i) {
    const double a = reach * i / grid;
    const double fl_minus = law.pdf(lower_fold - a);
    const double fl_plus = law.pdf(lower_fold + a);
    const double fu_minus = law.pdf(upper_fold - a);
    const double fu_plus = law.pdf(upper_fold + a);
    fmax = std::max({fmax, fl_minus, fl_plus, fu_minus, fu_plus});
    out.lower_violation = std::max(out.lower_violation, fl_minus - fl_plus);
    out.upper_violation = std::max(out.upper_violation, fu_plus - fu_minus);
  }
  // Exact ties (symmetric laws) may differ in the last bits.
  const double tol = 1e-12 * std::max(1.0, fmax);
  out.lower_holds = out.lower_violation <= tol;
  out.upper_holds = out.upper_violation <= tol;
  return out;
}

inline TailSmoothness check_tail_smoothness(const DgpSpec& dgp, double theta_L) {
  const auto sym = population_bounds_symmetry(dgp, theta_L);
  return check_tail_smoothness(treated_selected_law(dgp), sym.lower_quantile, sym.upper_quantile);
}

struct NestingReport {
  PopulationBounds stochastic;
  PopulationBounds symmetry;
  TailSmoothness tail;
  bool nested = false;
  /// Largest amount by which the symmetry pair sticks out of the stochastic pair.
  double violation = 0.0;
  bool assumption_5() const { return tail.holds(); }
};

inline NestingReport nesting_check(const DgpSpec& dgp, double theta_L) {
  NestingReport r;
  r.stochastic = population_bounds_stochastic(dgp, theta_L);
  r.symmetry = population_bounds_symmetry(dgp, theta_L);
  r.tail = check_tail_smoothness(treated_selected_law(dgp), r.symmetry.lower_quantile,
                                 r.symmetry.upper_quantile);
  r.violation = std::max({0.0, r.stochastic.lower - r.symmetry.lower,
                          r.symmetry.upper - r.stochastic.upper});
  r.nested = r.violation <= 1e-9;
  return r;
}

/// Result of the attainability construction for one symmetry bound.
struct SharpnessConstruction {
  Tail side = Tail::upper;
  DgpSpec law;                 // the constructed joint law
  double fold_point = 0.0;
  double bound = 0.0;          // the symmetry bound being attained
  double attained = 0.0;       // true tau under the constructed law
  double max_observed_gap = 0.0;  // sup over grid of |P~(Y<=y,S=1,D=d) - P(Y<=y,S=1,D=d)|
  bool reproduces_observed = false;
  bool attains_bound = false;
};

/// Builds a joint law that matches the observed-data law and whose
/// always-taker outcome law is the fold of the treated-selected law about
/// the trimming quantile (upper side: the right tail reflected leftward;
/// lower side: the left tail reflected rightward). Requires the tail
/// smoothness condition on that side, which makes the complier law proper.
inline SharpnessConstruction sharpness_construction(const DgpSpec& dgp, double theta_L,
                                                    Tail side = Tail::upper) {
  const auto prim = population_primitives(dgp, theta_L);
  const auto sym = population_bounds_symmetry(dgp, theta_L);
  const auto treated = treated_selected_law(dgp);
  const auto control = control_selected_law(dgp);
  const auto tail = check_tail_smoothness(treated, sym.lower_quantile, sym.upper_quantile);
  if (side == Tail::upper ? !tail.upper_holds : !tail.lower_holds) {
    throw Error(ErrorCode::TailSmoothnessViolated,
                std::string("tail smoothness fails at the ") +
                    (side == Tail::upper ? "upper" : "lower") + " fold (violation " +
                    std::to_string(side == Tail::upper ? tail.upper_violation
                                                       : tail.lower_violation) +
                    ")");
  }

  const double r = sym.trim_share;
  const double c = side == Tail::upper ? sym.upper_quantile : sym.lower_quantile;
  const double Fc = treated.cdf(c);
  auto [slo, shi] = treated.support();
  std::vector<double> bps = treated.breakpoints();
  const std::size_t nb = bps.size();
  for (std::size_t i = 0; i < nb; ++i) bps.push_back(2 * c - bps[i]);
  bps.push_back(c);
  const double lo = std::min(slo, 2 * c - shi);
  const double hi = std::max(shi, 2 * c - slo);

  // Always-taker law: the kept tail (mass r/2) and its mirror image.
  GenericLaw::Spec folded;
  if (side == Tail::upper) {
    folded.cdf = [=](double y) {
      return y >= c ? 0.5 + (treated.cdf(y) - Fc) / r : (1.0 - treated.cdf(2 * c - y)) / r;
    };
    folded.pdf = [=](double y) { return (y >= c ? treated.pdf(y) : treated.pdf(2 * c - y)) / r; };
  } else {
    folded.cdf = [=](double y) {
      return y <= c ? treated.cdf(y) / r : 0.5 + (Fc - treated.cdf(2 * c - y)) / r;
    };
    folded.pdf = [=](double y) { return (y <= c ? treated.pdf(y) : treated.pdf(2 * c - y)) / r; };
  }
  folded.support_lo = lo;
  folded.support_hi = hi;
  folded.breakpoints = bps;
  const auto at_law = generic_law(folded);

  OutcomeLaw complier = treated;
  if (r < 1.0) {
    GenericLaw::Spec rest;
    rest.cdf = [=](double y) { return (treated.cdf(y) - r * at_law.cdf(y)) / (1.0 - r); };
    rest.pdf = [=](double y) { return (treated.pdf(y) - r * at_law.pdf(y)) / (1.0 - r); };
    rest.support_lo = lo;
    rest.support_hi = hi;
    rest.breakpoints = bps;
    rest.mean = (treated.mean() - r * at_law.mean()) / (1.0 - r);
    complier = generic_law(rest);
  }

  SharpnessConstruction out;
  out.side = side;
  out.fold_point = c;
  out.bound = side == Tail::upper ? sym.upper : sym.lower;
  auto& t = out.law;
  t.p_d1 = dgp.p_d1;
  const double theta = prim.theta;
  t.at(1, 1) = {theta * prim.alpha0, at_law, control};
  t.at(0, 1) = {(1.0 - theta) * prim.alpha0, at_law, control};
  t.at(1, 0) = {std::max(0.0, prim.p_s1_d1 - theta * prim.alpha0), complier, control};
  t.at(0, 0) = {std::max(0.0, 1.0 - t.at(1, 1).prob - t.at(0, 1).prob - t.at(1, 0).prob), treated,
                control};

  // (a) observed law P(Y <= y, S = 1, D = d) on a grid.
  const auto ctl_support = control.support();
  const double glo = std::min(lo, ctl_support.first);
  const double ghi = std::max(hi, ctl_support.second);
  double gap = 0.0;
  for (int i = 0; i <= 400; ++i) {
    const double y = glo + (ghi - glo) * i / 400.0;
    double treated_t = 0.0;
    double treated_o = 0.0;
    double control_t = 0.0;
    double control_o = 0.0;
    for (int s0 = 0; s0 < 2; ++s0) {
      if (t.at(1, s0).prob > 0) treated_t += t.at(1, s0).prob * t.at(1, s0).y1.cdf(y);
      if (dgp.at(1, s0).prob > 0) treated_o += dgp.at(1, s0).prob * dgp.at(1, s0).y1.cdf(y);
    }
    for (int s1 = 0; s1 < 2; ++s1) {
      if (t.at(s1, 1).prob > 0) control_t += t.at(s1, 1).prob * t.at(s1, 1).y0.cdf(y);
      if (dgp.at(s1, 1).prob > 0) control_o += dgp.at(s1, 1).prob * dgp.at(s1, 1).y0.cdf(y);
    }
    gap = std::max(gap, dgp.p_d1 * std::abs(treated_t - treated_o));
    gap = std::max(gap, (1.0 - dgp.p_d1) * std::abs(control_t - control_o));
  }
  out.max_observed_gap = gap;
  out.reproduces_observed = gap <= 1e-4;
  // (b) the constructed always-taker effect equals the bound.
  out.attained = true_tau(t);
  out.attains_bound = std::abs(out.attained - out.bound) <= 1e-4;
  return out;
}

/// The DGP of the running example: 2.5% defiers, N(0, 1/2) outcomes for
/// S0 = 1 units and N(2, 1/2) for the S1 = 1, S0 = 0 stratum; no effect.
inline DgpSpec running_example_dgp(double p_d1 = 0.5) {
  const double sd = std::sqrt(0.5);
  DgpSpec dgp;
  dgp.p_d1 = p_d1;
  dgp.at(1, 1) = {0.475, normal_law(0.0, sd), normal_law(0.0, sd)};
  dgp.at(0, 1) = {0.025, normal_law(0.0, sd), normal_law(0.0, sd)};
  dgp.at(1, 0) = {0.300, normal_law(2.0, sd), normal_law(2.0, sd)};
  dgp.at(0, 0) = {0.200, normal_law(0.0, sd), normal_law(0.0, sd)};
  return dgp;
}

}  // namespace smb
