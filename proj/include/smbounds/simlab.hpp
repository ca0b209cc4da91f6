#pragma once

// Sampling from a DgpSpec, replication studies, and the atom-level
// trimming oracle used to check the quadrature and sample paths.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "smbounds/core.hpp"
#include "smbounds/error.hpp"
#include "smbounds/estimate.hpp"
#include "smbounds/identify.hpp"
#include "smbounds/inference.hpp"
#include "smbounds/law.hpp"
#include "smbounds/parallel.hpp"
#include "smbounds/rng.hpp"

namespace smb {

/// Counters reserved per unit inside a stream: treatment, stratum, outcome
/// (the rest is slack for mixtures of mixtures).
inline constexpr std::uint64_t kDrawsPerUnit = 8;

/// One simulated unit with its latent stratum.
struct DrawnUnit {
  Record record;
  int s1 = 0;
  int s0 = 0;
};

/// Unit i of stream (seed, stream): reads counters [8i, 8i + 8) for the
/// treatment, the stratum and then the observed potential outcome.
inline DrawnUnit draw_unit(const DgpSpec& dgp, std::uint64_t seed, std::uint64_t stream,
                           std::size_t i) {
  constexpr std::array<std::array<int, 2>, 4> order{{{1, 1}, {1, 0}, {0, 1}, {0, 0}}};
  CounterRng rng(seed, stream, kDrawsPerUnit * i);
  DrawnUnit u;
  Record& r = u.record;
  r.d = rng.uniform() < dgp.p_d1;
  double x = rng.uniform();
  int k = 0;
  for (; k < 3; ++k) {
    const double p = dgp.at(order[k][0], order[k][1]).prob;
    if (x < p) break;
    x -= p;
  }
  while (dgp.at(order[k][0], order[k][1]).prob <= 0.0) --k;  // rounding fallthrough
  u.s1 = order[k][0];
  u.s0 = order[k][1];
  const auto& st = dgp.at(u.s1, u.s0);
  r.s = r.d ? u.s1 == 1 : u.s0 == 1;
  if (r.s) r.y = r.d ? st.y1.sample(rng) : st.y0.sample(rng);
  return u;
}

/// n i.i.d. units from stream (seed, stream); deterministic, and any unit
/// can be regenerated on its own.
inline SelectionSample draw_sample(const DgpSpec& dgp, std::size_t n, std::uint64_t seed,
                                   std::uint64_t stream = 0) {
  std::vector<Record> recs(n);
  for (std::size_t i = 0; i < n; ++i) recs[i] = draw_unit(dgp, seed, stream, i).record;
  return SelectionSample(std::move(recs));
}

// ---------------------------------------------------------------------------
// Replications

enum class CoverageTarget { true_tau, identified_region };

constexpr std::string_view to_string(CoverageTarget t) {
  return t == CoverageTarget::true_tau ? "true_tau" : "identified_region";
}

struct ReplicationPlan {
  DgpSpec dgp;
  std::size_t n = 1000;
  std::size_t reps = 100;
  std::uint64_t seed = 0;
  double theta_L = 1.0;
  InferenceOptions inference;
  CoverageTarget target = CoverageTarget::true_tau;
  bool flipped = false;
};

struct ReplicationOutcome {
  double lower = 0.0;
  double upper = 0.0;
  double se_lower = 0.0;
  double se_upper = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool known_case = true;
  bool covered = false;
};

struct CoverageReport {
  CoverageTarget target = CoverageTarget::true_tau;
  std::size_t cover_count = 0;
  std::size_t reps = 0;
  double mean_lower = 0.0;
  double mean_upper = 0.0;
  double sd_lower = 0.0;
  double sd_upper = 0.0;
  double mean_se_lower = 0.0;
  double mean_se_upper = 0.0;
  double mean_ci_width = 0.0;
  double population_lower = 0.0;
  double population_upper = 0.0;
  double tau = 0.0;
  std::vector<ReplicationOutcome> outcomes;

  double coverage() const { return reps ? static_cast<double>(cover_count) / static_cast<double>(reps) : 0.0; }
};

/// Population bounds matching an estimator configuration.
inline PopulationBounds population_target(const DgpSpec& dgp, double theta_L, bool symmetry) {
  return symmetry ? population_bounds_symmetry(dgp, theta_L)
                  : population_bounds_stochastic(dgp, theta_L);
}

/// Replication r draws from stream r and seeds its own interval simulation
/// with mix64(seed + r), so the report does not depend on the worker count.
inline CoverageReport run_replications(const ReplicationPlan& plan) {
  if (plan.n < 2) throw Error(ErrorCode::BadConfig, "replication sample size must be at least 2");
  if (plan.reps < 1) throw Error(ErrorCode::BadConfig, "need at least one replication");
  validate_dgp(plan.dgp);
  CoverageReport rep;
  rep.target = plan.target;
  rep.reps = plan.reps;
  rep.tau = true_tau(plan.dgp);
  const auto pop = population_target(plan.dgp, plan.theta_L, plan.inference.flags.symmetry);
  rep.population_lower = pop.lower;
  rep.population_upper = pop.upper;

  rep.outcomes.resize(plan.reps);
  parallel_for(plan.reps, [&](std::size_t r) {
    try {
      auto sample = draw_sample(plan.dgp, plan.n, plan.seed, r);
      if (plan.flipped) sample = flip_direction(sample);
      auto opt = plan.inference;
      opt.seed = mix64(plan.seed + r);
      const auto res = infer_bounds(sample, plan.theta_L, opt);
      auto& o = rep.outcomes[r];
      o.lower = res.bounds.lower;
      o.upper = res.bounds.upper;
      o.se_lower = res.bounds.se_lower.value_or(0.0);
      o.se_upper = res.bounds.se_upper.value_or(0.0);
      o.ci_lo = res.ci ? res.ci->lo : o.lower;
      o.ci_hi = res.ci ? res.ci->hi : o.upper;
      o.known_case = res.known_case;
      o.covered = plan.target == CoverageTarget::true_tau
                      ? o.ci_lo <= rep.tau && rep.tau <= o.ci_hi
                      : o.ci_lo <= pop.lower && pop.upper <= o.ci_hi;
    } catch (const Error& e) {
      throw Error(e.code(), "replication " + std::to_string(r) + ": " + e.what());
    }
  });

  const double R = static_cast<double>(plan.reps);
  for (const auto& o : rep.outcomes) {
    rep.cover_count += o.covered ? 1 : 0;
    rep.mean_lower += o.lower / R;
    rep.mean_upper += o.upper / R;
    rep.mean_se_lower += o.se_lower / R;
    rep.mean_se_upper += o.se_upper / R;
    rep.mean_ci_width += (o.ci_hi - o.ci_lo) / R;
  }
  if (plan.reps > 1) {
    double sl = 0.0, su = 0.0;
    for (const auto& o : rep.outcomes) {
      sl += (o.lower - rep.mean_lower) * (o.lower - rep.mean_lower);
      su += (o.upper - rep.mean_upper) * (o.upper - rep.mean_upper);
    }
    rep.sd_lower = std::sqrt(sl / (R - 1.0));
    rep.sd_upper = std::sqrt(su / (R - 1.0));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Atom-level oracle

inline constexpr std::size_t kMaxOracleAtoms = 10000;

/// Equal-probability discretization: m atoms at the midpoint quantiles
/// (i + 1/2) / m, each of mass 1/m.
inline OutcomeLaw discretize(const OutcomeLaw& law, std::size_t m) {
  if (m == 0) throw Error(ErrorCode::BadArgument, "need at least one atom");
  if (law.discrete()) return law;
  std::vector<double> v(m), w(m, 1.0 / static_cast<double>(m));
  for (std::size_t i = 0; i < m; ++i) {
    v[i] = law.quantile((static_cast<double>(i) + 0.5) / static_cast<double>(m));
  }
  return atom_law(std::move(v), std::move(w));
}

inline DgpSpec discretize(const DgpSpec& dgp, std::size_t m) {
  DgpSpec out = dgp;
  for (int s1 = 0; s1 < 2; ++s1) {
    for (int s0 = 0; s0 < 2; ++s0) {
      auto& st = out.at(s1, s0);
      if (st.prob <= 0.0) continue;
      if (s1 == 1) st.y1 = discretize(st.y1, m);
      if (s0 == 1) st.y0 = discretize(st.y0, m);
    }
  }
  return out;
}

struct Atom {
  double value = 0.0;
  double mass = 0.0;
};

/// Keeps `share` of the total mass from one end of an atom list, shifting
/// the deleted mass off the boundary atom. Returns the kept atoms.
inline std::vector<Atom> shift_mass(std::vector<Atom> atoms, double share, Tail keep) {
  std::stable_sort(atoms.begin(), atoms.end(),
                   [](const Atom& a, const Atom& b) { return a.value < b.value; });
  if (keep == Tail::upper) std::reverse(atoms.begin(), atoms.end());
  double total = 0.0;
  for (const auto& a : atoms) total += a.mass;
  double room = share * total;
  std::vector<Atom> kept;
  for (const auto& a : atoms) {
    if (room <= 0.0) break;
    const double take = std::min(a.mass, room);
    kept.push_back({a.value, take});
    room -= take;
  }
  return kept;
}

inline double atom_mean(const std::vector<Atom>& atoms) {
  double s = 0.0, m = 0.0;
  for (const auto& a : atoms) {
    s += a.value * a.mass;
    m += a.mass;
  }
  return s / m;
}

/// Trimmed mean of a weighted atom list by explicit construction.
inline double brute_force_trimmed_mean(const std::vector<double>& values,
                                       const std::vector<double>& masses, double share, Tail keep) {
  if (values.size() > kMaxOracleAtoms) {
    throw Error(ErrorCode::SupportTooLarge,
                std::to_string(values.size()) + " atoms exceed the oracle limit of 10^4");
  }
  if (values.empty() || values.size() != masses.size()) {
    throw Error(ErrorCode::BadArgument, "atom values and masses must match and be nonempty");
  }
  if (!(share > 0.0)) throw Error(ErrorCode::BadArgument, "trimming share must be positive");
  std::vector<Atom> atoms(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) atoms[i] = {values[i], masses[i]};
  return atom_mean(shift_mass(std::move(atoms), std::min(share, 1.0), keep));
}

namespace detail {

inline void collect_atoms(const OutcomeLaw& law, double weight, std::vector<Atom>& out) {
  if (!law.discrete()) {
    throw Error(ErrorCode::BadArgument, "oracle needs discrete stratum laws (see discretize)");
  }
  const auto* a = static_cast<const AtomLaw*>(law.impl());
  for (std::size_t i = 0; i < a->values().size(); ++i) {
    out.push_back({a->values()[i], weight * a->weights()[i]});
  }
}

}  // namespace detail

/// Trimming bounds of a DGP with discrete stratum laws, computed from the
/// atoms alone: the treated-selected atoms are pooled over the S1 = 1
/// strata and the lowest / highest theta q0 share is retained.
inline PopulationBounds brute_force_bounds(const DgpSpec& dgp, double theta_L) {
  std::vector<Atom> treated, control;
  for (int s0 = 0; s0 < 2; ++s0) {
    if (dgp.at(1, s0).prob > 0) detail::collect_atoms(dgp.at(1, s0).y1, dgp.at(1, s0).prob, treated);
  }
  for (int s1 = 0; s1 < 2; ++s1) {
    if (dgp.at(s1, 1).prob > 0) detail::collect_atoms(dgp.at(s1, 1).y0, dgp.at(s1, 1).prob, control);
  }
  if (treated.size() + control.size() > kMaxOracleAtoms) {
    throw Error(ErrorCode::SupportTooLarge, std::to_string(treated.size() + control.size()) +
                                                " atoms exceed the oracle limit of 10^4");
  }
  if (treated.empty() || control.empty()) {
    throw Error(ErrorCode::DegenerateSelection, "a selected arm has no atoms");
  }
  const double p_s1 = dgp.p_s1();
  const double p_s0 = dgp.p_s0();
  const double q0 = p_s0 / p_s1;
  const double theta_F = 1.0 + 1.0 / q0 - 1.0 / p_s0;
  const double theta = std::max(theta_L, theta_F);
  const double share = std::min(1.0, theta * q0);
  const double eta = atom_mean(control);
  PopulationBounds b;
  b.assumption_set = theta_L == 1.0 ? AssumptionSet::lee : AssumptionSet::stochastic;
  b.theta = theta;
  b.trim_share = share;
  const auto lo = shift_mass(treated, share, Tail::lower);
  const auto hi = shift_mass(treated, share, Tail::upper);
  b.lower = atom_mean(lo) - eta;
  b.upper = atom_mean(hi) - eta;
  b.lower_quantile = lo.back().value;
  b.upper_quantile = hi.back().value;
  return b;
}

/// Oracle bounds of a finite sample: every observation is an atom of equal
/// mass. Equals the sample trimmed-mean estimator whenever the trimming
/// share times the treated-selected count is an integer and values are
/// distinct.
inline PopulationBounds brute_force_bounds(const SelectionSample& sample, double theta_L) {
  require_selected_cells(sample);
  const auto prim = identified_primitives(sample, theta_L);
  const auto treated = sample.outcomes(true);
  const auto control = sample.outcomes(false);
  if (treated.size() + control.size() > kMaxOracleAtoms) {
    throw Error(ErrorCode::SupportTooLarge, "sample exceeds the oracle limit of 10^4 atoms");
  }
  std::vector<Atom> t(treated.size()), c(control.size());
  for (std::size_t i = 0; i < treated.size(); ++i) t[i] = {treated[i], 1.0};
  for (std::size_t i = 0; i < control.size(); ++i) c[i] = {control[i], 1.0};
  const double share = std::min(1.0, prim.theta * prim.q0);
  const double eta = atom_mean(c);
  PopulationBounds b;
  b.theta = prim.theta;
  b.trim_share = share;
  const auto lo = shift_mass(t, share, Tail::lower);
  const auto hi = shift_mass(t, share, Tail::upper);
  b.lower = atom_mean(lo) - eta;
  b.upper = atom_mean(hi) - eta;
  b.lower_quantile = lo.back().value;
  b.upper_quantile = hi.back().value;
  return b;
}

}  // namespace smb
