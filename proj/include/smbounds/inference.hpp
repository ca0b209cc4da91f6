#pragma once

// Asymptotic variances of the bound estimators, the sandwich covariance of
// the quantile-moment systems, and three interval constructions:
// Imbens-Manski intervals for the parameter, a simulated Gaussian-max
// interval for the identified region in the unknown case, and a
// nonparametric bootstrap.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "smbounds/core.hpp"
#include "smbounds/error.hpp"
#include "smbounds/estimate.hpp"
#include "smbounds/kde.hpp"
#include "smbounds/numeric.hpp"
#include "smbounds/parallel.hpp"
#include "smbounds/rng.hpp"

namespace smb {

// ---------------------------------------------------------------------------
// Variance components

struct VarianceComponents {
  double omega_L = 0.0;
  double omega_U = 0.0;
  double omega_C = 0.0;
  double psi1 = 0.0;
  double psi2 = 0.0;
  double omega_Q = 0.0;  // trimmed-mean estimator only
  double f1_at_lower_q = 0.0;
  double f1_at_upper_q = 0.0;
  double bandwidth = 0.0;
  std::size_t n = 0;

  double se_lower() const { return std::sqrt((omega_L + omega_C) / static_cast<double>(n)); }
  double se_upper() const { return std::sqrt((omega_U + omega_C) / static_cast<double>(n)); }
};

/// Quantile (symmetry) estimator. `theta` is the trimming multiplier used by
/// the estimator; densities are those of the treated-selected outcome at
/// the two estimated quantiles.
inline VarianceComponents variance_symmetry(const IdentifiedPrimitives& p, double theta,
                                            double f_lower, double f_upper, double control_var,
                                            std::size_t n) {
  if (!(f_lower > 0.0) || !(f_upper > 0.0)) {
    throw Error(ErrorCode::ZeroDensity, "density at a trimming quantile is not positive");
  }
  const double p11 = p.p_s1_and_d1();
  const double pd1 = p.p_d1;
  const double pd0 = 1.0 - p.p_d1;
  if (!(p11 > 0.0) || !(pd0 > 0.0)) throw Error(ErrorCode::DivideByZero, "empty selected cell");
  VarianceComponents v;
  v.n = n;
  v.f1_at_lower_q = f_lower;
  v.f1_at_upper_q = f_upper;
  const double a_over_q = p.alpha0 / p.q0;
  v.psi1 = a_over_q * (1.0 - a_over_q) * pd1 / p11;
  v.psi2 = p.alpha0 * (1.0 - p.alpha0) * (pd1 / pd0) * (pd1 / pd0) * pd0 / p11;
  const double l = theta * p.q0 / 2.0;
  const double core = l * (1.0 - l) + theta * theta * p.q0 * p.q0 / 4.0 * v.psi1 +
                      theta * theta / 4.0 * v.psi2;
  v.omega_L = core / (f_lower * f_lower * p11);
  v.omega_U = core / (f_upper * f_upper * p11);
  v.omega_C = control_var / p.p_s1_and_d0();
  return v;
}

/// Moments of the kept part of a trimmed tail.
struct TrimmedStats {
  double quantile = 0.0;
  double mean = 0.0;
  double variance = 0.0;
};

/// Trimmed-mean (no symmetry) estimator.
inline VarianceComponents variance_nosymmetry(const IdentifiedPrimitives& p, double theta,
                                              const TrimmedStats& lower, const TrimmedStats& upper,
                                              double control_var, std::size_t n) {
  const double p11 = p.p_s1_and_d1();
  const double pd1 = p.p_d1;
  const double pd0 = 1.0 - p.p_d1;
  const double share = theta * p.q0;
  if (!(p11 > 0.0) || !(pd0 > 0.0) || !(share > 0.0)) {
    throw Error(ErrorCode::DivideByZero, "empty selected cell or zero trimming share");
  }
  VarianceComponents v;
  v.n = n;
  const double a_over_q = p.alpha0 / p.q0;
  v.omega_Q = (1.0 - a_over_q) / (pd1 * a_over_q) + (1.0 - p.alpha0) / (p.alpha0 * pd0);
  auto omega = [&](const TrimmedStats& t) {
    const double gap2 = (t.quantile - t.mean) * (t.quantile - t.mean);
    return (t.variance + gap2 * (1.0 - share)) / (p11 * share) + gap2 * v.omega_Q;
  };
  v.omega_L = omega(lower);
  v.omega_U = omega(upper);
  v.omega_C = control_var / p.p_s1_and_d0();
  return v;
}

/// Classical trimming-bound variance written in terms of the trimming
/// proportion p = 1 - q0 and the two selection rates s0, s1.
inline double lee_variance(double trimmed_var, double quantile, double trimmed_mean,
                           double p_sd, double p_trim, double s0, double s1, double p_d1) {
  const double gap = quantile - trimmed_mean;
  const double kept = 1.0 - p_trim;
  const double vp = kept * kept * ((1.0 - s0) / ((1.0 - p_d1) * s0) + (1.0 - s1) / (p_d1 * s1));
  return trimmed_var / (p_sd * kept) + gap * gap * p_trim / (p_sd * kept) +
         (gap / kept) * (gap / kept) * vp;
}

/// Sample version of variance_symmetry at the known-case estimates.
inline VarianceComponents variance_symmetry(const SelectionSample& sample, double theta_L,
                                            const KdeOptions& kopt = {}) {
  const auto a = arm_data(sample, theta_L);
  const double r = std::clamp(theta_L * a.prim.q0 / 2.0, 0.0, 0.5);
  const std::array<double, 2> at{sorted_quantile(a.treated, r), sorted_upper_quantile(a.treated, r)};
  const auto dens = kde(a.treated, at, kopt);
  auto v = variance_symmetry(a.prim, theta_L, dens.density[0], dens.density[1], a.control_variance,
                             a.n);
  v.bandwidth = dens.bandwidth;
  return v;
}

/// Sample version of variance_nosymmetry at the known-case estimates.
inline VarianceComponents variance_nosymmetry(const SelectionSample& sample, double theta_L) {
  const auto a = arm_data(sample, theta_L);
  const double r = std::min(1.0, theta_L * a.prim.q0);
  const auto lo = sorted_trimmed_mean(a.treated, r, Tail::lower);
  const auto hi = sorted_trimmed_mean(a.treated, r, Tail::upper);
  return variance_nosymmetry(a.prim, theta_L, {lo.quantile, lo.mu, lo.variance},
                             {hi.quantile, hi.mu, hi.variance}, a.control_variance, a.n);
}

// ---------------------------------------------------------------------------
// Sandwich covariance of the quantile-moment systems

/// How the covariance of two quantile moments is filled in.
enum class SigmaForm {
  joint,             // P11 (min(c_j, c_k) - c_j c_k), the exact covariance
  printed_diagonal,  // off-diagonal quantile covariances set to zero
};

enum class Level { chosen, frechet };

/// One quantile moment (1{Y <= gamma} - c(q, alpha)) S D.
struct QuantileMoment {
  Tail tail = Tail::lower;
  Level level = Level::chosen;
  double density = 0.0;  // treated-selected density at the quantile
};

struct GammaCovariance {
  Eigen::MatrixXd G;
  Eigen::MatrixXd Sigma;
  Eigen::MatrixXd Omega;  // asymptotic covariance of sqrt(n)(gamma - gamma0)
  std::size_t quantiles = 0;  // parameters 0..quantiles-1; then q, alpha, eta

  std::size_t q_index() const { return quantiles; }
  std::size_t alpha_index() const { return quantiles + 1; }
  std::size_t eta_index() const { return quantiles + 2; }

  /// Asymptotic variance of gamma_k - eta.
  double branch_variance(std::size_t k) const {
    const auto e = eta_index();
    return Omega(k, k) + Omega(e, e) - 2.0 * Omega(k, e);
  }
};

namespace detail {

/// CDF level c and its gradient (dc/dq, dc/dalpha).
inline std::array<double, 3> moment_level(const QuantileMoment& m, double theta_L, double q,
                                          double alpha) {
  double l, dq, da;
  if (m.level == Level::chosen) {
    l = theta_L * q / 2.0;
    dq = theta_L / 2.0;
    da = 0.0;
  } else {
    l = (1.0 + q * (1.0 - 1.0 / alpha)) / 2.0;
    dq = (1.0 - 1.0 / alpha) / 2.0;
    da = q / (2.0 * alpha * alpha);
  }
  if (m.tail == Tail::lower) return {l, dq, da};
  return {1.0 - l, -dq, -da};
}

}  // namespace detail

/// Builds G, Sigma and G^{-1} Sigma G^{-T} for quantile moments followed by
/// the (q, alpha, eta) moments (qS - alpha)D, (S - alpha)(1 - D) and
/// (Y - eta) S (1 - D).
inline GammaCovariance gamma_covariance(const IdentifiedPrimitives& p, double theta_L,
                                        std::span<const QuantileMoment> moments,
                                        double control_var, SigmaForm form = SigmaForm::joint) {
  const std::size_t k = moments.size();
  const std::size_t m = k + 3;
  const double p11 = p.p_s1_and_d1();
  const double pd1 = p.p_d1;
  const double pd0 = 1.0 - p.p_d1;
  const double q = p.q0;
  const double alpha = p.alpha0;

  GammaCovariance out;
  out.quantiles = k;
  out.G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  out.Sigma = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  const auto iq = static_cast<Eigen::Index>(k);
  const auto ia = iq + 1;
  const auto ie = iq + 2;
  std::vector<double> levels(k);
  for (std::size_t j = 0; j < k; ++j) {
    const auto ij = static_cast<Eigen::Index>(j);
    const auto [c, dq, da] = detail::moment_level(moments[j], theta_L, q, alpha);
    levels[j] = c;
    out.G(ij, ij) = moments[j].density * p11;
    out.G(ij, iq) = -dq * p11;
    out.G(ij, ia) = -da * p11;
  }
  out.G(iq, iq) = p11;
  out.G(iq, ia) = -pd1;
  out.G(ia, ia) = -pd0;
  out.G(ie, ie) = -p.p_s1_and_d0();

  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i != j && form == SigmaForm::printed_diagonal) continue;
      const double ci = clamp01(levels[i]);
      const double cj = clamp01(levels[j]);
      out.Sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          p11 * (std::min(ci, cj) - ci * cj);
    }
  }
  out.Sigma(iq, iq) = alpha * (q - alpha) * pd1;
  out.Sigma(ia, ia) = alpha * (1.0 - alpha) * pd0;
  out.Sigma(ie, ie) = control_var * p.p_s1_and_d0();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.G);
  const auto& sv = svd.singularValues();
  const double cond = sv(0) / sv(sv.size() - 1);
  if (!std::isfinite(cond) || cond > 1e10) {
    throw Error(ErrorCode::SingularMatrix,
                "moment Jacobian is ill-conditioned (condition number " + std::to_string(cond) + ")");
  }
  const Eigen::MatrixXd Ginv = out.G.inverse();
  out.Omega = Ginv * out.Sigma * Ginv.transpose();
  out.Omega = 0.5 * (out.Omega + out.Omega.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.Omega, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-8 * scale) {
    throw Error(ErrorCode::SingularMatrix, "sandwich covariance is not positive semidefinite");
  }
  return out;
}

/// The five-parameter unknown-case system for the lower bound:
/// (gamma_L, gamma_F, q, alpha, eta).
inline GammaCovariance gamma_covariance_lower(const IdentifiedPrimitives& p, double theta_L,
                                              double f_L, double f_F, double control_var,
                                              SigmaForm form = SigmaForm::joint) {
  if (!(f_L > 0.0) || !(f_F > 0.0)) {
    throw Error(ErrorCode::ZeroDensity, "density at a trimming quantile is not positive");
  }
  const std::array<QuantileMoment, 2> ms{QuantileMoment{Tail::lower, Level::chosen, f_L},
                                         QuantileMoment{Tail::lower, Level::frechet, f_F}};
  return gamma_covariance(p, theta_L, ms, control_var, form);
}

// ---------------------------------------------------------------------------
// Intervals

enum class CiMethod { imbens_manski, gaussian_max, bootstrap };

constexpr std::string_view to_string(CiMethod m) {
  switch (m) {
    case CiMethod::imbens_manski: return "imbens_manski";
    case CiMethod::gaussian_max: return "gaussian_max";
    case CiMethod::bootstrap: return "bootstrap";
  }
  return "unknown";
}

struct CiResult {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
  double critical_value = 0.0;
  CiMethod method = CiMethod::imbens_manski;
  // Gaussian-max: half-median-unbiased bound estimates.
  std::optional<double> median_unbiased_lower;
  std::optional<double> median_unbiased_upper;
  // Bootstrap: standard errors and percentile endpoints.
  std::optional<double> se_lower;
  std::optional<double> se_upper;
  std::optional<double> percentile_lo;
  std::optional<double> percentile_hi;
  std::size_t failed_replicates = 0;
  std::vector<std::string> notes;
};

/// Critical value c solving Phi(c + width / max_se) - Phi(-c) = level.
inline double imbens_manski_critical_value(double width_over_se, double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::BadArgument, "level must lie in (0, 1)");
  const double a = 1.0 - level;
  const double lo = normal_quantile(1.0 - a) - 1e-6;
  const double hi = normal_quantile(1.0 - a / 2.0) + 1e-6;
  if (!std::isfinite(width_over_se)) return normal_quantile(1.0 - a);
  auto f = [&](double c) { return normal_cdf(c + width_over_se) - normal_cdf(-c) - level; };
  return bisect(f, lo, hi, 1e-12);
}

/// Interval for a partially identified parameter. `sd_*` are asymptotic
/// standard deviations, so standard errors are sd / sqrt(n); pass n = 1 to
/// supply standard errors directly.
inline CiResult imbens_manski_ci(double lower, double upper, double sd_lower, double sd_upper,
                                 double n, double level) {
  if (!(upper >= lower)) throw Error(ErrorCode::BadArgument, "lower bound exceeds upper bound");
  if (!(sd_lower >= 0.0) || !(sd_upper >= 0.0)) {
    throw Error(ErrorCode::BadArgument, "standard errors must be nonnegative");
  }
  CiResult r;
  r.level = level;
  r.method = CiMethod::imbens_manski;
  const double rn = std::sqrt(n);
  const double smax = std::max(sd_lower, sd_upper);
  if (smax == 0.0) {
    r.critical_value = normal_quantile(1.0 - (1.0 - level) / 2.0);
    r.lo = lower;
    r.hi = upper;
    return r;
  }
  r.critical_value = imbens_manski_critical_value(rn * (upper - lower) / smax, level);
  r.lo = lower - r.critical_value * sd_lower / rn;
  r.hi = upper + r.critical_value * sd_upper / rn;
  return r;
}

/// Branch values of the unknown case with their joint covariance.
/// Order: lower-L, lower-F, upper-L, upper-F. `cov` is the finite-sample
/// covariance (already divided by n).
struct BranchEstimates {
  std::array<double, 4> value{};
  Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
  std::size_t n = 0;
};

namespace detail {

inline double sorted_level(const std::vector<double>& sorted, double level) {
  const std::size_t k = order_rank(sorted.size(), level) - 1;
  return sorted[k];
}

}  // namespace detail

/// Simulated Gaussian-max interval for the identified region: the lower
/// endpoint is max over branches of (estimate - k se), the upper endpoint
/// min over branches of (estimate + k se), where k is a simulated quantile
/// of the largest standardized deviation over the branches retained by a
/// preliminary selection step. `draws` Gaussian vectors are generated in
/// blocks of 1000 on streams (seed, block).
inline CiResult gaussian_max_ci(const BranchEstimates& b, double level, std::size_t draws,
                                std::uint64_t seed) {
  if (draws < 10000) throw Error(ErrorCode::BadArgument, "need at least 10^4 draws");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::BadArgument, "level must lie in (0, 1)");
  Eigen::Matrix4d cov = 0.5 * (b.cov + b.cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(cov);
  if (eig.info() != Eigen::Success) throw Error(ErrorCode::SingularMatrix, "eigen decomposition failed");
  const double scale = std::max(1e-300, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-8 * scale) {
    throw Error(ErrorCode::SingularMatrix, "branch covariance is not positive semidefinite");
  }
  const Eigen::Matrix4d root =
      eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  std::array<double, 4> se{};
  for (int k = 0; k < 4; ++k) se[k] = std::sqrt(std::max(0.0, cov(k, k)));

  // Standardized deviations, one row per draw; lower branches enter as
  // Z / se, upper branches as -Z / se.
  constexpr std::size_t block = 1000;
  const std::size_t blocks = (draws + block - 1) / block;
  std::vector<std::array<double, 4>> dev(blocks * block);
  parallel_for(blocks, [&](std::size_t bi) {
    CounterRng rng(seed, bi);
    for (std::size_t j = 0; j < block; ++j) {
      Eigen::Vector4d z;
      for (int k = 0; k < 4; ++k) z(k) = rng.normal();
      const Eigen::Vector4d x = root * z;
      auto& row = dev[bi * block + j];
      for (int k = 0; k < 4; ++k) {
        const double sgn = k < 2 ? 1.0 : -1.0;
        row[k] = se[k] > 0.0 ? sgn * x(k) / se[k] : 0.0;
      }
    }
  });
  dev.resize(draws);

  auto critical = [&](const std::array<bool, 4>& use, double p) {
    std::vector<double> t;
    t.reserve(dev.size());
    for (const auto& row : dev) {
      double m = -kInf;
      for (int k = 0; k < 4; ++k) {
        if (use[k]) m = std::max(m, row[k]);
      }
      t.push_back(m);
    }
    std::sort(t.begin(), t.end());
    return detail::sorted_level(t, p);
  };

  // Selection of possibly binding branches.
  const double nn = std::max<double>(static_cast<double>(b.n), 3.0);
  const double gamma_n = 1.0 - 0.1 / std::log(nn);
  const double k_sel = std::max(0.0, critical({true, true, true, true}, gamma_n));
  std::array<bool, 4> use{};
  const double lo_ref = std::max(b.value[0] - k_sel * se[0], b.value[1] - k_sel * se[1]);
  const double hi_ref = std::min(b.value[2] + k_sel * se[2], b.value[3] + k_sel * se[3]);
  for (int k = 0; k < 2; ++k) use[k] = b.value[k] >= lo_ref - 2.0 * k_sel * se[k];
  for (int k = 2; k < 4; ++k) use[k] = b.value[k] <= hi_ref + 2.0 * k_sel * se[k];

  CiResult r;
  r.method = CiMethod::gaussian_max;
  r.level = level;
  r.critical_value = std::max(0.0, critical(use, level));
  const double k_half = critical(use, 0.5);
  auto lower_at = [&](double k) {
    double v = -kInf;
    for (int j = 0; j < 2; ++j) {
      if (use[j]) v = std::max(v, b.value[j] - k * se[j]);
    }
    return v;
  };
  auto upper_at = [&](double k) {
    double v = kInf;
    for (int j = 2; j < 4; ++j) {
      if (use[j]) v = std::min(v, b.value[j] + k * se[j]);
    }
    return v;
  };
  r.lo = lower_at(r.critical_value);
  r.hi = upper_at(r.critical_value);
  r.median_unbiased_lower = lower_at(k_half);
  r.median_unbiased_upper = upper_at(k_half);
  r.notes.push_back("identified-region interval from simulated Gaussian max with branch selection");
  return r;
}

/// Nonparametric bootstrap over units. Replicate b resamples with stream
/// (seed, b + 1). Standard errors are the bootstrap standard deviations of
/// the two bound estimates; the interval is Imbens-Manski with those
/// errors, and percentile endpoints are reported alongside.
inline CiResult bootstrap_ci(const SelectionSample& sample,
                             const std::function<BoundsResult(const SelectionSample&)>& estimator,
                             double level, std::size_t B, std::uint64_t seed) {
  if (B < 200) throw Error(ErrorCode::BadArgument, "bootstrap needs at least 200 replicates");
  const auto point = estimator(sample);
  const std::size_t n = sample.size();
  std::vector<std::optional<std::pair<double, double>>> reps(B);
  parallel_for(B, [&](std::size_t b) {
    CounterRng rng(seed, b + 1);
    std::vector<Record> recs;
    recs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) recs.push_back(sample.records()[rng.below(n)]);
    try {
      const auto est = estimator(SelectionSample(std::move(recs), sample.flipped()));
      reps[b] = std::make_pair(est.lower, est.upper);
    } catch (const Error&) {
      reps[b].reset();
    }
  });
  std::vector<double> lo, hi;
  for (const auto& r : reps) {
    if (!r) continue;
    lo.push_back(r->first);
    hi.push_back(r->second);
  }
  const std::size_t failed = B - lo.size();
  if (lo.size() < B * 9 / 10) {
    throw Error(ErrorCode::TooFewObservations,
                std::to_string(failed) + " of " + std::to_string(B) + " bootstrap replicates failed");
  }
  auto sd = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
  };
  const double se_lo = sd(lo);
  const double se_hi = sd(hi);
  auto r = imbens_manski_ci(point.lower, point.upper, se_lo, se_hi, 1.0, level);
  r.method = CiMethod::bootstrap;
  r.se_lower = se_lo;
  r.se_upper = se_hi;
  std::sort(lo.begin(), lo.end());
  std::sort(hi.begin(), hi.end());
  r.percentile_lo = detail::sorted_level(lo, (1.0 - level) / 2.0);
  r.percentile_hi = detail::sorted_level(hi, 1.0 - (1.0 - level) / 2.0);
  r.failed_replicates = failed;
  if (failed > 0) r.notes.push_back(std::to_string(failed) + " bootstrap replicates failed and were dropped");
  return r;
}

// ---------------------------------------------------------------------------
// Unknown-case branch covariances

/// Branch covariance of the quantile (symmetry) estimator from the
/// seven-parameter sandwich, densities by KDE at the four quantiles.
inline BranchEstimates branch_estimates_symmetry(const SelectionSample& sample, double theta_L,
                                                 const KdeOptions& kopt = {},
                                                 SigmaForm form = SigmaForm::joint) {
  const auto est = estimate_unknown(sample, theta_L, true);
  const auto a = arm_data(sample, theta_L);
  const std::array<double, 4> at{est.lower.gamma_L, est.lower.gamma_F, est.upper.gamma_L,
                                 est.upper.gamma_F};
  const auto dens = kde(a.treated, at, kopt);
  for (double f : dens.density) {
    if (!(f > 0.0)) throw Error(ErrorCode::ZeroDensity, "density at a trimming quantile is not positive");
  }
  const std::array<QuantileMoment, 4> ms{
      QuantileMoment{Tail::lower, Level::chosen, dens.density[0]},
      QuantileMoment{Tail::lower, Level::frechet, dens.density[1]},
      QuantileMoment{Tail::upper, Level::chosen, dens.density[2]},
      QuantileMoment{Tail::upper, Level::frechet, dens.density[3]}};
  const auto gc = gamma_covariance(a.prim, theta_L, ms, a.control_variance, form);
  Eigen::Matrix<double, 4, 7> A = Eigen::Matrix<double, 4, 7>::Zero();
  for (int k = 0; k < 4; ++k) {
    A(k, k) = 1.0;
    A(k, 6) = -1.0;
  }
  BranchEstimates b;
  b.n = a.n;
  b.value = {at[0] - a.prim.eta0, at[1] - a.prim.eta0, at[2] - a.prim.eta0, at[3] - a.prim.eta0};
  b.cov = A * gc.Omega * A.transpose() / static_cast<double>(a.n);
  return b;
}

/// Branch covariance of the trimmed-mean estimator from empirical influence
/// functions (estimated trimming levels included).
inline BranchEstimates branch_estimates_nosymmetry(const SelectionSample& sample, double theta_L) {
  const auto est = estimate_unknown(sample, theta_L, false);
  const auto a = arm_data(sample, theta_L);
  const double n = static_cast<double>(a.n);
  const auto& c = a.counts;
  const double pd1 = static_cast<double>(c.arm(1)) / n;
  const double pd0 = static_cast<double>(c.arm(0)) / n;
  const double p11 = static_cast<double>(c(1, 1)) / n;
  const double p01 = static_cast<double>(c(0, 1)) / n;
  const double alpha = a.prim.alpha0;
  const double p1 = a.prim.p_s1_d1;
  const double q = a.prim.q0;
  const double eta = a.prim.eta0;
  const std::array<const MuHat*, 4> mus{&*est.mu_lower_L, &*est.mu_lower_F, &*est.mu_upper_L,
                                        &*est.mu_upper_F};
  const std::array<double, 4> levels{est.lower.level_L, est.lower.level_F, est.upper.level_L,
                                     est.upper.level_F};
  const double nmin = 1.0 / static_cast<double>(c(1, 1));

  BranchEstimates b;
  b.n = a.n;
  for (int k = 0; k < 4; ++k) b.value[k] = mus[k]->mu - eta;
  Eigen::Matrix4d acc = Eigen::Matrix4d::Zero();
  for (const auto& r : sample.records()) {
    const double d = sample.trimming_arm(r) ? 1.0 : 0.0;
    const double s = r.s ? 1.0 : 0.0;
    const double y = r.s ? *r.y : 0.0;
    const double psi_a = (1.0 - d) * (s - alpha) / pd0;
    const double psi_p1 = d * (s - p1) / pd1;
    const double psi_q = q * (psi_a / alpha - psi_p1 / p1);
    const double psi_eta = s * (1.0 - d) * (y - eta) / p01;
    Eigen::Vector4d psi;
    for (int k = 0; k < 4; ++k) {
      const auto& mu = *mus[k];
      const bool frechet = k % 2 == 1;
      const double lvl = std::max(levels[k], nmin);
      const double psi_c = frechet ? (1.0 - 1.0 / alpha) * psi_q + (q / (alpha * alpha)) * psi_a
                                   : theta_L * psi_q;
      const bool kept = s > 0 && (mu.tail == Tail::lower ? y <= mu.quantile : y >= mu.quantile);
      const double core = s * d / p11 * ((kept ? y - mu.quantile : 0.0) - lvl * (mu.mu - mu.quantile)) / lvl;
      psi(k) = core + (mu.quantile - mu.mu) / lvl * psi_c - psi_eta;
    }
    acc += psi * psi.transpose();
  }
  b.cov = acc / (n * n);
  return b;
}

// ---------------------------------------------------------------------------
// End-to-end estimation with standard errors and interval

struct InferenceOptions {
  EstimatorFlags flags;
  double level = 0.95;
  KdeOptions kde;
  SigmaForm sigma_form = SigmaForm::joint;
  std::size_t gaussian_draws = 20000;
  std::size_t bootstrap = 0;  // replicates; 0 = analytic
  std::uint64_t seed = 0;
};

struct InferenceResult {
  BoundsResult bounds;
  IdentifiedPrimitives primitives;
  bool known_case = true;
  std::optional<VarianceComponents> variance;
  std::optional<BranchEstimates> branches;
  std::optional<CiResult> ci;
  std::vector<std::string> notes;
};

/// Sample size used in variance formulas.
inline std::size_t sample_n(const SelectionSample& s) { return s.size(); }

inline InferenceResult infer_bounds(const SelectionSample& sample, double theta_L,
                                    const InferenceOptions& opt = {}) {
  InferenceResult out;
  out.primitives = identified_primitives(sample, theta_L);
  out.known_case = use_known_case(sample, theta_L, opt.flags);
  const bool flipped = sample.flipped();
  auto& b = out.bounds;
  auto set_se = [&](double se_lo_trim, double se_hi_trim) {
    b.se_lower = flipped ? se_hi_trim : se_lo_trim;
    b.se_upper = flipped ? se_lo_trim : se_hi_trim;
  };

  if (opt.flags.case_choice == CaseChoice::automatic) {
    out.notes.push_back("case selection: known when theta_L >= theta_F_hat + " +
                        std::to_string(opt.flags.auto_margin));
  }
  if (out.known_case) {
    if (opt.flags.symmetry) {
      b = estimate_known_symmetry(sample, theta_L).bounds;
      if (opt.bootstrap == 0) {
        const auto v = variance_symmetry(sample, theta_L, opt.kde);
        set_se(v.se_lower(), v.se_upper());
        out.variance = v;
        out.notes.push_back(std::string("density nuisance: ") + std::string(to_string(opt.kde.kernel)) +
                            " kernel, " + std::string(to_string(opt.kde.rule)) + " bandwidth");
      }
    } else {
      b = estimate_known_nosymmetry(sample, theta_L).bounds;
      if (opt.bootstrap == 0) {
        const auto v = variance_nosymmetry(sample, theta_L);
        set_se(v.se_lower(), v.se_upper());
        out.variance = v;
      }
    }
    if (opt.bootstrap == 0) {
      out.ci = imbens_manski_ci(b.lower, b.upper, *b.se_lower, *b.se_upper, 1.0, opt.level);
    }
  } else {
    const auto est = estimate_unknown(sample, theta_L, opt.flags.symmetry);
    b = est.bounds;
    if (opt.bootstrap == 0) {
      auto br = opt.flags.symmetry ? branch_estimates_symmetry(sample, theta_L, opt.kde, opt.sigma_form)
                                   : branch_estimates_nosymmetry(sample, theta_L);
      const int kl = est.binding_lower == Branch::F ? 1 : 0;
      const int ku = est.binding_upper == Branch::F ? 3 : 2;
      set_se(std::sqrt(br.cov(kl, kl)), std::sqrt(br.cov(ku, ku)));
      auto ci = gaussian_max_ci(br, opt.level, opt.gaussian_draws, opt.seed);
      if (flipped) {
        const double lo = -ci.hi;
        const double hi = -ci.lo;
        ci.lo = lo;
        ci.hi = hi;
        const auto ml = ci.median_unbiased_lower;
        const auto mu = ci.median_unbiased_upper;
        ci.median_unbiased_lower = mu ? std::optional<double>(-*mu) : std::nullopt;
        ci.median_unbiased_upper = ml ? std::optional<double>(-*ml) : std::nullopt;
      }
      out.branches = br;
      out.ci = ci;
      out.notes.push_back("unknown case: Gaussian-max interval covers the identified region");
      if (opt.flags.symmetry) {
        out.notes.push_back(opt.sigma_form == SigmaForm::joint
                                ? "quantile moments use their joint covariance"
                                : "quantile moments use a diagonal covariance");
      }
    }
  }
  if (opt.bootstrap > 0) {
    const auto flags = opt.flags;
    const bool known = out.known_case;
    auto est_fn = [flags, known, theta_L](const SelectionSample& s) {
      auto f = flags;
      f.case_choice = known ? CaseChoice::known : CaseChoice::unknown;
      return estimate_bounds(s, theta_L, f);
    };
    auto ci = bootstrap_ci(sample, est_fn, opt.level, opt.bootstrap, opt.seed);
    b.se_lower = ci.se_lower;
    b.se_upper = ci.se_upper;
    out.ci = ci;
  }
  if (out.ci) b.ci = ConfidenceInterval{out.ci->lo, out.ci->hi, opt.level};
  return out;
}

/// Covariate-adjusted bounds with a bootstrap interval (no analytic
/// variance is available for the aggregate).
inline InferenceResult infer_covariate_adjusted(const SelectionSample& sample, double theta_L,
                                                const InferenceOptions& opt = {}) {
  InferenceResult out;
  out.primitives = identified_primitives(sample, theta_L);
  out.known_case = use_known_case(sample, theta_L, opt.flags);
  out.bounds = estimate_covariate_adjusted(sample, theta_L, opt.flags).bounds;
  const std::size_t B = std::max<std::size_t>(opt.bootstrap, 200);
  const auto flags = opt.flags;
  auto est_fn = [flags, theta_L](const SelectionSample& s) {
    return estimate_covariate_adjusted(s, theta_L, flags).bounds;
  };
  auto ci = bootstrap_ci(sample, est_fn, opt.level, B, opt.seed);
  out.bounds.se_lower = ci.se_lower;
  out.bounds.se_upper = ci.se_upper;
  out.bounds.ci = ConfidenceInterval{ci.lo, ci.hi, opt.level};
  out.ci = ci;
  out.notes.push_back("covariate-adjusted interval: bootstrap with " + std::to_string(B) +
                      " replicates");
  return out;
}

}  // namespace smb
