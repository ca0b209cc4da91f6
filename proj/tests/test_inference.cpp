#include <gtest/gtest.h>

#include <cstdlib>

#include "smbounds/identify.hpp"
#include "smbounds/inference.hpp"
#include "smbounds/kde.hpp"
#include "smbounds/simlab.hpp"

using namespace smb;

namespace {

double im_equation(double c, double w, double level) {
  return normal_cdf(c + w) - normal_cdf(-c) - level;
}

// Grid search for the critical value, independent of the bisection.
double im_grid(double w, double level) {
  double best = 0.0, gap = 1e300;
  for (double c = 1.6; c <= 2.0; c += 1e-7) {
    const double g = std::abs(im_equation(c, w, level));
    if (g < gap) {
      gap = g;
      best = c;
    }
  }
  return best;
}

SelectionSample running_sample(std::size_t n, std::uint64_t seed) {
  return draw_sample(running_example_dgp(), n, seed);
}

}  // namespace

// ---------------------------------------------------------------------------
// Kernel density

TEST(Kde, KernelAtCenter) {
  const std::vector<double> v{0.0}, at{0.0};
  const auto r = kde(v, at, {Kernel::gaussian, BandwidthRule::fixed, 1.0});
  EXPECT_NEAR(r.density[0], 0.39894, 1e-5);
}

TEST(Kde, AverageOfTwoKernels) {
  const std::vector<double> v{-1.0, 1.0}, at{0.0};
  const auto r = kde(v, at, {Kernel::gaussian, BandwidthRule::fixed, 1.0});
  EXPECT_NEAR(r.density[0], 0.24197, 1e-5);
}

TEST(Kde, ConsistentOnNormalDraws) {
  CounterRng rng(1);
  std::vector<double> v(100000);
  for (double& x : v) x = rng.normal();
  const std::vector<double> at{0.0};
  EXPECT_NEAR(kde(v, at).density[0], 0.39894, 0.01);
  EXPECT_NEAR(kde(v, at, {Kernel::epanechnikov}).density[0], 0.39894, 0.01);
  EXPECT_NEAR(kde(v, at, {Kernel::gaussian, BandwidthRule::sheather_jones}).density[0], 0.39894, 0.01);
}

TEST(Kde, EpanechnikovHasUnitVariance) {
  const double m2 = integrate([](double u) { return u * u * kernel_value(Kernel::epanechnikov, u); },
                              -std::sqrt(5.0), std::sqrt(5.0));
  const double m0 = integrate([](double u) { return kernel_value(Kernel::epanechnikov, u); },
                              -std::sqrt(5.0), std::sqrt(5.0));
  const double r = integrate([](double u) { return std::pow(kernel_value(Kernel::epanechnikov, u), 2); },
                             -std::sqrt(5.0), std::sqrt(5.0));
  EXPECT_NEAR(m0, 1.0, 1e-10);
  EXPECT_NEAR(m2, 1.0, 1e-10);
  EXPECT_NEAR(r, kernel_roughness(Kernel::epanechnikov), 1e-10);
}

TEST(Kde, SilvermanFormula) {
  const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  // sd = 3.02765, type-7 IQR = 4.5 -> 4.5/1.34 = 3.35821; min is the sd.
  EXPECT_NEAR(bandwidth_silverman(v), 0.9 * 3.0276503540974917 * std::pow(10.0, -0.2), 1e-12);
}

TEST(Kde, SheatherJonesNearReferenceScale) {
  CounterRng rng(2);
  std::vector<double> v(2000);
  for (double& x : v) x = rng.normal();
  const double sj = bandwidth_sheather_jones(v);
  // Normal reference: the optimal AMISE bandwidth is 1.06 n^(-1/5).
  EXPECT_NEAR(sj / (1.06 * std::pow(2000.0, -0.2)), 1.0, 0.2);
}

TEST(Kde, BadBandwidth) {
  const std::vector<double> v{1.0, 1.0, 1.0}, at{0.0};
  EXPECT_THROW(kde(v, at), Error);
  try {
    kde(v, at, {Kernel::gaussian, BandwidthRule::fixed, -1.0});
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadBandwidth);
  }
}

// ---------------------------------------------------------------------------
// Imbens-Manski

TEST(ImbensManski, PointIdentifiedIsTwoSided) {
  const auto r = imbens_manski_ci(1.0, 1.0, 2.0, 2.0, 100.0, 0.95);
  EXPECT_NEAR(r.critical_value, 1.95996, 1e-4);
  EXPECT_NEAR(r.lo, 1.0 - 1.959964 * 0.2, 1e-5);
}

TEST(ImbensManski, WideIntervalIsOneSided) {
  const auto r = imbens_manski_ci(0.0, 100.0, 1.0, 1.0, 100.0, 0.95);
  EXPECT_NEAR(r.critical_value, 1.64485, 1e-4);
}

TEST(ImbensManski, IntermediateMatchesGridSearch) {
  // width = se / sqrt(n) gives a normalized width of one.
  const double n = 400.0, sd = 2.0;
  const auto r = imbens_manski_ci(0.0, sd / std::sqrt(n), sd, sd, n, 0.95);
  EXPECT_NEAR(r.critical_value, im_grid(1.0, 0.95), 1e-6);
  EXPECT_NEAR(im_equation(r.critical_value, 1.0, 0.95), 0.0, 1e-10);
}

TEST(ImbensManski, DecreasingAndBounded) {
  double prev = 10.0;
  for (double w = 0.0; w <= 6.0; w += 0.25) {
    const double c = imbens_manski_critical_value(w, 0.95);
    EXPECT_LE(c, prev + 1e-12);
    EXPECT_GE(c, 1.6448536 - 1e-6);
    EXPECT_LE(c, 1.9599640 + 1e-6);
    if (w > 0) EXPECT_LT(c, prev);
    prev = c;
  }
}

TEST(ImbensManski, ContainsPointAndZeroSe) {
  const auto r = imbens_manski_ci(-0.3, 0.7, 0.5, 1.5, 50.0, 0.9);
  EXPECT_LE(r.lo, -0.3);
  EXPECT_GE(r.hi, 0.7);
  const auto z = imbens_manski_ci(-0.3, 0.7, 0.0, 0.0, 50.0, 0.9);
  EXPECT_EQ(z.lo, -0.3);
  EXPECT_EQ(z.hi, 0.7);
  EXPECT_THROW(imbens_manski_ci(1.0, 0.0, 1.0, 1.0, 1.0, 0.95), Error);
}

// ---------------------------------------------------------------------------
// Variance formulas

TEST(Variance, SymmetryScalesAsOneOverN) {
  const auto p = make_primitives(0.5, 0.775, 0.5, 0.0, 0.95);
  const auto a = variance_symmetry(p, 0.95, 0.3, 0.2, 0.5, 1000);
  const auto b = variance_symmetry(p, 0.95, 0.3, 0.2, 0.5, 2000);
  EXPECT_NEAR(b.se_lower() * b.se_lower(), a.se_lower() * a.se_lower() / 2.0, 1e-15);
  EXPECT_LT(a.omega_L, a.omega_U);  // higher density, smaller variance
  EXPECT_THROW(variance_symmetry(p, 0.95, 0.0, 0.2, 0.5, 1000), Error);
}

TEST(Variance, SymmetryHandAlgebra) {
  const auto p = make_primitives(0.5, 0.775, 0.5, 0.0, 0.95);
  const double f = 0.3;
  const auto v = variance_symmetry(p, 0.95, f, f, 0.5, 1000);
  const double p11 = 0.775 * 0.5, q = 0.5 / 0.775;
  const double psi1 = 0.775 * (1 - 0.775) * 0.5 / p11;
  const double psi2 = 0.5 * 0.5 * 1.0 * 0.5 / p11;
  const double l = 0.95 * q / 2;
  const double expect = (l * (1 - l) + l * l * psi1 + 0.95 * 0.95 / 4 * psi2) / (f * f * p11);
  EXPECT_NEAR(v.omega_L, expect, 1e-12);
  EXPECT_NEAR(v.omega_C, 0.5 / 0.25, 1e-12);
}

TEST(Variance, NoSymmetryReducesToLeeAtThetaOne) {
  CounterRng rng(3);
  for (int t = 0; t < 100; ++t) {
    const double pd1 = 0.2 + 0.6 * rng.uniform();
    const double p1 = 0.3 + 0.7 * rng.uniform();
    const double alpha = p1 * (0.2 + 0.8 * rng.uniform());
    const auto p = make_primitives(alpha, p1, pd1, 0.0, 1.0);
    const TrimmedStats lo{rng.normal(), rng.normal(), rng.uniform() * 3};
    const TrimmedStats hi{rng.normal(), rng.normal(), rng.uniform() * 3};
    const auto v = variance_nosymmetry(p, 1.0, lo, hi, 1.0, 100);
    const double lee_lo = lee_variance(lo.variance, lo.quantile, lo.mean, p1 * pd1, 1.0 - p.q0, alpha,
                                       p1, pd1);
    const double lee_hi = lee_variance(hi.variance, hi.quantile, hi.mean, p1 * pd1, 1.0 - p.q0, alpha,
                                       p1, pd1);
    EXPECT_NEAR(v.omega_L, lee_lo, 1e-10 * std::max(1.0, lee_lo));
    EXPECT_NEAR(v.omega_U, lee_hi, 1e-10 * std::max(1.0, lee_hi));
  }
}

TEST(Variance, NoSymmetryDegenerateOutcome) {
  const auto p = make_primitives(0.5, 0.775, 0.5, 0.0, 0.95);
  const TrimmedStats t{2.0, 1.0, 0.0};
  const auto v = variance_nosymmetry(p, 0.95, t, t, 0.0, 10);
  const double share = 0.95 * p.q0;
  EXPECT_NEAR(v.omega_L, (1.0 - share) / (p.p_s1_and_d1() * share) + v.omega_Q, 1e-12);
}

// ---------------------------------------------------------------------------
// Sandwich covariance

TEST(GammaCov, SymmetricPsdAndMatchesVarianceFormula) {
  CounterRng rng(4);
  for (int t = 0; t < 50; ++t) {
    const double pd1 = 0.2 + 0.6 * rng.uniform();
    const double p1 = 0.3 + 0.7 * rng.uniform();
    const double alpha = p1 * (0.3 + 0.7 * rng.uniform());
    const double th = 0.5 + 0.5 * rng.uniform();
    const auto p = make_primitives(alpha, p1, pd1, 0.0, th);
    const double fL = 0.05 + rng.uniform(), fF = 0.05 + rng.uniform(), cv = 0.1 + rng.uniform();
    const auto g = gamma_covariance_lower(p, th, fL, fF, cv);
    EXPECT_LT((g.Omega - g.Omega.transpose()).norm(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g.Omega);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8);
    const auto v = variance_symmetry(p, th, fL, fL, cv, 1);
    EXPECT_NEAR(g.branch_variance(0), v.omega_L + v.omega_C, 1e-6 * (v.omega_L + v.omega_C));
    const auto d = gamma_covariance_lower(p, th, fL, fF, cv, SigmaForm::printed_diagonal);
    EXPECT_NEAR(d.branch_variance(0), v.omega_L + v.omega_C, 1e-6 * (v.omega_L + v.omega_C));
    for (int k = 0; k < 5; ++k) EXPECT_GE(g.Omega(k, k), 0.0);
  }
}

TEST(GammaCov, UpperTailMatchesOmegaU) {
  const auto p = make_primitives(0.5, 0.775, 0.5, 0.3, 0.9);
  const std::array<QuantileMoment, 1> m{QuantileMoment{Tail::upper, Level::chosen, 0.4}};
  const auto g = gamma_covariance(p, 0.9, m, 0.5);
  const auto v = variance_symmetry(p, 0.9, 0.7, 0.4, 0.5, 1);
  EXPECT_NEAR(g.branch_variance(0), v.omega_U + v.omega_C, 1e-9);
}

TEST(GammaCov, IllConditionedThrows) {
  const auto p = make_primitives(0.5, 0.775, 0.5, 0.0, 0.95);
  try {
    gamma_covariance_lower(p, 0.95, 1e-13, 0.3, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularMatrix);
  }
  EXPECT_THROW(gamma_covariance_lower(p, 0.95, 0.0, 0.3, 0.5), Error);
}

TEST(GammaCov, MonteCarloCovarianceOfQuantiles) {
  // Unknown case on the running example: theta_L = 0.3 < theta_F = 0.55.
  const auto dgp = running_example_dgp();
  const double th = 0.3;
  const auto prim = population_primitives(dgp, th);
  const auto law = treated_selected_law(dgp);
  const double lL = th * prim.q0 / 2, lF = prim.theta_F * prim.q0 / 2;
  const auto g = gamma_covariance_lower(prim, th, law.pdf(law.quantile(lL)), law.pdf(law.quantile(lF)),
                                        0.5);
  const std::size_t n = 5000, reps = 2000;
  std::vector<double> a(reps), b(reps);
  parallel_for(reps, [&](std::size_t r) {
    const auto s = draw_sample(dgp, n, 77, r);
    const auto e = estimate_unknown(s, th, true);
    a[r] = e.lower.gamma_L;
    b[r] = e.lower.gamma_F;
  });
  double ma = 0, mb = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    ma += a[r] / reps;
    mb += b[r] / reps;
  }
  double vaa = 0, vbb = 0, vab = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    vaa += (a[r] - ma) * (a[r] - ma) / (reps - 1);
    vbb += (b[r] - mb) * (b[r] - mb) / (reps - 1);
    vab += (a[r] - ma) * (b[r] - mb) / (reps - 1);
  }
  const double N = static_cast<double>(n);
  EXPECT_NEAR(vaa / (g.Omega(0, 0) / N), 1.0, 0.15);
  EXPECT_NEAR(vbb / (g.Omega(1, 1) / N), 1.0, 0.15);
  EXPECT_NEAR(vab / (g.Omega(0, 1) / N), 1.0, 0.15);
}

// ---------------------------------------------------------------------------
// Gaussian max

TEST(GaussianMax, PerfectlyCorrelatedBranchesCollapse) {
  BranchEstimates b;
  b.n = 1000;
  b.value = {0.2, 0.2, 1.0, 1.0};
  const double s2 = 0.01;
  b.cov << s2, s2, 0, 0, s2, s2, 0, 0, 0, 0, s2, s2, 0, 0, s2, s2;
  const auto r = gaussian_max_ci(b, 0.95, 200000, 3);
  // Two independent one-sided sides: Phi(k)^2 = 0.95.
  const double k = normal_quantile(std::sqrt(0.95));
  EXPECT_NEAR(r.critical_value, k, 0.02);
  EXPECT_NEAR(r.lo, 0.2 - k * 0.1, 0.003);
  EXPECT_NEAR(r.hi, 1.0 + k * 0.1, 0.003);
  EXPECT_LE(*r.median_unbiased_lower, 0.2);
  EXPECT_GE(*r.median_unbiased_upper, 1.0);
}

TEST(GaussianMax, DominantBranchDecides) {
  BranchEstimates b;
  b.n = 5000;
  b.value = {0.0, 1.0, 3.0, 2.0};  // F dominates both sides by 10 SDs
  b.cov = Eigen::Matrix4d::Identity() * 0.01;
  const auto r = gaussian_max_ci(b, 0.95, 100000, 4);
  const double k = normal_quantile(std::sqrt(0.95));
  EXPECT_NEAR(r.lo, 1.0 - k * 0.1, 0.003);
  EXPECT_NEAR(r.hi, 2.0 + k * 0.1, 0.003);
}

TEST(GaussianMax, DeterministicAcrossThreads) {
  BranchEstimates b;
  b.n = 2000;
  b.value = {0.0, 0.05, 1.0, 0.97};
  b.cov << 0.01, 0.005, 0.001, 0, 0.005, 0.012, 0, 0.001, 0.001, 0, 0.02, 0.01, 0, 0.001, 0.01, 0.015;
  setenv("SMBOUNDS_THREADS", "1", 1);
  const auto a = gaussian_max_ci(b, 0.9, 20000, 5);
  setenv("SMBOUNDS_THREADS", "4", 1);
  const auto c = gaussian_max_ci(b, 0.9, 20000, 5);
  unsetenv("SMBOUNDS_THREADS");
  EXPECT_EQ(a.lo, c.lo);
  EXPECT_EQ(a.hi, c.hi);
  EXPECT_LE(a.lo, 0.05);
  EXPECT_GE(a.hi, 0.97);
  EXPECT_THROW(gaussian_max_ci(b, 0.9, 5000, 5), Error);
}

// ---------------------------------------------------------------------------
// Branch covariances from data

TEST(Branches, SymmetryBranchMatchesVarianceFormula) {
  const auto s = running_sample(4000, 5);
  const double th = 0.95;
  const auto br = branch_estimates_symmetry(s, th);
  const auto v = variance_symmetry(s, th);
  EXPECT_NEAR(br.cov(0, 0), v.se_lower() * v.se_lower(), 1e-6 * br.cov(0, 0));
  EXPECT_NEAR(br.cov(2, 2), v.se_upper() * v.se_upper(), 1e-6 * br.cov(2, 2));
}

TEST(Branches, InfluenceFunctionMatchesTrimmedFormula) {
  const auto s = running_sample(20000, 6);
  const double th = 0.95;
  const auto br = branch_estimates_nosymmetry(s, th);
  const auto v = variance_nosymmetry(s, th);
  EXPECT_NEAR(br.cov(0, 0) / (v.se_lower() * v.se_lower()), 1.0, 0.05);
  EXPECT_NEAR(br.cov(2, 2) / (v.se_upper() * v.se_upper()), 1.0, 0.05);
}

// ---------------------------------------------------------------------------
// Bootstrap and end to end

TEST(Bootstrap, DegenerateSampleHasZeroWidth) {
  std::vector<Record> recs;
  for (int i = 0; i < 100; ++i) recs.push_back({1.5, true, i % 2 == 0, std::nullopt});
  const SelectionSample s(recs);
  auto est = [](const SelectionSample& x) { return estimate_known_nosymmetry(x, 1.0).bounds; };
  const auto r = bootstrap_ci(s, est, 0.95, 200, 1);
  EXPECT_EQ(*r.se_lower, 0.0);
  EXPECT_EQ(r.lo, 0.0);
  EXPECT_EQ(r.hi, 0.0);
}

TEST(Bootstrap, SameSeedBitIdentical) {
  const auto s = running_sample(1000, 7);
  auto est = [](const SelectionSample& x) { return estimate_known_nosymmetry(x, 0.95).bounds; };
  const auto a = bootstrap_ci(s, est, 0.95, 200, 11);
  const auto b = bootstrap_ci(s, est, 0.95, 200, 11);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  EXPECT_EQ(*a.percentile_lo, *b.percentile_lo);
  EXPECT_THROW(bootstrap_ci(s, est, 0.95, 100, 11), Error);
}

TEST(Bootstrap, SeNearAnalytic) {
  const auto s = running_sample(5000, 8);
  auto est = [](const SelectionSample& x) { return estimate_known_nosymmetry(x, 0.95).bounds; };
  const auto r = bootstrap_ci(s, est, 0.95, 2000, 12);
  const auto v = variance_nosymmetry(s, 0.95);
  EXPECT_NEAR(*r.se_lower / v.se_lower(), 1.0, 0.15);
  EXPECT_NEAR(*r.se_upper / v.se_upper(), 1.0, 0.15);
}

TEST(Infer, IntervalContainsEstimateOnEveryPath) {
  const auto s = running_sample(3000, 9);
  for (bool sym : {false, true}) {
    for (double th : {0.3, 0.95, 1.0}) {
      for (bool flip : {false, true}) {
        InferenceOptions o;
        o.flags.symmetry = sym;
        const auto res = infer_bounds(flip ? flip_direction(s) : s, th, o);
        ASSERT_TRUE(res.ci.has_value());
        EXPECT_LE(res.ci->lo, res.bounds.lower);
        EXPECT_GE(res.ci->hi, res.bounds.upper);
        EXPECT_GT(*res.bounds.se_lower, 0.0);
        EXPECT_GT(*res.bounds.se_upper, 0.0);
        EXPECT_EQ(res.known_case, th > 0.56);
      }
    }
  }
}

TEST(Infer, FlippedSwapsStandardErrors) {
  const auto s = running_sample(3000, 10);
  std::vector<Record> recs = s.records();
  for (auto& r : recs) r.d = !r.d;
  const auto plain = infer_bounds(SelectionSample(recs), 0.95);
  const auto flipped = infer_bounds(flip_direction(s), 0.95);
  EXPECT_NEAR(*flipped.bounds.se_lower, *plain.bounds.se_upper, 1e-12);
  EXPECT_NEAR(*flipped.bounds.se_upper, *plain.bounds.se_lower, 1e-12);
  EXPECT_NEAR(flipped.ci->lo, -plain.ci->hi, 1e-12);
}

TEST(Infer, CovariateAdjustedUsesBootstrap) {
  const auto s = running_sample(2000, 11);
  std::vector<Record> recs = s.records();
  for (std::size_t i = 0; i < recs.size(); ++i) recs[i].w = i % 2 ? "x" : "y";
  InferenceOptions o;
  o.flags.case_choice = CaseChoice::known;
  const auto r = infer_covariate_adjusted(SelectionSample(recs), 0.95, o);
  EXPECT_EQ(r.ci->method, CiMethod::bootstrap);
  EXPECT_LE(r.ci->lo, r.bounds.lower);
  EXPECT_GE(r.ci->hi, r.bounds.upper);
}
