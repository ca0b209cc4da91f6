// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "battery.hpp"
#include "smbounds/cli.hpp"
#include "smbounds/diagnostics.hpp"
#include "smbounds/estimate.hpp"
#include "smbounds/identify.hpp"
#include "smbounds/inference.hpp"
#include "smbounds/mte.hpp"
#include "smbounds/simlab.hpp"

using namespace smb;

namespace {

struct Check {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (detail.size() < 600) detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int failures = 0;

void report(int id, const char* title, const std::function<Check()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  try {
    c = body();
  } catch (const std::exception& e) {
    c.ok = false;
    c.detail = std::string("exception: ") + e.what();
  }
  if (!c.ok) ++failures;
  std::printf("criterion %2d: %s  %s (%.1f s)%s%s\n", id, c.ok ? "PASS" : "FAIL", title, seconds_since(t0),
              c.detail.empty() ? "" : "  ", c.detail.c_str());
  std::fflush(stdout);
}

bool inside(double x, const PopulationBounds& b, double tol = 1e-9) {
  return b.lower - tol <= x && x <= b.upper + tol;
}

// Analytic asymptotic standard deviations (of sqrt(n) times the estimate)
// from population inputs.
struct PopSd {
  double lower = 0.0;
  double upper = 0.0;
};

PopSd population_sd_trim(const DgpSpec& dgp, double theta) {
  const auto prim = population_primitives(dgp, theta);
  const auto f1 = treated_selected_law(dgp);
  const double share = theta * prim.q0;
  const auto lo = f1.trimmed(share, Tail::lower), hi = f1.trimmed(share, Tail::upper);
  const double cv = control_selected_law(dgp).variance();
  const auto v = variance_nosymmetry(prim, theta, {lo.quantile, lo.mean, lo.variance},
                                     {hi.quantile, hi.mean, hi.variance}, cv, 1);
  return {std::sqrt(v.omega_L + v.omega_C), std::sqrt(v.omega_U + v.omega_C)};
}

VarianceComponents population_variance_symmetry(const DgpSpec& dgp, double theta) {
  const auto prim = population_primitives(dgp, theta);
  const auto f1 = treated_selected_law(dgp);
  const double r = theta * prim.q0 / 2.0;
  const double cv = control_selected_law(dgp).variance();
  return variance_symmetry(prim, theta, f1.pdf(f1.quantile(r)), f1.pdf(f1.quantile(1.0 - r)), cv, 1);
}

// Classical trimming bounds written out from sorted arm outcomes with the
// kept count computed in integer arithmetic.
std::pair<double, double> lee_by_hand(const SelectionSample& s) {
  std::vector<double> t, c;
  for (const auto& r : s.records()) {
    if (r.s) (r.d ? t : c).push_back(*r.y);
  }
  std::sort(t.begin(), t.end());
  const auto& n = s.counts();
  const std::size_t num = n(0, 1) * n.arm(1), den = n.arm(0) * n(1, 1);
  const std::size_t k = (num * n(1, 1) + den - 1) / den;  // ceil(q n11) with q = n01 n1 / (n0 n11)
  double lo = 0.0, hi = 0.0, eta = 0.0;
  for (std::size_t i = 0; i < k; ++i) lo += t[i];
  for (std::size_t i = t.size() - k; i < t.size(); ++i) hi += t[i];
  for (double y : c) eta += y;
  eta /= static_cast<double>(c.size());
  return {lo / static_cast<double>(k) - eta, hi / static_cast<double>(k) - eta};
}

}  // namespace

int main() {
  const auto example = running_example_dgp();

  report(1, "golden population numbers", [&] {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    const auto lee = population_bounds_lee(example);
    const auto sto = population_bounds_stochastic(example, 0.95);
    const auto sym = population_bounds_symmetry(example, 0.95);
    const auto prim = population_primitives(example, 0.95);
    c.require(std::abs(lee.lower - 0.02) <= 0.01 && std::abs(lee.upper - 1.46) <= 0.01,
              "Lee [" + num(lee.lower) + ", " + num(lee.upper) + "]");
    c.require(std::abs(sto.lower + 0.04) <= 0.01 && std::abs(sto.upper - 1.53) <= 0.01,
              "stochastic [" + num(sto.lower) + ", " + num(sto.upper) + "]");
    c.require(std::abs(prim.theta_F - 0.55) <= 1e-10, "theta_F " + num(prim.theta_F));
    c.require(std::abs(sym.lower + 0.0026) <= 0.01 && std::abs(sym.upper - 1.49) <= 0.01,
              "symmetry [" + num(sym.lower) + ", " + num(sym.upper) + "]");
    c.require(seconds_since(t0) < 5.0, "runtime");
    c.detail += (c.detail.empty() ? "" : "; ") + std::string("Lee [") + num(lee.lower) + ", " + num(lee.upper) +
                "], stochastic [" + num(sto.lower) + ", " + num(sto.upper) + "], symmetry [" + num(sym.lower) +
                ", " + num(sym.upper) + "]";
    return c;
  });

  const std::size_t kBattery = 60;
  std::vector<battery::BatteryCase> cases;
  for (std::uint64_t s = 0; s < kBattery; ++s) cases.push_back(battery::random_dgp(1000 + s));

  report(2, "validity over randomized DGPs", [&] {
    Check c;
    std::size_t checks = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const auto& k = cases[i];
      const double tau = true_tau(k.dgp);
      for (double frac : {1.0, 0.9, 0.7}) {
        const double th = k.theta_true * frac;
        c.require(inside(tau, population_bounds_stochastic(k.dgp, th)), "stochastic, case " + std::to_string(i));
        c.require(inside(tau, population_bounds_symmetry(k.dgp, th)), "symmetry, case " + std::to_string(i));
        checks += 2;
      }
    }
    if (c.ok) c.detail = std::to_string(checks) + " bound pairs over " + std::to_string(cases.size()) + " DGPs";
    return c;
  });

  report(3, "nesting of symmetry bounds", [&] {
    Check c;
    std::size_t used = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      for (double frac : {1.0, 0.85}) {
        const auto n = nesting_check(cases[i].dgp, cases[i].theta_true * frac);
        if (!n.assumption_5()) continue;
        ++used;
        c.require(n.symmetry.lower >= n.stochastic.lower - 1e-9 && n.symmetry.upper <= n.stochastic.upper + 1e-9,
                  "case " + std::to_string(i));
      }
    }
    c.require(used >= 20, "too few cases pass the tail condition (" + std::to_string(used) + ")");
    if (c.ok) c.detail = std::to_string(used) + " tail-condition cases";
    return c;
  });

  report(4, "estimator consistency within 3 SE", [&] {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    struct Est {
      const char* name;
      double theta;
      bool symmetry;
      CaseChoice choice;
      PopulationBounds pop;
    };
    const std::vector<Est> ests{
        {"lee", 1.0, false, CaseChoice::known, population_bounds_lee(example)},
        {"stochastic", 0.95, false, CaseChoice::known, population_bounds_stochastic(example, 0.95)},
        {"symmetry", 0.95, true, CaseChoice::known, population_bounds_symmetry(example, 0.95)},
        {"unknown", 0.3, false, CaseChoice::unknown, population_bounds_stochastic(example, 0.3)},
    };
    std::string summary;
    for (std::size_t n : {1000, 10000, 100000}) {
      std::vector<std::array<int, 4>> ok(100);
      parallel_for(100, [&](std::size_t seed) {
        const auto s = draw_sample(example, n, 4000 + seed);
        for (std::size_t e = 0; e < ests.size(); ++e) {
          InferenceOptions opt;
          opt.flags.symmetry = ests[e].symmetry;
          opt.flags.case_choice = ests[e].choice;
          opt.seed = seed;
          const auto r = infer_bounds(s, ests[e].theta, opt).bounds;
          ok[seed][e] = std::abs(r.lower - ests[e].pop.lower) <= 3.0 * *r.se_lower &&
                        std::abs(r.upper - ests[e].pop.upper) <= 3.0 * *r.se_upper;
        }
      });
      for (std::size_t e = 0; e < ests.size(); ++e) {
        int hits = 0;
        for (const auto& o : ok) hits += o[e];
        c.require(hits >= 99, std::string(ests[e].name) + " n=" + std::to_string(n) + ": " + std::to_string(hits) + "/100");
        summary += std::string(summary.empty() ? "" : ", ") + ests[e].name + "@" + std::to_string(n) + " " +
                   std::to_string(hits);
      }
    }
    c.require(seconds_since(t0) < 120.0, "runtime " + num(seconds_since(t0)) + " s");
    if (c.ok) c.detail = summary;
    return c;
  });

  report(5, "variance formulas against Monte Carlo", [&] {
    Check c;
    const std::size_t n = 5000, R = 2000;
    const auto sd_lee = population_sd_trim(example, 1.0);
    const auto sd_sto = population_sd_trim(example, 0.95);
    const auto vs = population_variance_symmetry(example, 0.95);
    const PopSd sd_sym{std::sqrt(vs.omega_L + vs.omega_C), std::sqrt(vs.omega_U + vs.omega_C)};
    std::vector<std::array<double, 6>> est(R);
    parallel_for(R, [&](std::size_t r) {
      const auto s = draw_sample(example, n, 5000, r);
      const auto a = estimate_known_nosymmetry(s, 1.0).bounds;
      const auto b = estimate_known_nosymmetry(s, 0.95).bounds;
      const auto d = estimate_known_symmetry(s, 0.95).bounds;
      est[r] = {a.lower, a.upper, b.lower, b.upper, d.lower, d.upper};
    });
    const double analytic[6] = {sd_lee.lower, sd_lee.upper, sd_sto.lower, sd_sto.upper, sd_sym.lower, sd_sym.upper};
    const char* names[6] = {"lee L", "lee U", "stochastic L", "stochastic U", "symmetry L", "symmetry U"};
    std::string summary;
    for (int k = 0; k < 6; ++k) {
      double m = 0.0, ss = 0.0;
      for (const auto& e : est) m += e[k] / R;
      for (const auto& e : est) ss += (e[k] - m) * (e[k] - m);
      const double mc = std::sqrt(ss / (R - 1.0) * n);
      const double ratio = mc / analytic[k];
      c.require(std::abs(ratio - 1.0) <= 0.10, std::string(names[k]) + " MC/analytic " + num(ratio));
      summary += std::string(summary.empty() ? "" : ", ") + names[k] + " " + num(ratio);
    }
    // Marginal of the joint sandwich for the lower quantile minus control mean.
    const auto prim = population_primitives(example, 0.95);
    const auto f1 = treated_selected_law(example);
    const double fL = f1.pdf(f1.quantile(0.95 * prim.q0 / 2.0));
    const double fF = f1.pdf(f1.quantile(prim.theta_F * prim.q0 / 2.0));
    const double cv = control_selected_law(example).variance();
    for (auto form : {SigmaForm::joint, SigmaForm::printed_diagonal}) {
      const auto g = gamma_covariance_lower(prim, 0.95, fL, fF, cv, form);
      const auto v = variance_symmetry(prim, 0.95, fL, fL, cv, 1);
      const double target = v.omega_L + v.omega_C;
      c.require(std::abs(g.branch_variance(0) - target) <= 1e-6 * target,
                "sandwich marginal " + num(g.branch_variance(0)) + " vs " + num(target));
    }
    if (c.ok) c.detail = summary;
    return c;
  });

  report(6, "interval constants and coverage", [&] {
    Check c;
    const double c0 = imbens_manski_critical_value(0.0, 0.95);
    const double cinf = imbens_manski_critical_value(1e6, 0.95);
    c.require(std::abs(c0 - 1.95996) <= 1e-4, "c at zero width " + num(c0));
    c.require(std::abs(cinf - 1.64485) <= 1e-4, "c at large width " + num(cinf));
    ReplicationPlan plan;
    plan.dgp = example;
    plan.n = 5000;
    plan.reps = 500;
    plan.seed = 6000;
    plan.theta_L = 0.95;
    const auto im = run_replications(plan);
    c.require(im.coverage() >= 0.93, "IM coverage " + num(im.coverage()));
    plan.theta_L = 0.5;  // below the Frechet floor: simulated max-of-Gaussians interval
    plan.inference.flags.case_choice = CaseChoice::unknown;
    plan.target = CoverageTarget::identified_region;
    const auto gm = run_replications(plan);
    std::size_t unknown = 0;
    for (const auto& o : gm.outcomes) unknown += !o.known_case;
    c.require(unknown == plan.reps, "unknown case not used in every replication");
    c.require(gm.coverage() >= 0.93, "Gaussian-max coverage " + num(gm.coverage()));
    if (c.ok) {
      c.detail = "c0 " + num(c0) + ", c_inf " + num(cinf) + ", IM coverage " + num(im.coverage()) +
                 ", Gaussian-max coverage " + num(gm.coverage());
    }
    return c;
  });

  report(7, "atom-level oracle", [&] {
    Check c;
    double worst = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
      const auto& k = cases[i];
      const auto b = brute_force_bounds(discretize(k.dgp, 2000), k.theta_true);
      const auto q = population_bounds_stochastic(k.dgp, k.theta_true);
      worst = std::max({worst, std::abs(b.lower - q.lower), std::abs(b.upper - q.upper)});
    }
    {
      const auto b = brute_force_bounds(discretize(example, 2000), 0.95);
      const auto q = population_bounds_stochastic(example, 0.95);
      worst = std::max({worst, std::abs(b.lower - q.lower), std::abs(b.upper - q.upper)});
    }
    c.require(worst <= 0.02, "discretization gap " + num(worst));
    // Induced finite samples: 100 units per arm, so q n11 = n01 kept units.
    CounterRng rng(7000);
    int mismatches = 0;
    for (int t = 0; t < 40; ++t) {
      std::vector<Record> recs;
      const int n11 = 40 + t, n01 = 10 + t / 2;
      for (int i = 0; i < 100; ++i) {
        Record r;
        r.d = true;
        r.s = i < n11;
        if (r.s) r.y = 2.0 * rng.normal();
        recs.push_back(r);
      }
      for (int i = 0; i < 100; ++i) {
        Record r;
        r.d = false;
        r.s = i < n01;
        if (r.s) r.y = rng.normal();
        recs.push_back(r);
      }
      const SelectionSample s(recs);
      const auto o = brute_force_bounds(s, 1.0);
      const auto e = estimate_known_nosymmetry(s, 1.0).bounds;
      if (std::abs(o.lower - e.lower) > 1e-12 || std::abs(o.upper - e.upper) > 1e-12) ++mismatches;
    }
    c.require(mismatches == 0, std::to_string(mismatches) + " finite-sample mismatches");
    if (c.ok) c.detail = "max discretization gap " + num(worst) + ", 40 finite samples exact";
    return c;
  });

  report(8, "MTE bands", [&] {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    const auto m = latent_index_mte_model();
    const auto g = default_mte_grid();
    const auto mono = mte_bounds(m, g, 1.0, MteAssumption::monotone);
    const auto sto = mte_bounds(m, g, 0.8, MteAssumption::stochastic);
    const auto fre = mte_bounds(m, g, 1.0, MteAssumption::frechet_only);
    int outside = 0, unnested = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double mu = m.truth(g[i]);
      for (const auto* b : {&mono, &sto, &fre}) outside += !(b->lower[i] <= mu + 1e-12 && mu <= b->upper[i] + 1e-12);
      unnested += !(sto.lower[i] <= mono.lower[i] + 1e-12 && mono.upper[i] <= sto.upper[i] + 1e-12);
      unnested += !(fre.lower[i] <= sto.lower[i] + 1e-12 && sto.upper[i] <= fre.upper[i] + 1e-12);
    }
    c.require(outside == 0, std::to_string(outside) + " truth violations");
    c.require(unnested == 0, std::to_string(unnested) + " nesting violations");
    const auto half = mte_bounds(m, {0.5}, 0.8, MteAssumption::stochastic);
    c.require(half.lower[0] <= 0.0 && half.upper[0] >= 0.0, "mu(0.5) = 0 not straddled");
    c.require(seconds_since(t0) < 30.0, "runtime");
    if (c.ok) c.detail = std::to_string(g.size()) + " grid points, three assumption sets";
    return c;
  });

  report(9, "reductions at theta_L = 1", [&] {
    Check c;
    double worst = 0.0;
    for (const auto& k : cases) {
      const auto a = population_bounds_stochastic(k.dgp, 1.0);
      const auto b = population_bounds_lee(k.dgp);
      worst = std::max({worst, std::abs(a.lower - b.lower), std::abs(a.upper - b.upper)});
    }
    c.require(worst <= 1e-10, "population gap " + num(worst));
    int inexact = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto s = draw_sample(example, 500 + 37 * seed, 9000 + seed);
      const auto e = estimate_known_nosymmetry(s, 1.0).bounds;
      const auto u = estimate_unknown(s, 1.0, false).bounds;
      const auto [lo, hi] = lee_by_hand(s);
      inexact += e.lower != u.lower || e.upper != u.upper;
      inexact += std::abs(e.lower - lo) > 1e-12 || std::abs(e.upper - hi) > 1e-12;
    }
    c.require(inexact == 0, std::to_string(inexact) + " sample estimator mismatches");
    CounterRng rng(9100);
    double rel = 0.0;
    for (int t = 0; t < 200; ++t) {
      const double pd1 = 0.2 + 0.6 * rng.uniform(), p1 = 0.3 + 0.7 * rng.uniform();
      const double alpha = p1 * (0.2 + 0.8 * rng.uniform());
      const auto p = make_primitives(alpha, p1, pd1, 0.0, 1.0);
      const TrimmedStats lo{rng.normal(), rng.normal(), 3 * rng.uniform()};
      const auto v = variance_nosymmetry(p, 1.0, lo, lo, 0.0, 1);
      const double lee = lee_variance(lo.variance, lo.quantile, lo.mean, p1 * pd1, 1.0 - p.q0, alpha, p1, pd1);
      rel = std::max(rel, std::abs(v.omega_L - lee) / std::max(1.0, lee));
    }
    c.require(rel <= 1e-10, "variance reduction gap " + num(rel));
    if (c.ok) c.detail = "population gap " + num(worst) + ", variance identity gap " + num(rel);
    return c;
  });

  report(10, "command-line smoke run on a synthetic export", [&] {
    Check c;
    const auto dir = std::filesystem::temp_directory_path() / "smbounds_acceptance";
    std::filesystem::create_directories(dir);
    // Control units are tested more often, so the direction is flipped.
    DgpSpec d;
    d.p_d1 = 0.5;
    d.at(1, 1) = {0.6, normal_law(0.25, 1.0), normal_law(0.0, 1.0)};
    d.at(0, 1) = {0.25, normal_law(0.1, 0.9), normal_law(-0.1, 1.0)};
    d.at(0, 0) = {0.15, normal_law(0.0, 1.0), normal_law(0.0, 1.0)};
    const auto s = draw_sample(d, 6000, 10000);
    std::string text = "st_id\tgrade\ttreat\tendline_taken\tendline_score\n";
    char buf[40];
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto& r = s.records()[i];
      text += std::to_string(i) + "\t" + std::to_string(6 + i % 3) + "\t" + (r.d ? "1" : "0") + "\t" +
              (r.s ? "1" : "0") + "\t";
      if (r.s) {
        std::snprintf(buf, sizeof buf, "%.8g", *r.y);
        text += buf;
      }
      text += "\n";
    }
    const auto data = (dir / "export.tsv").string();
    cli::write_file(data, text);
    const auto out = (dir / "report.json").string();
    const std::string cmd = std::string(SMBOUNDS_CLI_PATH) + " run -i " + data + " -o " + out +
                            " --y-column endline_score --s-column endline_taken --d-column treat"
                            " --flip-direction --theta-l 0.9,0.95,1 --symmetry --fold-check"
                            " --covariate-column grade --bootstrap 200 >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    c.require(WIFEXITED(status) && WEXITSTATUS(status) == 0, "exit status " + std::to_string(WEXITSTATUS(status)));
    if (!c.ok) return c;
    const auto rep = nlohmann::json::parse(cli::read_file(out));
    c.require(rep["schema_version"] == "1.0", "schema version");
    c.require(rep["results"].size() == 3, "three theta_L results");
    for (const auto& r : rep["results"]) {
      c.require(r["lower"].is_number() && r["upper"].is_number() && r["ci"]["lo"].is_number(), "bounds and CI");
      c.require(r["flipped"].get<bool>(), "flipped direction recorded");
    }
    c.require(rep.contains("metadata") && rep["metadata"].contains("auto_case_margin"), "metadata");
    for (const auto& p : rep["plot_files"]) {
      c.require(std::filesystem::exists(p["path"].get<std::string>()), "plot file " + p["path"].get<std::string>());
    }
    if (c.ok) c.detail = "report with " + std::to_string(rep["results"].size()) + " results";
    return c;
  });

  std::printf("%d of 10 criteria failed\n", failures);
  return failures;
}
