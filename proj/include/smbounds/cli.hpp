#pragma once

// Command-line plumbing: delimited-text ingest, JSON run/plan/DGP configs,
// report documents and flat plot-data tables.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "smbounds/diagnostics.hpp"
#include "smbounds/estimate.hpp"
#include "smbounds/identify.hpp"
#include "smbounds/inference.hpp"
#include "smbounds/mte.hpp"
#include "smbounds/simlab.hpp"

namespace smb::cli {

using json = nlohmann::ordered_json;

inline constexpr std::string_view kSchemaVersion = "1.0";

struct ColumnMap {
  std::string y = "y";
  std::string s = "s";
  std::string d = "d";
  std::optional<std::string> w;
};

struct RunConfig {
  std::string input;
  ColumnMap columns;
  std::vector<double> theta_L{1.0};
  bool symmetry = false;
  bool flipped = false;
  CaseChoice case_choice = CaseChoice::automatic;
  double level = 0.95;
  std::size_t bootstrap = 0;
  std::uint64_t seed = 0;
  bool sensitivity = false;
  bool fold_check = false;
  bool mte_demo = false;
  BandwidthRule bandwidth = BandwidthRule::silverman;
  std::string output;       // report path; empty writes to stdout
  std::string plot_prefix;  // plot tables go to <prefix>.<name>.csv

  void validate() const {
    if (theta_L.empty()) throw Error(ErrorCode::BadConfig, "empty theta_L grid");
    for (double t : theta_L) {
      if (!(t > 0.0 && t <= 1.0)) throw Error(ErrorCode::BadConfig, "theta_L values must lie in (0, 1]");
    }
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::BadConfig, "level must lie in (0, 1)");
    std::vector<std::string> names{columns.y, columns.s, columns.d};
    if (columns.w) names.push_back(*columns.w);
    for (std::size_t i = 0; i < names.size(); ++i) {
      for (std::size_t j = i + 1; j < names.size(); ++j) {
        if (names[i] == names[j]) throw Error(ErrorCode::BadConfig, "column '" + names[i] + "' mapped twice");
      }
    }
    if (bootstrap != 0 && bootstrap < 200) throw Error(ErrorCode::BadConfig, "bootstrap needs at least 200 replicates");
  }
};

// ---------------------------------------------------------------------------
// Parsing helpers

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '"' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

/// Comma-separated theta_L values, e.g. "0.9,0.95,1".
inline std::vector<double> parse_grid(std::string_view text) {
  std::vector<double> out;
  for (auto part : split(text, ',')) {
    const auto v = parse_double(part);
    if (!v) throw Error(ErrorCode::BadConfig, "cannot parse theta_L value '" + std::string(part) + "'");
    out.push_back(*v);
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::BadConfig, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::BadConfig, "cannot write '" + path + "'");
  out << text;
}

// ---------------------------------------------------------------------------
// Ingest

/// Parses delimited text with a header row. Tab-delimited when the header
/// holds a tab, comma-delimited otherwise. Line numbers count the header as 1.
inline SelectionSample ingest_text(const std::string& text, const ColumnMap& map) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyInput, "input has no header row");
  const char delim = line.find('\t') != std::string::npos ? '\t' : ',';
  const auto header = split(line, delim);
  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found in header");
  };
  const std::size_t iy = column(map.y), is = column(map.s), id = column(map.d);
  const std::optional<std::size_t> iw = map.w ? std::optional(column(*map.w)) : std::nullopt;

  auto flag = [](std::string_view f, std::size_t lineno, const char* what) {
    const auto v = parse_double(f);
    if (!v) {
      throw Error(ErrorCode::ParseError,
                  "line " + std::to_string(lineno) + ": cannot parse " + what + " '" + std::string(f) + "'");
    }
    if (*v != 0.0 && *v != 1.0) {
      throw Error(ErrorCode::BadFlag, "line " + std::to_string(lineno) + ": " + what + " must be 0 or 1");
    }
    return static_cast<int>(*v);
  };

  std::vector<RawRecord> raw;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(line, delim);
    if (f.size() != header.size()) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": expected " +
                                             std::to_string(header.size()) + " fields, found " +
                                             std::to_string(f.size()));
    }
    RawRecord r;
    r.s = flag(f[is], lineno, "s");
    r.d = flag(f[id], lineno, "d");
    if (!f[iy].empty()) {
      const auto y = parse_double(f[iy]);
      if (!y || !std::isfinite(*y)) {
        throw Error(ErrorCode::ParseError,
                    "line " + std::to_string(lineno) + ": cannot parse outcome '" + std::string(f[iy]) + "'");
      }
      r.y = *y;
    } else if (r.s == 1) {
      throw Error(ErrorCode::MissingOutcome, "line " + std::to_string(lineno) + ": s=1 with empty outcome");
    }
    if (iw) r.w = std::string(f[*iw]);
    raw.push_back(std::move(r));
  }
  return validate_sample(raw);
}

inline SelectionSample ingest(const std::string& path, const ColumnMap& map) {
  return ingest_text(read_file(path), map);
}

/// Writes a sample in the ingest format; outcomes use 17 significant digits
/// so re-ingesting reproduces every value exactly.
inline std::string sample_to_csv(const SelectionSample& sample) {
  std::string out = "y,s,d\n";
  char buf[64];
  for (const auto& r : sample.records()) {
    if (r.s) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.y);
      out += buf;
    }
    out += r.s ? ",1," : ",0,";
    out += r.d ? "1\n" : "0\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Declarative DGP and plan documents

inline double number(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw Error(ErrorCode::BadConfig, std::string("missing numeric field '") + key + "'");
  }
  return j[key].get<double>();
}

inline std::vector<double> numbers(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) {
    throw Error(ErrorCode::BadConfig, std::string("missing array field '") + key + "'");
  }
  std::vector<double> out;
  for (const auto& v : j[key]) {
    if (!v.is_number()) throw Error(ErrorCode::BadConfig, std::string("non-numeric entry in '") + key + "'");
    out.push_back(v.get<double>());
  }
  return out;
}

/// {"family": "normal", "mean", "sd"} | {"family": "mixture", "weights",
/// "means", "sds"} | {"family": "atoms", "values", "weights"}.
inline OutcomeLaw law_from_json(const json& j) {
  const std::string fam = j.value("family", "");
  if (fam == "normal") {
    const double sd = number(j, "sd");
    if (!(sd > 0.0)) throw Error(ErrorCode::BadConfig, "normal sd must be positive");
    return normal_law(number(j, "mean"), sd);
  }
  if (fam == "mixture") {
    const auto w = numbers(j, "weights"), m = numbers(j, "means"), s = numbers(j, "sds");
    if (w.size() != m.size() || m.size() != s.size() || w.empty()) {
      throw Error(ErrorCode::BadConfig, "mixture weights/means/sds must have equal nonzero length");
    }
    for (double x : s) {
      if (!(x > 0.0)) throw Error(ErrorCode::BadConfig, "mixture sds must be positive");
    }
    return normal_mixture_law(w, m, s);
  }
  if (fam == "atoms") {
    const auto v = numbers(j, "values"), w = numbers(j, "weights");
    if (v.size() != w.size() || v.empty()) throw Error(ErrorCode::BadConfig, "atoms values/weights mismatch");
    return atom_law(v, w);
  }
  throw Error(ErrorCode::BadConfig, "unknown law family '" + fam + "'");
}

/// {"preset": "running_example"} or {"p_d1", "strata": [{"s1", "s0", "prob",
/// "y1", "y0"}]}; strata left out have probability zero.
inline DgpSpec dgp_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, "DGP must be an object");
  if (j.contains("preset")) {
    if (j["preset"] != "running_example") {
      throw Error(ErrorCode::BadConfig, "unknown DGP preset '" + j["preset"].dump() + "'");
    }
    return running_example_dgp(j.value("p_d1", 0.5));
  }
  DgpSpec d;
  d.p_d1 = j.value("p_d1", 0.5);
  if (!(d.p_d1 > 0.0 && d.p_d1 < 1.0)) throw Error(ErrorCode::BadConfig, "p_d1 must lie in (0, 1)");
  if (!j.contains("strata") || !j["strata"].is_array()) throw Error(ErrorCode::BadConfig, "DGP needs 'strata'");
  for (const auto& st : j["strata"]) {
    const int s1 = static_cast<int>(number(st, "s1")), s0 = static_cast<int>(number(st, "s0"));
    if ((s1 != 0 && s1 != 1) || (s0 != 0 && s0 != 1)) throw Error(ErrorCode::BadConfig, "stratum labels must be 0 or 1");
    auto& cell = d.at(s1, s0);
    cell.prob = number(st, "prob");
    if (st.contains("y1")) cell.y1 = law_from_json(st["y1"]);
    if (st.contains("y0")) cell.y0 = law_from_json(st["y0"]);
  }
  validate_dgp(d);
  return d;
}

inline CaseChoice case_from_string(const std::string& s) {
  if (s == "auto") return CaseChoice::automatic;
  if (s == "known") return CaseChoice::known;
  if (s == "unknown") return CaseChoice::unknown;
  throw Error(ErrorCode::BadConfig, "case must be auto, known or unknown");
}

inline std::string_view to_string(CaseChoice c) {
  switch (c) {
    case CaseChoice::automatic: return "auto";
    case CaseChoice::known: return "known";
    case CaseChoice::unknown: return "unknown";
  }
  return "auto";
}

inline BandwidthRule bandwidth_from_string(const std::string& s) {
  if (s == "silverman") return BandwidthRule::silverman;
  if (s == "sheather_jones") return BandwidthRule::sheather_jones;
  throw Error(ErrorCode::BadConfig, "bandwidth rule must be silverman or sheather_jones");
}

/// Simulation plan: {"dgp", "n", "reps", "seed", "theta_L", "symmetry",
/// "flipped", "case", "level", "bootstrap", "target", "gaussian_draws"}.
inline ReplicationPlan plan_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, "plan must be an object");
  if (!j.contains("dgp")) throw Error(ErrorCode::BadConfig, "plan needs 'dgp'");
  ReplicationPlan p;
  p.dgp = dgp_from_json(j["dgp"]);
  p.n = j.value("n", std::size_t{1000});
  p.reps = j.value("reps", std::size_t{100});
  p.seed = j.value("seed", std::uint64_t{0});
  p.theta_L = j.value("theta_L", 1.0);
  if (!(p.theta_L > 0.0 && p.theta_L <= 1.0)) throw Error(ErrorCode::BadConfig, "theta_L must lie in (0, 1]");
  p.flipped = j.value("flipped", false);
  p.inference.flags.symmetry = j.value("symmetry", false);
  p.inference.flags.case_choice = case_from_string(j.value("case", std::string("auto")));
  p.inference.level = j.value("level", 0.95);
  if (!(p.inference.level > 0.0 && p.inference.level < 1.0)) throw Error(ErrorCode::BadConfig, "level must lie in (0, 1)");
  p.inference.bootstrap = j.value("bootstrap", std::size_t{0});
  p.inference.gaussian_draws = j.value("gaussian_draws", std::size_t{20000});
  const std::string target = j.value("target", std::string("true_tau"));
  if (target == "true_tau") p.target = CoverageTarget::true_tau;
  else if (target == "identified_region") p.target = CoverageTarget::identified_region;
  else throw Error(ErrorCode::BadConfig, "target must be true_tau or identified_region");
  return p;
}

// ---------------------------------------------------------------------------
// Report pieces

inline json opt_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json primitives_json(const IdentifiedPrimitives& p) {
  return {{"alpha0", p.alpha0}, {"p_s1_d1", p.p_s1_d1}, {"p_d1", p.p_d1}, {"q0", p.q0},
          {"theta_F", p.theta_F}, {"eta0", p.eta0}};
}

inline json ci_json(const CiResult& c) {
  json j{{"lo", c.lo}, {"hi", c.hi}, {"level", c.level}, {"method", to_string(c.method)},
         {"critical_value", c.critical_value}};
  if (c.median_unbiased_lower) j["median_unbiased_lower"] = *c.median_unbiased_lower;
  if (c.median_unbiased_upper) j["median_unbiased_upper"] = *c.median_unbiased_upper;
  if (c.percentile_lo) j["percentile_lo"] = *c.percentile_lo;
  if (c.percentile_hi) j["percentile_hi"] = *c.percentile_hi;
  if (c.method == CiMethod::bootstrap) j["failed_replicates"] = c.failed_replicates;
  return j;
}

inline json result_json(const InferenceResult& r, double theta_L) {
  const auto& b = r.bounds;
  json j{{"theta_L", theta_L},
         {"theta_used", b.theta_used},
         {"case", r.known_case ? "known" : "unknown"},
         {"method", to_string(b.method)},
         {"symmetry", b.symmetry},
         {"flipped", b.flipped},
         {"lower", b.lower},
         {"upper", b.upper},
         {"se_lower", opt_number(b.se_lower)},
         {"se_upper", opt_number(b.se_upper)},
         {"trim_fraction", b.trim_fraction}};
  j["ci"] = r.ci ? ci_json(*r.ci) : json(nullptr);
  if (r.variance && r.variance->bandwidth > 0.0) j["bandwidth"] = r.variance->bandwidth;
  j["warnings"] = b.warnings;
  json notes = r.notes;
  if (r.ci) {
    for (const auto& n : r.ci->notes) notes.push_back(n);
  }
  j["notes"] = notes;
  return j;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string sensitivity_csv(const SensitivityCurve& c) {
  std::string out = "theta_L,lower,upper,width,ci_lo,ci_hi,plausibility\n";
  for (std::size_t i = 0; i < c.grid.size(); ++i) {
    const auto& b = c.bounds[i];
    out += fmt(c.grid[i]) + "," + fmt(b.lower) + "," + fmt(b.upper) + "," + fmt(b.upper - b.lower) + "," +
           (b.ci ? fmt(b.ci->lo) : "") + "," + (b.ci ? fmt(b.ci->hi) : "") + "," + fmt(c.plausibility[i]) + "\n";
  }
  return out;
}

inline std::string fold_csv(const std::vector<FoldReport>& reports) {
  std::string out = "side,x,density,folded,band_lo,band_hi\n";
  for (const auto& r : reports) {
    const char* side = r.side == Tail::lower ? "lower" : "upper";
    for (std::size_t i = 0; i < r.grid.size(); ++i) {
      out += std::string(side) + "," + fmt(r.grid[i]) + "," + fmt(r.density[i]) + "," + fmt(r.folded[i]) + "," +
             (r.band_lo ? fmt((*r.band_lo)[i]) : "") + "," + (r.band_hi ? fmt((*r.band_hi)[i]) : "") + "\n";
    }
  }
  return out;
}

inline json fold_json(const FoldReport& r) {
  return {{"side", r.side == Tail::lower ? "lower" : "upper"},
          {"fold_point", r.fold_point},
          {"violation_measure", r.violation_measure},
          {"significant", r.significant},
          {"bandwidth", r.bandwidth},
          {"n", r.n}};
}

struct MteDemo {
  MteBounds monotone, stochastic, frechet;
  std::vector<double> truth;
};

inline MteDemo mte_demo(double theta_L = 0.8) {
  const auto m = latent_index_mte_model();
  const auto g = default_mte_grid();
  MteDemo d{mte_bounds(m, g, 1.0, MteAssumption::monotone), mte_bounds(m, g, theta_L, MteAssumption::stochastic),
            mte_bounds(m, g, 1.0, MteAssumption::frechet_only), {}};
  for (double v : g) d.truth.push_back(m.truth(v));
  return d;
}

inline std::string mte_csv(const MteDemo& d) {
  std::string out = "v,truth,monotone_lower,monotone_upper,stochastic_lower,stochastic_upper,frechet_lower,frechet_upper\n";
  for (std::size_t i = 0; i < d.truth.size(); ++i) {
    out += fmt(d.monotone.grid[i]) + "," + fmt(d.truth[i]) + "," + fmt(d.monotone.lower[i]) + "," +
           fmt(d.monotone.upper[i]) + "," + fmt(d.stochastic.lower[i]) + "," + fmt(d.stochastic.upper[i]) + "," +
           fmt(d.frechet.lower[i]) + "," + fmt(d.frechet.upper[i]) + "\n";
  }
  return out;
}

inline std::string plot_path(const RunConfig& cfg, const char* name) {
  std::string prefix = cfg.plot_prefix;
  if (prefix.empty()) {
    prefix = cfg.output.empty() ? "smbounds" : cfg.output;
    if (prefix.size() > 5 && prefix.ends_with(".json")) prefix.resize(prefix.size() - 5);
  }
  return prefix + "." + name + ".csv";
}

inline json metadata_json(const InferenceOptions& opt) {
  return {{"auto_case_margin", opt.flags.auto_margin},
          {"case_choice", to_string(opt.flags.case_choice)},
          {"kernel", to_string(opt.kde.kernel)},
          {"bandwidth_rule", to_string(opt.kde.rule)},
          {"sigma_form", opt.sigma_form == SigmaForm::joint ? "joint" : "printed_diagonal"},
          {"gaussian_max_draws", opt.gaussian_draws},
          {"bootstrap_replicates", opt.bootstrap},
          {"seed", opt.seed},
          {"level", opt.level}};
}

// ---------------------------------------------------------------------------
// Commands

inline json run(const RunConfig& cfg) {
  cfg.validate();
  json rep{{"schema_version", kSchemaVersion}, {"command", "run"}};
  json warnings = json::array();
  json plots = json::array();
  auto emit = [&](const char* name, const std::string& text) {
    const auto path = plot_path(cfg, name);
    write_file(path, text);
    plots.push_back({{"name", name}, {"path", path}});
  };

  InferenceOptions opt;
  opt.flags.symmetry = cfg.symmetry;
  opt.flags.case_choice = cfg.case_choice;
  opt.level = cfg.level;
  opt.bootstrap = cfg.bootstrap;
  opt.seed = cfg.seed;
  opt.kde.rule = cfg.bandwidth;

  rep["config"] = {{"input", cfg.input},
                   {"columns", {{"y", cfg.columns.y}, {"s", cfg.columns.s}, {"d", cfg.columns.d},
                                {"w", cfg.columns.w ? json(*cfg.columns.w) : json(nullptr)}}},
                   {"theta_L", cfg.theta_L},
                   {"symmetry", cfg.symmetry},
                   {"direction", cfg.flipped ? "flipped" : "standard"}};
  rep["metadata"] = metadata_json(opt);

  if (!cfg.input.empty()) {
    auto sample = ingest(cfg.input, cfg.columns);
    if (cfg.flipped) sample = flip_direction(sample);
    const auto c = sample.counts();
    rep["data"] = {{"n", sample.size()},
                   {"n_d1_s1", c(1, 1)}, {"n_d1_s0", c(1, 0)}, {"n_d0_s1", c(0, 1)}, {"n_d0_s0", c(0, 0)}};
    const auto prim = identified_primitives(sample, 1.0);
    rep["primitives"] = primitives_json(prim);
    if (prim.q0 > 1.0) {
      warnings.push_back("control selection rate exceeds treated selection rate; consider --flip-direction");
    }

    json results = json::array();
    for (double t : cfg.theta_L) {
      const auto r = cfg.columns.w ? infer_covariate_adjusted(sample, t, opt) : infer_bounds(sample, t, opt);
      auto j = result_json(r, t);
      if (prim.alpha0 < 1.0) j["plausibility"] = theta_plausibility(prim, t);
      for (const auto& w : r.bounds.warnings) warnings.push_back("theta_L=" + fmt(t) + ": " + w);
      results.push_back(std::move(j));
    }
    rep["results"] = std::move(results);

    if ((cfg.sensitivity || cfg.theta_L.size() > 1) && !cfg.columns.w) {
      const auto curve = sensitivity_curve(sample, cfg.theta_L, opt);
      rep["sensitivity"] = {{"grid", curve.grid}, {"crossing", opt_number(curve.crossing)}};
      emit("sensitivity", sensitivity_csv(curve));
    }
    if (cfg.fold_check) {
      const double t = *std::max_element(cfg.theta_L.begin(), cfg.theta_L.end());
      std::vector<FoldReport> reports;
      json folds = json::array();
      for (Tail side : {Tail::lower, Tail::upper}) {
        try {
          reports.push_back(tail_smoothness_report(sample, t, side, opt.kde));
          folds.push_back(fold_json(reports.back()));
          if (reports.back().significant) {
            warnings.push_back(std::string("fold check: significant tail-smoothness violation on the ") +
                               (side == Tail::lower ? "lower" : "upper") + " side");
          }
        } catch (const Error& e) {
          if (e.code() != ErrorCode::TooFewObservations) throw;
          warnings.push_back(std::string("fold check skipped: ") + e.what());
        }
      }
      rep["fold_check"] = {{"theta_L", t}, {"sides", folds}};
      if (!reports.empty()) emit("fold", fold_csv(reports));
    }
  } else if (!cfg.mte_demo) {
    throw Error(ErrorCode::BadConfig, "an input file is required");
  }

  if (cfg.mte_demo) {
    const auto d = mte_demo();
    std::size_t inside = 0;
    for (std::size_t i = 0; i < d.truth.size(); ++i) {
      inside += d.stochastic.lower[i] <= d.truth[i] && d.truth[i] <= d.stochastic.upper[i];
    }
    rep["mte_demo"] = {{"grid_points", d.truth.size()}, {"stochastic_theta_L", d.stochastic.theta_L},
                       {"truth_inside_stochastic", inside}};
    emit("mte", mte_csv(d));
  }
  rep["warnings"] = std::move(warnings);
  rep["plot_files"] = std::move(plots);
  return rep;
}

inline json coverage_json(const CoverageReport& r, const ReplicationPlan& p, bool outcomes) {
  json j{{"schema_version", kSchemaVersion},
         {"command", "simulate"},
         {"plan", {{"n", p.n}, {"reps", p.reps}, {"seed", p.seed}, {"theta_L", p.theta_L},
                   {"symmetry", p.inference.flags.symmetry}, {"flipped", p.flipped},
                   {"target", to_string(p.target)}}},
         {"metadata", metadata_json(p.inference)},
         {"tau", r.tau},
         {"population_lower", r.population_lower},
         {"population_upper", r.population_upper},
         {"coverage", r.coverage()},
         {"cover_count", r.cover_count},
         {"mean_lower", r.mean_lower},
         {"mean_upper", r.mean_upper},
         {"sd_lower", r.sd_lower},
         {"sd_upper", r.sd_upper},
         {"mean_se_lower", r.mean_se_lower},
         {"mean_se_upper", r.mean_se_upper},
         {"mean_ci_width", r.mean_ci_width}};
  if (outcomes) {
    json arr = json::array();
    for (const auto& o : r.outcomes) {
      arr.push_back({{"lower", o.lower}, {"upper", o.upper}, {"se_lower", o.se_lower}, {"se_upper", o.se_upper},
                     {"ci_lo", o.ci_lo}, {"ci_hi", o.ci_hi}, {"known_case", o.known_case}, {"covered", o.covered}});
    }
    j["outcomes"] = std::move(arr);
  }
  return j;
}

inline json run_simulation(const json& plan_doc) {
  const auto plan = plan_from_json(plan_doc);
  return coverage_json(run_replications(plan), plan, plan_doc.value("include_outcomes", false));
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, what + ": " + e.what());
  }
}

/// Population bounds of a declarative DGP over a theta_L grid.
inline json run_identify(const json& dgp_doc, const std::vector<double>& grid) {
  const auto dgp = dgp_from_json(dgp_doc);
  json rep{{"schema_version", kSchemaVersion}, {"command", "identify"}};
  const auto prim = population_primitives(dgp, 1.0);
  rep["primitives"] = primitives_json(prim);
  rep["true_tau"] = true_tau(dgp);
  const auto lee = population_bounds_lee(dgp);
  rep["lee"] = {{"lower", lee.lower}, {"upper", lee.upper}};
  json rows = json::array();
  for (double t : grid) {
    if (!(t > 0.0 && t <= 1.0)) throw Error(ErrorCode::BadConfig, "theta_L values must lie in (0, 1]");
    const auto n = nesting_check(dgp, t);
    json row{{"theta_L", t},
             {"theta", n.stochastic.theta},
             {"stochastic", {{"lower", n.stochastic.lower}, {"upper", n.stochastic.upper}}},
             {"symmetry", {{"lower", n.symmetry.lower}, {"upper", n.symmetry.upper}}},
             {"tail_smoothness_holds", n.assumption_5()},
             {"nested", n.nested}};
    if (prim.alpha0 < 1.0) row["plausibility"] = theta_plausibility(population_primitives(dgp, t), t);
    rows.push_back(std::move(row));
  }
  rep["bounds"] = std::move(rows);
  return rep;
}

}  // namespace smb::cli
