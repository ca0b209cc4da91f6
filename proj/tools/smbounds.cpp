#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "smbounds/cli.hpp"

namespace {

void emit(const smb::cli::json& doc, const std::string& path) {
  const std::string text = doc.dump(2) + "\n";
  if (path.empty()) {
    std::cout << text;
  } else {
    smb::cli::write_file(path, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Treatment-effect bounds under sample selection"};
  app.require_subcommand(1);

  smb::cli::RunConfig cfg;
  std::string theta_text = "1";
  std::string case_text = "auto";
  std::string bandwidth_text = "silverman";
  std::string w_column;

  auto* run = app.add_subcommand("run", "Estimate bounds and intervals from a data file");
  run->add_option("-i,--input", cfg.input, "Comma- or tab-delimited file with a header row");
  run->add_option("-o,--output", cfg.output, "Report path (JSON); stdout when omitted");
  run->add_option("--plot-prefix", cfg.plot_prefix, "Prefix for plot-data tables");
  run->add_option("--y-column", cfg.columns.y, "Outcome column")->capture_default_str();
  run->add_option("--s-column", cfg.columns.s, "Selection column")->capture_default_str();
  run->add_option("--d-column", cfg.columns.d, "Treatment column")->capture_default_str();
  run->add_option("--covariate-column", w_column, "Discrete covariate column");
  run->add_option("--theta-l", theta_text, "theta_L value or comma grid")->capture_default_str();
  auto* sym = run->add_flag("--symmetry", cfg.symmetry, "Add the symmetry restriction");
  run->add_flag("--no-symmetry", "No symmetry restriction (default)")->excludes(sym);
  run->add_flag("--flip-direction", cfg.flipped, "Selection monotone from treatment to control");
  run->add_option("--case", case_text, "auto, known or unknown")->capture_default_str();
  run->add_option("--level", cfg.level, "Confidence level")->capture_default_str();
  run->add_option("--bootstrap", cfg.bootstrap, "Bootstrap replicates (0 = analytic)")->capture_default_str();
  run->add_option("--seed", cfg.seed, "Seed for simulated critical values and bootstrap")->capture_default_str();
  run->add_option("--bandwidth", bandwidth_text, "silverman or sheather_jones")->capture_default_str();
  run->add_flag("--sensitivity", cfg.sensitivity, "Write the theta_L sensitivity table");
  run->add_flag("--fold-check", cfg.fold_check, "Write folded-density diagnostics");
  run->add_flag("--mte-demo", cfg.mte_demo, "Write MTE bands for the latent-index demo model");

  std::string plan_path, sim_out;
  auto* sim = app.add_subcommand("simulate", "Run a replication plan");
  sim->add_option("plan", plan_path, "Plan document (JSON)")->required();
  sim->add_option("-o,--output", sim_out, "Report path (JSON); stdout when omitted");

  std::string dgp_path, id_out, id_theta = "1";
  auto* ident = app.add_subcommand("identify", "Population bounds of a declared model");
  ident->add_option("dgp", dgp_path, "Model document (JSON)")->required();
  ident->add_option("--theta-l", id_theta, "theta_L value or comma grid")->capture_default_str();
  ident->add_option("-o,--output", id_out, "Report path (JSON); stdout when omitted");

  std::string draw_dgp, draw_out;
  std::size_t draw_n = 1000;
  std::uint64_t draw_seed = 0;
  auto* draw = app.add_subcommand("draw", "Write a synthetic sample drawn from a declared model");
  draw->add_option("dgp", draw_dgp, "Model document (JSON)")->required();
  draw->add_option("-n", draw_n, "Sample size")->capture_default_str();
  draw->add_option("--seed", draw_seed, "Seed")->capture_default_str();
  draw->add_option("-o,--output", draw_out, "CSV path; stdout when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      cfg.theta_L = smb::cli::parse_grid(theta_text);
      cfg.case_choice = smb::cli::case_from_string(case_text);
      cfg.bandwidth = smb::cli::bandwidth_from_string(bandwidth_text);
      if (!w_column.empty()) cfg.columns.w = w_column;
      emit(smb::cli::run(cfg), cfg.output);
    } else if (*sim) {
      const auto plan = smb::cli::parse_json(smb::cli::read_file(plan_path), plan_path);
      emit(smb::cli::run_simulation(plan), sim_out);
    } else if (*ident) {
      const auto dgp = smb::cli::parse_json(smb::cli::read_file(dgp_path), dgp_path);
      emit(smb::cli::run_identify(dgp, smb::cli::parse_grid(id_theta)), id_out);
    } else if (*draw) {
      const auto doc = smb::cli::parse_json(smb::cli::read_file(draw_dgp), draw_dgp);
      const auto sample = smb::draw_sample(smb::cli::dgp_from_json(doc), draw_n, draw_seed);
      const auto text = smb::cli::sample_to_csv(sample);
      if (draw_out.empty()) std::cout << text;
      else smb::cli::write_file(draw_out, text);
    }
  } catch (const smb::Error& e) {
    std::cerr << "error [" << smb::to_string(e.code()) << "]: " << e.what() << "\n";
    return smb::exit_code(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error [BadConfig]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
