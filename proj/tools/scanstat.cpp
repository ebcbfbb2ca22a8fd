#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "scanstat/io.hpp"
#include "scanstat/version.hpp"

namespace {

int emit_cli_error(const std::string& message) {
  scanstat::Json doc;
  doc["error"] = {{"code", 2}, {"kind", "validation"}, {"message", message}};
  std::cerr << doc.dump() << '\n';
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  scanstat::RunConfig cfg;

  // The config file loads first; CLI11 only writes into bound fields when a
  // flag is actually present, so flags override file values.
  std::string config_path;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) config_path = argv[i + 1];
    else if (a.rfind("--config=", 0) == 0) config_path = a.substr(9);
  }
  if (!config_path.empty()) {
    try {
      scanstat::apply_config_file(cfg, config_path);
    } catch (const std::exception& e) {
      return emit_cli_error(e.what());
    }
  }

  CLI::App app{"Scan-statistic tail probabilities from moving-sum covariance matrices"};
  app.set_version_flag("--version", scanstat::kVersion);
  app.require_subcommand(0, 1);
  std::string config_dummy;
  app.add_option("--config", config_dummy, "flat JSON config file; flags override it");

  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", config_dummy, "flat JSON config file; flags override it");
    s->add_option("-o,--output", cfg.output, "output path ('-' or empty: stdout)");
    s->add_option("--format", cfg.format, "csv | json");
    s->add_option("--seed", cfg.seed, "RNG seed");
  };
  auto add_model = [&](CLI::App* s, bool with_structure = true) {
    if (with_structure) {
      s->add_option("--structure", cfg.structure, "common | auto | general");
      s->add_option("--rho", cfg.rho, "correlation parameter (common/auto)");
      s->add_option("--matrix", cfg.matrix_file, "n x n correlation CSV (general)");
      s->add_flag("--repair", cfg.repair, "replace a non-PD general matrix by the nearest PD one");
    }
    s->add_option("--sigma", cfg.sigma, "per-variable scale");
    s->add_option("--family", cfg.family, "normal | t");
    s->add_option("--nu", cfg.nu, "degrees of freedom (t family)");
    s->add_option("--theta0", cfg.theta0, "per-variable location");
  };
  auto add_integration = [&](CLI::App* s) {
    s->add_option("--error-target", cfg.error_target, "absolute error target on the probability");
    s->add_option("--replications", cfg.replications, "randomized lattice shifts");
    s->add_option("--initial-points", cfg.initial_points, "lattice points per replication to start");
    s->add_option("--max-points", cfg.max_points, "lattice point budget per replication");
    s->add_flag("--strict", cfg.strict, "exit 3 when the error target is not reached");
  };

  CLI::App* cov = app.add_subcommand("cov", "moving-sum covariance matrix Sigma_Y");
  add_common(cov);
  add_model(cov);
  cov->add_option("-n,--length", cfg.n, "process length");
  cov->add_option("-w,--window", cfg.w, "window size");

  CLI::App* tailprob = app.add_subcommand("tailprob", "P(S_w > s) under the null model");
  add_common(tailprob);
  add_model(tailprob);
  add_integration(tailprob);
  tailprob->add_option("-n,--length", cfg.n, "process length");
  tailprob->add_option("-w,--window", cfg.w, "window size");
  tailprob->add_option("-s,--threshold", cfg.s, "scan threshold (sum scale)");

  CLI::App* scan = app.add_subcommand("scan", "scan statistic and argmax per series");
  add_common(scan);
  scan->add_option("-i,--input", cfg.input, "series CSV (header id,values)");
  scan->add_option("-w,--window", cfg.w, "window size");

  CLI::App* pvalues = app.add_subcommand("pvalues", "batch p-values with BH adjustment");
  add_common(pvalues);
  add_model(pvalues);
  add_integration(pvalues);
  pvalues->add_option("-i,--input", cfg.input, "series CSV (header id,values)");
  pvalues->add_option("-w,--window", cfg.w, "window size");
  pvalues->add_option("--coarse-target", cfg.coarse_target,
                      "first-pass error target; rows with p - error <= refine threshold "
                      "are re-run at --error-target (0 disables)");
  pvalues->add_option("--refine-below", cfg.refine_below,
                      "refine rows whose first-pass p - error falls at or below this");

  CLI::App* verify = app.add_subcommand(
      "verify", "exact vs simulated covariances and tail probabilities");
  add_common(verify);
  add_model(verify, false);
  add_integration(verify);
  verify->add_option("-n,--length", cfg.n, "process length (default 7)");
  verify->add_option("-w,--window", cfg.w, "window size (default 3)");
  verify->add_option("-s,--threshold", cfg.s, "scan threshold (default 3)");
  verify->add_option("--n-outer", cfg.n_outer, "simulation realizations N");
  verify->add_option("--j-inner", cfg.j_inner, "samples per realization J");

  CLI::App* sensitivity = app.add_subcommand(
      "sensitivity", "covariance grids over (w, g, rho)");
  add_common(sensitivity);
  sensitivity->add_option("--structure", cfg.structure, "common | auto");
  sensitivity->add_option("--sigma", cfg.sigma, "per-variable scale");
  sensitivity->add_option("--grid-w", cfg.grid_w, "window sizes")->delimiter(',');
  sensitivity->add_option("--grid-g", cfg.grid_g, "window gaps")->delimiter(',');
  sensitivity->add_option("--grid-rho", cfg.grid_rho, "correlations (use --grid-rho=-1,0,1 for negatives)")
      ->delimiter(',');

  CLI::App* experiment = app.add_subcommand(
      "experiment", "multi-series detection study (per-series p-values, BH, power/FDP)");
  add_common(experiment);
  add_model(experiment, false);
  add_integration(experiment);
  experiment->add_option("--rho", cfg.rho, "auto-correlation of the simulated processes");
  experiment->add_option("--coarse-target", cfg.coarse_target,
                         "first-pass error target (default 8e-3; 0 disables tiering)");
  experiment->add_option("--refine-below", cfg.refine_below,
                         "refine rows whose first-pass p - error falls at or below this");
  experiment->add_option("-w,--window", cfg.w, "window size (default 10)");
  experiment->add_option("--series", cfg.series_count, "number of series (default 500)");
  experiment->add_flag("--full-scale", cfg.full_scale, "run the 6000-series configuration");
  experiment->add_flag("--null-only", cfg.null_only, "no injected effects");
  experiment->add_option("--effect-fraction", cfg.effect_fraction, "fraction of series given an effect");
  experiment->add_option("--effect-length", cfg.effect_length, "elevated stretch length");
  experiment->add_option("--heights", cfg.effect_heights, "effect heights drawn uniformly")
      ->delimiter(',');
  experiment->add_option("--lengths", cfg.lengths, "series length choices")->delimiter(',');
  experiment->add_option("--length-probs", cfg.length_probs, "probabilities of the length choices")
      ->delimiter(',');
  experiment->add_option("-q,--fdr", cfg.q, "BH level for the power/FDP summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_cli_error(e.what());
  }

  for (CLI::App* sub : {cov, tailprob, scan, pvalues, verify, sensitivity, experiment}) {
    if (sub->parsed()) cfg.subcommand = sub->get_name();
  }
  if (cfg.subcommand.empty()) {
    std::cerr << app.help();
    return 2;
  }
  return scanstat::run(cfg, std::cout, std::cerr);
}
