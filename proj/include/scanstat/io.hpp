#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "scanstat/covariance.hpp"
#include "scanstat/matrix.hpp"
#include "scanstat/scan.hpp"
#include "scanstat/simulate.hpp"

namespace scanstat {

using Json = nlohmann::json;

// Flat configuration shared by every subcommand; unused fields are ignored.
// A JSON config file mirrors these keys one-to-one and command-line flags
// override whatever the file set. Zero/empty/NaN sentinels mean "not set" and
// resolve to per-subcommand defaults before validation; the resolved values
// are what reports embed.
struct RunConfig {
  std::string subcommand;

  // model
  std::string structure = "common";  // common | auto | general
  double rho = kUnset;
  std::string matrix_file;           // general: n x n correlation CSV
  bool repair = false;               // general: repair non-PD input instead of failing
  double sigma = 0.0;                // 0 = subcommand default
  std::string family;                // normal | t; empty = subcommand default
  double nu = 0.0;
  double theta0 = 0.0;
  int n = 0;                         // process length (0 = take from matrix file)
  int w = 0;
  double s = kUnset;

  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

  // integration; error_target 0 means the subcommand default
  // (5e-4 everywhere except experiment, which uses 1.5e-3)
  double error_target = 0.0;
  int replications = 12;
  std::uint64_t initial_points = 1u << 10;
  std::uint64_t max_points = 1ull << 22;
  bool strict = false;               // non-convergence becomes a hard failure
  // two-tier batch integration; unset -> 8e-3 for experiment, off elsewhere
  double coarse_target = kUnset;
  double refine_below = 0.1;

  // simulation protocol (verify)
  int n_outer = 1000;                // N realizations
  int j_inner = 1000;                // J samples per realization

  // sensitivity grids
  std::vector<int> grid_w{10};
  std::vector<int> grid_g{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<double> grid_rho{-1.0, -0.75, -0.5, -0.25, -0.1, 0.0,
                               0.1,  0.25,  0.5,  0.75,  1.0};

  // experiment
  int series_count = 500;
  bool full_scale = false;           // 6000 series
  bool null_only = false;            // drop all effects
  double effect_fraction = 0.04;
  int effect_length = 10;
  std::vector<double> effect_heights{12.0, 14.0, 16.0, 18.0};
  std::vector<int> lengths{100, 500, 1000};
  std::vector<double> length_probs{0.4, 0.5, 0.1};
  double q = 0.05;

  std::uint64_t seed = 0;
  std::string input;                 // series CSV (scan, pvalues)
  std::string output;                // empty or "-" writes to stdout
  std::string format;                // csv | json; empty = subcommand default
};

// Fills every sentinel with the subcommand's default (e.g. verify: n=7, w=3,
// s=3; experiment: the multi-process defaults) and returns the result.
RunConfig resolve_config(const RunConfig& cfg);

// Applies the keys of a flat JSON document onto cfg. Unknown keys and type
// mismatches are validation errors.
void apply_json_config(RunConfig& cfg, const Json& doc);
void apply_config_file(RunConfig& cfg, const std::string& path);

// Fully-resolved snapshot embedded into every report.
Json config_json(const RunConfig& cfg);

CovarianceStructure structure_from_config(const RunConfig& cfg);
ProcessModel model_from_config(const RunConfig& cfg, int n);
IntegrationConfig integration_from_config(const RunConfig& cfg, double default_target = 5e-4);

// Series files: header `id,values`, one row per series, values separated by
// semicolons. `#` lines are comments. Ragged lengths are fine; duplicate ids,
// malformed numbers and empty value lists are rejected with their row number.
std::vector<Series> parse_series_csv(std::istream& in, const std::string& name);
std::vector<Series> parse_series_csv(const std::string& path);
void write_series_csv(std::ostream& out, const std::vector<Series>& series);
void write_series_csv(const std::string& path, const std::vector<Series>& series);

// Plain n x n numeric CSV (comments allowed), symmetrized on read; asymmetry
// beyond 1e-8 is an error.
SymmetricMatrix read_matrix_csv(std::istream& in, const std::string& name);
SymmetricMatrix read_matrix_csv(const std::string& path);
void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m, const Json& meta);

// One tabular report. Cells are JSON scalars; `display` lists columns that
// get an extra `<name>_display` twin rounded to 6 significant digits next to
// the full-precision value. meta (config, seed, version, summary numbers) is
// emitted as `#` comment lines in CSV and as a "meta" object in JSON.
struct Report {
  std::vector<std::string> columns;
  std::vector<std::size_t> display;
  std::vector<std::vector<Json>> rows;
  Json meta = Json::object();
};

void write_report(const Report& report, std::ostream& out, const std::string& format);
void write_report(const Report& report, const std::string& path, const std::string& format);

// Full double precision (17 significant digits), locale-independent.
std::string format_full(double v);
// 6 significant digits, for the display twins.
std::string format_display(double v);

// Runs one subcommand end to end: validates cfg, computes, writes the report
// to cfg.output (or `out`). Returns the process exit code: 0 success,
// 2 validation error, 3 numerical failure; failures also emit one line of
// error JSON on `err`.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace scanstat
