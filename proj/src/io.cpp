#include "scanstat/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string_view>

#include "scanstat/version.hpp"

namespace scanstat {

namespace {

// Integration ran out of points in strict mode, unrepaired non-PD input, etc.
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view token, const std::string& name, int row) {
  token = trim(token);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw std::invalid_argument(name + " row " + std::to_string(row) +
                                ": malformed number '" + std::string(token) + "'");
  }
  return value;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string cell_to_csv(const Json& c) {
  switch (c.type()) {
    case Json::value_t::string:
      return csv_escape(c.get<std::string>());
    case Json::value_t::boolean:
      return c.get<bool>() ? "true" : "false";
    case Json::value_t::number_integer:
      return std::to_string(c.get<std::int64_t>());
    case Json::value_t::number_unsigned:
      return std::to_string(c.get<std::uint64_t>());
    case Json::value_t::number_float:
      return format_full(c.get<double>());
    case Json::value_t::null:
      return "";
    default:
      throw std::logic_error("report cells must be scalars");
  }
}

std::string cell_to_display(const Json& c) {
  if (c.is_number_float()) return format_display(c.get<double>());
  return cell_to_csv(c);
}

Family family_enum(const RunConfig& c) {
  return c.family == "t" ? Family::StudentT : Family::Normal;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Bundled 7 x 7 correlation matrix used by the verify subcommand as its
// general-structure example. Quoted at three decimals it is marginally
// indefinite (smallest eigenvalue around -9e-4), so it goes through the
// nearest-PD projection before any model is built on it.
SymmetricMatrix bundled_general_example() {
  Eigen::MatrixXd m(7, 7);
  m << 1.000, -0.314, -0.454, -0.154, -0.107, 0.395, 0.650,
      -0.314, 1.000, 0.050, 0.452, 0.095, 0.474, -0.230,
      -0.454, 0.050, 1.000, 0.110, 0.538, -0.342, 0.210,
      -0.154, 0.452, 0.110, 1.000, -0.359, -0.045, -0.127,
      -0.107, 0.095, 0.538, -0.359, 1.000, -0.312, -0.035,
      0.395, 0.474, -0.342, -0.045, -0.312, 1.000, 0.495,
      0.650, -0.230, 0.210, -0.127, -0.035, 0.495, 1.000;
  return nearest_pd(SymmetricMatrix(m));
}

}  // namespace

std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_display(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------- config

namespace {

void set_d(double& dst, const Json& v, const char* key) {
  if (v.is_null()) {
    dst = RunConfig::kUnset;
    return;
  }
  if (!v.is_number()) throw std::invalid_argument(std::string("config: ") + key + " must be a number");
  dst = v.get<double>();
}

void set_i(int& dst, const Json& v, const char* key) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) {
    throw std::invalid_argument(std::string("config: ") + key + " must be an integer");
  }
  dst = v.get<int>();
}

void set_u(std::uint64_t& dst, const Json& v, const char* key) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) {
    throw std::invalid_argument(std::string("config: ") + key + " must be an integer");
  }
  dst = v.get<std::uint64_t>();
}

void set_b(bool& dst, const Json& v, const char* key) {
  if (!v.is_boolean()) throw std::invalid_argument(std::string("config: ") + key + " must be a boolean");
  dst = v.get<bool>();
}

void set_s(std::string& dst, const Json& v, const char* key) {
  if (!v.is_string()) throw std::invalid_argument(std::string("config: ") + key + " must be a string");
  dst = v.get<std::string>();
}

void set_vd(std::vector<double>& dst, const Json& v, const char* key) {
  if (!v.is_array()) throw std::invalid_argument(std::string("config: ") + key + " must be an array");
  dst.clear();
  for (const Json& e : v) {
    if (!e.is_number()) throw std::invalid_argument(std::string("config: ") + key + " must hold numbers");
    dst.push_back(e.get<double>());
  }
}

void set_vi(std::vector<int>& dst, const Json& v, const char* key) {
  if (!v.is_array()) throw std::invalid_argument(std::string("config: ") + key + " must be an array");
  dst.clear();
  for (const Json& e : v) {
    if (!e.is_number_integer() && !e.is_number_unsigned()) {
      throw std::invalid_argument(std::string("config: ") + key + " must hold integers");
    }
    dst.push_back(e.get<int>());
  }
}

}  // namespace

void apply_json_config(RunConfig& c, const Json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  for (const auto& [key, v] : doc.items()) {
    if (key == "subcommand") set_s(c.subcommand, v, "subcommand");
    else if (key == "structure") set_s(c.structure, v, "structure");
    else if (key == "rho") set_d(c.rho, v, "rho");
    else if (key == "matrix_file") set_s(c.matrix_file, v, "matrix_file");
    else if (key == "repair") set_b(c.repair, v, "repair");
    else if (key == "sigma") set_d(c.sigma, v, "sigma");
    else if (key == "family") set_s(c.family, v, "family");
    else if (key == "nu") set_d(c.nu, v, "nu");
    else if (key == "theta0") set_d(c.theta0, v, "theta0");
    else if (key == "n") set_i(c.n, v, "n");
    else if (key == "w") set_i(c.w, v, "w");
    else if (key == "s") set_d(c.s, v, "s");
    else if (key == "error_target") set_d(c.error_target, v, "error_target");
    else if (key == "replications") set_i(c.replications, v, "replications");
    else if (key == "initial_points") set_u(c.initial_points, v, "initial_points");
    else if (key == "max_points") set_u(c.max_points, v, "max_points");
    else if (key == "strict") set_b(c.strict, v, "strict");
    else if (key == "coarse_target") set_d(c.coarse_target, v, "coarse_target");
    else if (key == "refine_below") set_d(c.refine_below, v, "refine_below");
    else if (key == "n_outer") set_i(c.n_outer, v, "n_outer");
    else if (key == "j_inner") set_i(c.j_inner, v, "j_inner");
    else if (key == "grid_w") set_vi(c.grid_w, v, "grid_w");
    else if (key == "grid_g") set_vi(c.grid_g, v, "grid_g");
    else if (key == "grid_rho") set_vd(c.grid_rho, v, "grid_rho");
    else if (key == "series_count") set_i(c.series_count, v, "series_count");
    else if (key == "full_scale") set_b(c.full_scale, v, "full_scale");
    else if (key == "null_only") set_b(c.null_only, v, "null_only");
    else if (key == "effect_fraction") set_d(c.effect_fraction, v, "effect_fraction");
    else if (key == "effect_length") set_i(c.effect_length, v, "effect_length");
    else if (key == "effect_heights") set_vd(c.effect_heights, v, "effect_heights");
    else if (key == "lengths") set_vi(c.lengths, v, "lengths");
    else if (key == "length_probs") set_vd(c.length_probs, v, "length_probs");
    else if (key == "q") set_d(c.q, v, "q");
    else if (key == "seed") set_u(c.seed, v, "seed");
    else if (key == "input") set_s(c.input, v, "input");
    else if (key == "output") set_s(c.output, v, "output");
    else if (key == "format") set_s(c.format, v, "format");
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

void apply_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::exception& e) {
    throw std::invalid_argument("config file " + path + ": " + e.what());
  }
  apply_json_config(c, doc);
}

Json config_json(const RunConfig& c) {
  // Unset numerics (NaN) become real JSON nulls so the echoed config parses
  // back and compares cleanly; nlohmann prints NaN as null but NaN != NaN.
  const auto opt = [](double v) { return std::isnan(v) ? Json() : Json(v); };
  Json j;
  j["subcommand"] = c.subcommand;
  j["structure"] = c.structure;
  j["rho"] = opt(c.rho);
  j["matrix_file"] = c.matrix_file;
  j["repair"] = c.repair;
  j["sigma"] = c.sigma;
  j["family"] = c.family;
  j["nu"] = c.nu;
  j["theta0"] = c.theta0;
  j["n"] = c.n;
  j["w"] = c.w;
  j["s"] = opt(c.s);
  j["error_target"] = c.error_target;
  j["replications"] = c.replications;
  j["initial_points"] = c.initial_points;
  j["max_points"] = c.max_points;
  j["strict"] = c.strict;
  j["coarse_target"] = opt(c.coarse_target);
  j["refine_below"] = c.refine_below;
  j["n_outer"] = c.n_outer;
  j["j_inner"] = c.j_inner;
  j["grid_w"] = c.grid_w;
  j["grid_g"] = c.grid_g;
  j["grid_rho"] = c.grid_rho;
  j["series_count"] = c.series_count;
  j["full_scale"] = c.full_scale;
  j["null_only"] = c.null_only;
  j["effect_fraction"] = c.effect_fraction;
  j["effect_length"] = c.effect_length;
  j["effect_heights"] = c.effect_heights;
  j["lengths"] = c.lengths;
  j["length_probs"] = c.length_probs;
  j["q"] = c.q;
  j["seed"] = c.seed;
  j["input"] = c.input;
  j["output"] = c.output;
  j["format"] = c.format;
  return j;
}

RunConfig resolve_config(const RunConfig& in) {
  RunConfig c = in;
  const bool experiment = c.subcommand == "experiment";
  if (c.family.empty()) c.family = experiment ? "t" : "normal";
  if (c.sigma == 0.0) c.sigma = experiment ? 4.0 : 1.0;
  if (std::isnan(c.rho)) c.rho = experiment ? 0.2 : 0.0;
  if (experiment) {
    c.structure = "auto";  // the multi-process study models AR-type processes
    if (c.family == "t" && c.nu == 0.0) c.nu = 7.0;
    if (c.w == 0) c.w = 10;
    if (c.full_scale) c.series_count = 6000;
    if (c.null_only) c.effect_fraction = 0.0;
  }
  if (c.subcommand == "verify") {
    if (c.n == 0) c.n = 7;
    if (c.w == 0) c.w = 3;
    if (std::isnan(c.s)) c.s = 3.0;
  }
  if (c.error_target == 0.0) c.error_target = experiment ? 1.5e-3 : 5e-4;
  if (std::isnan(c.coarse_target)) c.coarse_target = experiment ? 8e-3 : 0.0;
  if (c.format.empty()) c.format = c.subcommand == "tailprob" ? "json" : "csv";
  return c;
}

namespace {

void validate_config(const RunConfig& c) {
  static const std::set<std::string> kSubcommands{
      "cov", "tailprob", "scan", "pvalues", "verify", "sensitivity", "experiment"};
  require(kSubcommands.count(c.subcommand) != 0,
          "unknown subcommand '" + c.subcommand + "'");
  require(c.structure == "common" || c.structure == "auto" || c.structure == "general",
          "structure must be common, auto or general");
  require(c.family == "normal" || c.family == "t", "family must be normal or t");
  if (c.family == "t") require(c.nu > 0.0, "nu must be positive for the t family");
  require(c.format == "csv" || c.format == "json", "format must be csv or json");
  require(c.sigma > 0.0 && std::isfinite(c.sigma), "sigma must be positive");
  require(std::isfinite(c.theta0), "theta0 must be finite");
  require(c.error_target > 0.0 && std::isfinite(c.error_target),
          "error_target must be positive");
  require(c.replications >= 2, "replications must be at least 2");
  require(c.coarse_target >= 0.0 && std::isfinite(c.coarse_target),
          "coarse_target must be non-negative");
  require(c.refine_below >= 0.0 && c.refine_below <= 1.0,
          "refine_below must lie in [0, 1]");
  require(c.initial_points >= 2, "initial_points must be at least 2");
  require(c.max_points >= c.initial_points, "max_points must cover initial_points");

  const bool needs_model = c.subcommand == "cov" || c.subcommand == "tailprob" ||
                           c.subcommand == "pvalues" || c.subcommand == "verify";
  if (needs_model && c.structure != "general") {
    require(std::isfinite(c.rho) && c.rho >= -1.0 && c.rho <= 1.0,
            "rho must lie in [-1, 1]");
  }
  if (needs_model && c.structure == "general") {
    require(!c.matrix_file.empty(), "general structure needs matrix_file");
  }

  if (c.subcommand == "cov" || c.subcommand == "tailprob") {
    require(c.w >= 1, "w must be at least 1");
    if (c.structure != "general") require(c.n >= 2, "n must be at least 2");
  }
  if (c.subcommand == "tailprob") {
    require(std::isfinite(c.s), "threshold s is required");
  }
  if (c.subcommand == "scan" || c.subcommand == "pvalues") {
    require(!c.input.empty(), "input series file is required");
    require(c.w >= 1, "w must be at least 1");
  }
  if (c.subcommand == "verify") {
    require(c.n >= 2, "n must be at least 2");
    require(c.w >= 1 && c.w <= c.n, "w must lie in [1, n]");
    require(std::isfinite(c.s), "threshold s is required");
    require(c.n_outer >= 1, "n_outer must be at least 1");
    require(c.j_inner >= 2, "j_inner must be at least 2");
    if (c.family == "t") {
      require(c.nu > 2.0, "verify needs nu > 2 (finite covariance)");
    }
  }
  if (c.subcommand == "sensitivity") {
    require(c.structure != "general",
            "sensitivity sweeps a scalar rho; use structure common or auto");
    require(!c.grid_w.empty() && !c.grid_g.empty() && !c.grid_rho.empty(),
            "sensitivity grids must be non-empty");
    for (int w : c.grid_w) require(w >= 1, "grid_w entries must be at least 1");
    for (int g : c.grid_g) require(g >= 0, "grid_g entries must be non-negative");
  }
  if (c.subcommand == "experiment") {
    require(c.series_count >= 1, "series_count must be at least 1");
    require(c.q > 0.0 && c.q < 1.0, "q must lie in (0, 1)");
    require(c.effect_fraction >= 0.0 && c.effect_fraction <= 1.0,
            "effect_fraction must lie in [0, 1]");
    require(c.w >= 1, "w must be at least 1");
  }
}

}  // namespace

// ---------------------------------------------------------------- series csv

std::vector<Series> parse_series_csv(std::istream& in, const std::string& name) {
  std::vector<Series> out;
  std::set<std::string> seen;
  std::string line;
  int row = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string_view sv = line;
    if (trim(sv).empty() || trim(sv).front() == '#') continue;
    if (!header_seen) {
      require(trim(sv) == "id,values",
              name + " row " + std::to_string(row) + ": expected header id,values");
      header_seen = true;
      continue;
    }
    const auto comma = sv.find(',');
    require(comma != std::string_view::npos,
            name + " row " + std::to_string(row) + ": expected id,values");
    std::string id(trim(sv.substr(0, comma)));
    require(!id.empty(), name + " row " + std::to_string(row) + ": empty id");
    require(seen.insert(id).second,
            name + " row " + std::to_string(row) + ": duplicate id '" + id + "'");
    std::string_view values = sv.substr(comma + 1);
    require(!trim(values).empty(),
            name + " row " + std::to_string(row) + ": empty values field");
    Series s{std::move(id), {}};
    std::size_t start = 0;
    for (;;) {
      const auto semi = values.find(';', start);
      const std::string_view token =
          values.substr(start, semi == std::string_view::npos ? std::string_view::npos
                                                              : semi - start);
      s.values.push_back(parse_number(token, name, row));
      if (semi == std::string_view::npos) break;
      start = semi + 1;
    }
    out.push_back(std::move(s));
  }
  require(header_seen, name + ": empty file");
  require(!out.empty(), name + ": no series rows");
  return out;
}

std::vector<Series> parse_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open series file " + path);
  return parse_series_csv(in, path);
}

void write_series_csv(std::ostream& out, const std::vector<Series>& series) {
  out << "id,values\n";
  for (const Series& s : series) {
    out << s.id << ',';
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      if (i) out << ';';
      out << format_full(s.values[i]);
    }
    out << '\n';
  }
}

void write_series_csv(const std::string& path, const std::vector<Series>& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file " + path);
  write_series_csv(out, series);
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------- matrix csv

SymmetricMatrix read_matrix_csv(std::istream& in, const std::string& name) {
  std::vector<std::vector<double>> rows;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string_view sv = line;
    if (trim(sv).empty() || trim(sv).front() == '#') continue;
    std::vector<double> entries;
    std::size_t start = 0;
    for (;;) {
      const auto comma = sv.find(',', start);
      const std::string_view token =
          sv.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                           : comma - start);
      entries.push_back(parse_number(token, name, row));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(entries));
  }
  require(!rows.empty(), name + ": empty matrix file");
  const std::size_t n = rows.size();
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    require(rows[i].size() == n, name + ": row " + std::to_string(i + 1) + " has " +
                                     std::to_string(rows[i].size()) + " columns, expected " +
                                     std::to_string(n));
    for (std::size_t j = 0; j < n; ++j) m(i, j) = rows[i][j];
  }
  try {
    return SymmetricMatrix(m);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(name + ": " + e.what());
  }
}

SymmetricMatrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open matrix file " + path);
  return read_matrix_csv(in, path);
}

void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m, const Json& meta) {
  for (const auto& [key, v] : meta.items()) {
    out << "# " << key << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_full(m(i, j));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------- reports

void write_report(const Report& report, std::ostream& out, const std::string& format) {
  for (const auto& row : report.rows) {
    if (row.size() != report.columns.size()) {
      throw std::logic_error("report row width disagrees with the column list");
    }
  }
  for (std::size_t d : report.display) {
    if (d >= report.columns.size()) throw std::logic_error("display column out of range");
  }
  if (format == "json") {
    Json doc;
    doc["meta"] = report.meta;
    Json cols = Json::array();
    for (const auto& c : report.columns) cols.push_back(c);
    for (std::size_t d : report.display) cols.push_back(report.columns[d] + "_display");
    doc["columns"] = cols;
    Json rows = Json::array();
    for (const auto& row : report.rows) {
      Json obj;
      for (std::size_t j = 0; j < row.size(); ++j) obj[report.columns[j]] = row[j];
      for (std::size_t d : report.display) {
        obj[report.columns[d] + "_display"] = cell_to_display(row[d]);
      }
      rows.push_back(std::move(obj));
    }
    doc["rows"] = std::move(rows);
    out << doc.dump(2) << '\n';
    return;
  }
  if (format != "csv") throw std::invalid_argument("format must be csv or json");
  for (const auto& [key, v] : report.meta.items()) {
    out << "# " << key << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
  }
  for (std::size_t j = 0; j < report.columns.size(); ++j) {
    if (j) out << ',';
    out << report.columns[j];
  }
  for (std::size_t d : report.display) out << ',' << report.columns[d] << "_display";
  out << '\n';
  for (const auto& row : report.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ',';
      out << cell_to_csv(row[j]);
    }
    for (std::size_t d : report.display) out << ',' << cell_to_display(row[d]);
    out << '\n';
  }
}

void write_report(const Report& report, const std::string& path, const std::string& format) {
  std::ostringstream text;
  write_report(report, text, format);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open output file " + path);
  f << text.str();
  f.flush();
  if (!f) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------- run()

namespace {

void deliver(const std::string& text, const RunConfig& c, std::ostream& out) {
  if (c.output.empty() || c.output == "-") {
    out << text;
    out.flush();
    return;
  }
  std::ofstream f(c.output, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open output file " + c.output);
  f << text;
  f.flush();
  if (!f) throw std::runtime_error("write failed for " + c.output);
}

Json base_meta(const RunConfig& c) {
  Json m;
  m["version"] = kVersion;
  m["seed"] = c.seed;
  m["config"] = config_json(c);
  return m;
}

// Resolves the general-structure matrix and the process length together.
struct ResolvedModel {
  CovarianceStructure structure;
  int n;
};

ResolvedModel resolve_structure(const RunConfig& c) {
  if (c.structure == "common") {
    return {CovarianceStructure::common(c.rho), c.n};
  }
  if (c.structure == "auto") {
    return {CovarianceStructure::autocorrelated(c.rho), c.n};
  }
  require(!c.matrix_file.empty(), "general structure needs matrix_file");
  SymmetricMatrix m = read_matrix_csv(c.matrix_file);
  for (int i = 0; i < m.order(); ++i) {
    require(std::fabs(m(i, i) - 1.0) <= 1e-8,
            c.matrix_file + ": correlation matrix needs a unit diagonal");
  }
  if (c.repair && !is_positive_definite(m)) m = nearest_pd(m);
  const int order = m.order();
  if (c.n != 0 && c.n != order) {
    throw std::invalid_argument("n = " + std::to_string(c.n) +
                                " disagrees with the matrix order " + std::to_string(order));
  }
  return {CovarianceStructure::general(m), order};
}

void cmd_cov(const RunConfig& c, std::ostream& out) {
  const ResolvedModel rm = resolve_structure(c);
  require(c.w >= 1 && c.w <= rm.n, "w must lie in [1, n]");
  const ProcessModel model(rm.n, rm.structure, c.sigma, family_enum(c), c.nu, c.theta0);
  const MovingSumLaw law = build_sum_covariance(model, c.w);
  Json meta = base_meta(c);
  meta["m"] = law.m;
  meta["sum_mean"] = law.mean;
  std::ostringstream text;
  if (c.format == "json") {
    Json doc;
    doc["meta"] = std::move(meta);
    Json rows = Json::array();
    for (int i = 0; i < law.m; ++i) {
      Json row = Json::array();
      for (int j = 0; j < law.m; ++j) row.push_back(law.sigma_y(i, j));
      rows.push_back(std::move(row));
    }
    doc["sigma_y"] = std::move(rows);
    text << doc.dump(2) << '\n';
  } else {
    write_matrix_csv(text, law.sigma_y.data(), meta);
  }
  deliver(text.str(), c, out);
}

void cmd_tailprob(const RunConfig& c, std::ostream& out) {
  const ResolvedModel rm = resolve_structure(c);
  require(rm.n >= 2, "n must be at least 2");
  require(c.w >= 1 && c.w <= rm.n, "w must lie in [1, n]");
  const ProcessModel model(rm.n, rm.structure, c.sigma, family_enum(c), c.nu, c.theta0);
  const TailProbEstimate est =
      tail_probability(model, c.w, c.s, integration_from_config(c));
  if (c.strict && !est.converged) {
    throw NumericalFailure("integration stopped at error " +
                           format_display(est.error_estimate) + " above the target " +
                           format_display(c.error_target));
  }
  std::ostringstream text;
  if (c.format == "json") {
    Json doc;
    doc["value"] = est.value;
    doc["error"] = est.error_estimate;
    doc["samples"] = est.samples_used;
    doc["converged"] = est.converged;
    doc["config"] = config_json(c);
    doc["version"] = kVersion;
    text << doc.dump(2) << '\n';
  } else {
    Report r;
    r.columns = {"value", "error", "samples", "converged"};
    r.display = {0};
    r.rows.push_back({est.value, est.error_estimate, est.samples_used, est.converged});
    r.meta = base_meta(c);
    write_report(r, text, "csv");
  }
  deliver(text.str(), c, out);
}

void cmd_scan(const RunConfig& c, std::ostream& out) {
  const std::vector<Series> series = parse_series_csv(c.input);
  Report r;
  r.columns = {"id", "statistic", "t_star"};
  r.meta = base_meta(c);
  for (const Series& s : series) {
    ScanResult res{};
    try {
      res = scan_statistic(s, c.w);
    } catch (const std::exception& e) {
      throw std::invalid_argument("series '" + s.id + "': " + e.what());
    }
    r.rows.push_back({s.id, res.statistic, res.argmax});
  }
  std::ostringstream text;
  write_report(r, text, c.format);
  deliver(text.str(), c, out);
}

void cmd_pvalues(const RunConfig& c, std::ostream& out) {
  const std::vector<Series> series = parse_series_csv(c.input);
  const ResolvedModel rm = resolve_structure(c);
  BatchConfig bc{rm.structure, c.sigma,          family_enum(c), c.nu,
                 c.theta0,     c.w,              integration_from_config(c)};
  bc.coarse_target = c.coarse_target;
  bc.refine_below = c.refine_below;
  const BatchReport br = batch_pvalues(series, bc);
  int non_converged = 0;
  Report r;
  r.columns = {"id", "n", "statistic", "t_star", "p", "p_bh", "p_error"};
  r.display = {4, 5};
  for (const BatchRow& row : br.rows) {
    if (!row.ok) throw std::invalid_argument("series '" + row.id + "': " + row.error);
    if (!row.converged) ++non_converged;
    r.rows.push_back({row.id, row.n, row.scan.statistic, row.scan.argmax, row.p_raw,
                      row.p_bh, row.p_error});
  }
  if (c.strict && non_converged > 0) {
    throw NumericalFailure(std::to_string(non_converged) +
                           " series did not reach the integration error target");
  }
  r.meta = base_meta(c);
  r.meta["w"] = br.w;
  r.meta["error_target"] = br.error_target;
  r.meta["non_converged"] = non_converged;
  std::ostringstream text;
  write_report(r, text, c.format);
  deliver(text.str(), c, out);
}

void cmd_verify(const RunConfig& c, std::ostream& out) {
  struct Case {
    std::string structure;
    double rho;  // ignored for general
  };
  std::vector<Case> cases;
  if (c.family == "normal" && c.n == 7) cases.push_back({"general", 0.0});
  if (c.family == "normal") {
    for (double rho : {-0.1, 0.0, 0.1, 0.25, 0.5, 0.75, 1.0}) cases.push_back({"common", rho});
    for (double rho : {-1.0, -0.75, -0.5, -0.25, -0.1, 0.1, 0.25, 0.5, 0.75}) {
      cases.push_back({"auto", rho});
    }
  } else {
    for (double rho : {0.0, 0.25, 0.5, 0.75}) cases.push_back({"common", rho});
    for (double rho : {0.25, 0.5, 0.75}) cases.push_back({"auto", rho});
  }

  const Family fam = family_enum(c);
  // Sample covariances estimate the true covariance, which for the t family
  // is the scale matrix times nu/(nu-2).
  const double cov_factor = fam == Family::StudentT ? c.nu / (c.nu - 2.0) : 1.0;
  const RngStream seed_root(c.seed);

  Report r;
  r.columns = {"structure", "rho", "quantity", "exact", "estimate", "se", "z"};
  r.display = {3, 4};
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const Case& cs = cases[k];
    CovarianceStructure st = cs.structure == "general"
                                 ? CovarianceStructure::general(bundled_general_example())
                                 : (cs.structure == "common"
                                        ? CovarianceStructure::common(cs.rho)
                                        : CovarianceStructure::autocorrelated(cs.rho));
    const ProcessModel model(c.n, st, c.sigma, fam, c.nu, c.theta0);
    const MovingSumLaw law = build_sum_covariance(model, c.w);

    IntegrationConfig icfg = integration_from_config(c);
    icfg.seed = seed_root.child(0x10000 + k).key();
    const TailProbEstimate exact_p = tail_probability(model, c.w, c.s, icfg);
    if (c.strict && !exact_p.converged) {
      throw NumericalFailure("integration missed the error target for " + cs.structure);
    }

    SimPlan plan{c.n_outer, c.j_inner, seed_root.child(k).key(), model, c.w, c.s};
    const CovarianceEstimate ce = estimate_sum_covariance(plan);
    const ProportionEstimate pe = estimate_tail_probability(plan);

    const Json rho_cell =
        cs.structure == "general" ? Json(nullptr) : Json(cs.rho);
    auto add = [&](const char* quantity, double exact, double est, double se) {
      const double z = se > 0.0 ? std::fabs(est - exact) / se
                                : std::numeric_limits<double>::quiet_NaN();
      r.rows.push_back({cs.structure, rho_cell, quantity, exact, est, se, z});
    };
    if (law.m > 2) add("cov_g2", law.sigma_y(0, 2) * cov_factor, ce.mean(0, 2), ce.se(0, 2));
    if (law.m > 4) add("cov_g4", law.sigma_y(0, 4) * cov_factor, ce.mean(0, 4), ce.se(0, 4));
    add("p", exact_p.value, pe.value, pe.se);
  }
  r.meta = base_meta(c);
  r.meta["n_outer"] = c.n_outer;
  r.meta["j_inner"] = c.j_inner;
  std::ostringstream text;
  write_report(r, text, c.format);
  deliver(text.str(), c, out);
}

void cmd_sensitivity(const RunConfig& c, std::ostream& out) {
  const CovarianceStructure::Kind kind = c.structure == "common"
                                             ? CovarianceStructure::Kind::Common
                                             : CovarianceStructure::Kind::Auto;
  const std::vector<SensitivityRow> rows =
      covariance_sensitivity_grid(kind, c.sigma, c.grid_w, c.grid_g, c.grid_rho);
  Report r;
  r.columns = {"structure", "sigma", "w", "g", "overlap_share", "rho", "covariance",
               "in_bounds"};
  r.display = {6};
  for (const SensitivityRow& row : rows) {
    r.rows.push_back({row.structure, row.sigma, row.w, row.g, row.overlap_share, row.rho,
                      row.covariance, row.in_bounds});
  }
  r.meta = base_meta(c);
  std::ostringstream text;
  write_report(r, text, c.format);
  deliver(text.str(), c, out);
}

void cmd_experiment(const RunConfig& c, std::ostream& out) {
  MultiProcessConfig mc;
  mc.series_count = c.series_count;
  mc.effect_fraction = c.effect_fraction;
  mc.effect_length = c.effect_length;
  mc.effect_heights = c.effect_heights;
  mc.lengths = c.lengths;
  mc.length_probs = c.length_probs;
  mc.rho = c.rho;
  mc.sigma = c.sigma;
  mc.nu = c.family == "t" ? c.nu : 0.0;
  mc.w = c.w;
  mc.q = c.q;
  mc.seed = c.seed;
  mc.integration = integration_from_config(c);
  mc.coarse_target = c.coarse_target;
  mc.refine_below = c.refine_below;
  const MultiProcessReport rep = experiment_multi_process(mc);

  Report r;
  r.columns = {"id",     "n",    "has_effect", "effect_start", "effect_height",
               "statistic", "t_star", "p",      "p_bh",       "p_error",
               "rank",   "p_sorted", "p_bh_sorted"};
  r.display = {7, 8};
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const MultiProcessRow& row = rep.rows[i];
    r.rows.push_back({row.id, row.n, row.has_effect, row.effect_start, row.effect_height,
                      row.statistic, row.argmax, row.p_raw, row.p_bh, row.p_error,
                      static_cast<std::int64_t>(i + 1), rep.sorted_p[i],
                      rep.sorted_p_bh[i]});
  }
  r.meta = base_meta(c);
  r.meta["discoveries"] = rep.discoveries;
  r.meta["true_discoveries"] = rep.true_discoveries;
  r.meta["false_discoveries"] = rep.false_discoveries;
  r.meta["power"] = rep.power;
  r.meta["fdp"] = rep.fdp;
  r.meta["q"] = rep.q;
  r.meta["ks_null_pvalue"] = rep.ks_null_pvalue;
  std::ostringstream text;
  write_report(r, text, c.format);
  deliver(text.str(), c, out);
}

int fail(std::ostream& err, const RunConfig& cfg, int code, const char* kind,
         const std::string& message) {
  Json doc;
  doc["error"] = {{"code", code},
                  {"kind", kind},
                  {"message", message},
                  {"subcommand", cfg.subcommand}};
  err << doc.dump() << '\n';
  err.flush();
  return code;
}

}  // namespace

CovarianceStructure structure_from_config(const RunConfig& c) {
  return resolve_structure(c).structure;
}

ProcessModel model_from_config(const RunConfig& c, int n) {
  return ProcessModel(n, structure_from_config(c), c.sigma, family_enum(c), c.nu,
                      c.theta0);
}

IntegrationConfig integration_from_config(const RunConfig& c, double default_target) {
  IntegrationConfig icfg;
  icfg.error_target = c.error_target > 0.0 ? c.error_target : default_target;
  icfg.replications = c.replications;
  icfg.initial_points = c.initial_points;
  icfg.max_points_per_replication = c.max_points;
  icfg.seed = c.seed;
  return icfg;
}

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig rc = resolve_config(cfg);
    validate_config(rc);
    if (rc.subcommand == "cov") cmd_cov(rc, out);
    else if (rc.subcommand == "tailprob") cmd_tailprob(rc, out);
    else if (rc.subcommand == "scan") cmd_scan(rc, out);
    else if (rc.subcommand == "pvalues") cmd_pvalues(rc, out);
    else if (rc.subcommand == "verify") cmd_verify(rc, out);
    else if (rc.subcommand == "sensitivity") cmd_sensitivity(rc, out);
    else cmd_experiment(rc, out);
    return 0;
  } catch (const NotPositiveDefinite& e) {
    return fail(err, cfg, 3, "numerical", e.what());
  } catch (const NearestPdFailure& e) {
    return fail(err, cfg, 3, "numerical", e.what());
  } catch (const NumericalFailure& e) {
    return fail(err, cfg, 3, "numerical", e.what());
  } catch (const std::exception& e) {
    return fail(err, cfg, 2, "validation", e.what());
  }
}

}  // namespace scanstat
