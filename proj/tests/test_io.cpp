#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "scanstat/io.hpp"

using namespace scanstat;

TEST_CASE("config defaults resolve per subcommand") {
  RunConfig base;
  base.subcommand = "tailprob";
  base.n = 7;
  base.w = 3;
  base.s = 3.0;
  const RunConfig t = resolve_config(base);
  CHECK(t.family == "normal");
  CHECK(t.sigma == 1.0);
  CHECK(t.error_target == 5e-4);
  CHECK(t.coarse_target == 0.0);
  CHECK(t.format == "json");

  RunConfig e;
  e.subcommand = "experiment";
  const RunConfig r = resolve_config(e);
  CHECK(r.family == "t");
  CHECK(r.nu == 7.0);
  CHECK(r.sigma == 4.0);
  CHECK(r.rho == 0.2);
  CHECK(r.w == 10);
  CHECK(r.error_target == 1.5e-3);
  CHECK(r.coarse_target == 8e-3);
  CHECK(r.format == "csv");

  RunConfig v;
  v.subcommand = "verify";
  const RunConfig rv = resolve_config(v);
  CHECK(rv.n == 7);
  CHECK(rv.w == 3);
  CHECK(rv.s == 3.0);
}

TEST_CASE("json config application is strict") {
  RunConfig cfg;
  cfg.subcommand = "tailprob";
  apply_json_config(cfg, Json{{"n", 9}, {"w", 2}, {"s", 4.5}, {"rho", 0.3}});
  CHECK(cfg.n == 9);
  CHECK(cfg.w == 2);
  CHECK(cfg.s == 4.5);
  CHECK(cfg.rho == 0.3);
  CHECK_THROWS_AS(apply_json_config(cfg, Json{{"frobnicate", 1}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(apply_json_config(cfg, Json{{"n", "nine"}}), std::invalid_argument);
  CHECK_THROWS_AS(apply_json_config(cfg, Json{{"lengths", Json{{"a", 1}}}}),
                  std::invalid_argument);

  // null resets an optional numeric to unset
  apply_json_config(cfg, Json{{"s", nullptr}});
  CHECK(std::isnan(cfg.s));

  // a resolved config snapshot re-applies cleanly (round trip)
  RunConfig resolved = resolve_config([] {
    RunConfig c;
    c.subcommand = "experiment";
    return c;
  }());
  RunConfig copy;
  copy.subcommand = "experiment";
  apply_json_config(copy, config_json(resolved));
  CHECK(config_json(copy) == config_json(resolved));
}

TEST_CASE("series csv parses, validates and round-trips") {
  std::istringstream in(
      "# comment line\n"
      "id,values\n"
      "g1,1.5;2;-0.25\n"
      "g2,4;5\n");
  const std::vector<Series> series = parse_series_csv(in, "test");
  REQUIRE(series.size() == 2);
  CHECK(series[0].id == "g1");
  CHECK(series[0].values == std::vector<double>{1.5, 2.0, -0.25});
  CHECK(series[1].values.size() == 2);

  std::ostringstream out;
  write_series_csv(out, series);
  std::istringstream back(out.str());
  const std::vector<Series> again = parse_series_csv(back, "round");
  REQUIRE(again.size() == 2);
  CHECK(again[0].values == series[0].values);
  CHECK(again[1].id == "g2");

  auto expect_throw = [](const std::string& text) {
    std::istringstream bad(text);
    CHECK_THROWS_AS(parse_series_csv(bad, "bad"), std::invalid_argument);
  };
  expect_throw("");                                // empty file
  expect_throw("id,values\n");                     // no rows
  expect_throw("wrong,header\ng,1\n");             // header
  expect_throw("id,values\ng1,1;2\ng1,3\n");       // duplicate id
  expect_throw("id,values\ng1,1;x;3\n");           // malformed number
  expect_throw("id,values\ng1,\n");                // empty values
  expect_throw("id,values\n,1;2\n");               // empty id
}

TEST_CASE("matrix csv round-trips through the writer") {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 0.25, 0.25, 1.0;
  std::ostringstream out;
  write_matrix_csv(out, m, Json{{"note", "x"}});
  CHECK(out.str().find("# note: x") != std::string::npos);
  std::istringstream in(out.str());
  const SymmetricMatrix back = read_matrix_csv(in, "round");
  CHECK(back.order() == 2);
  CHECK(back(0, 1) == 0.25);

  std::istringstream ragged("1,0.5\n0.5\n");
  CHECK_THROWS_AS(read_matrix_csv(ragged, "ragged"), std::invalid_argument);
  std::istringstream askew("1,0.5\n0.4,1\n");
  CHECK_THROWS_AS(read_matrix_csv(askew, "askew"), std::invalid_argument);
}

TEST_CASE("reports render as csv and json with display twins") {
  Report r;
  r.columns = {"id", "p"};
  r.display = {1};
  r.rows.push_back({"g1", 0.123456789123456789});
  r.meta["w"] = 3;

  std::ostringstream csv;
  write_report(r, csv, "csv");
  CHECK(csv.str().find("# w: 3") != std::string::npos);
  CHECK(csv.str().find("id,p,p_display") != std::string::npos);
  CHECK(csv.str().find("0.123457") != std::string::npos);   // 6 significant digits
  CHECK(csv.str().find("0.12345678912345678") != std::string::npos);

  std::ostringstream js;
  write_report(r, js, "json");
  const Json doc = Json::parse(js.str());
  CHECK(doc["meta"]["w"] == 3);
  CHECK(doc["rows"][0]["id"] == "g1");
  CHECK(doc["rows"][0]["p"].get<double>() == 0.123456789123456789);
  CHECK(doc["rows"][0]["p_display"] == "0.123457");
}

TEST_CASE("number formatting is full precision and locale independent") {
  CHECK(format_full(0.1) == "0.10000000000000001");
  CHECK(std::stod(format_full(0.1)) == 0.1);
  CHECK(std::stod(format_full(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(format_display(0.000123456789) == "0.000123457");
}

TEST_CASE("run() validates before computing") {
  std::ostringstream out, err;
  RunConfig cfg;
  cfg.subcommand = "tailprob";  // missing n/w/s
  CHECK(run(cfg, out, err) == 2);
  const Json e = Json::parse(err.str());
  CHECK(e["error"]["kind"] == "validation");
  CHECK(e["error"]["code"] == 2);

  std::ostringstream out2, err2;
  cfg.n = 7;
  cfg.w = 3;
  cfg.s = 3.0;
  cfg.rho = 5.0;  // out of range
  CHECK(run(cfg, out2, err2) == 2);
}

TEST_CASE("run() computes a tail probability end to end") {
  RunConfig cfg;
  cfg.subcommand = "tailprob";
  cfg.structure = "common";
  cfg.rho = 0.0;
  cfg.n = 7;
  cfg.w = 3;
  cfg.s = 3.0;
  std::ostringstream out, err;
  REQUIRE(run(cfg, out, err) == 0);
  const Json doc = Json::parse(out.str());
  CHECK(std::fabs(doc["value"].get<double>() - 0.14541) < 0.003);
  CHECK(doc["converged"].get<bool>());
  CHECK(doc["error"].get<double>() > 0.0);
  CHECK(doc["config"]["subcommand"] == "tailprob");
}

TEST_CASE("run() rejects numerical failures with exit 3") {
  // Common rho below the bound for n: construction fails as validation (2);
  // an indefinite explicit matrix without --repair is a numerical error (3).
  RunConfig cfg;
  cfg.subcommand = "cov";
  cfg.structure = "general";
  cfg.n = 3;
  cfg.w = 2;
  const std::string path = "/tmp/scanstat_test_indefinite.csv";
  {
    std::ofstream f(path);
    f << "1,0.9,-0.9\n0.9,1,0.9\n-0.9,0.9,1\n";
  }
  cfg.matrix_file = path;
  std::ostringstream out, err;
  CHECK(run(cfg, out, err) == 3);
  const Json e = Json::parse(err.str());
  CHECK(e["error"]["kind"] == "numerical");

  // the same matrix with repair succeeds
  RunConfig fixed = cfg;
  fixed.repair = true;
  std::ostringstream out2, err2;
  CHECK(run(fixed, out2, err2) == 0);
}

TEST_CASE("run() scan subcommand reports per-series statistics") {
  const std::string path = "/tmp/scanstat_test_series.csv";
  {
    std::ofstream f(path);
    f << "id,values\na,1;2;3;4\nb,5;1;1;1\n";
  }
  RunConfig cfg;
  cfg.subcommand = "scan";
  cfg.input = path;
  cfg.w = 2;
  cfg.format = "json";
  std::ostringstream out, err;
  REQUIRE(run(cfg, out, err) == 0);
  const Json doc = Json::parse(out.str());
  REQUIRE(doc["rows"].size() == 2);
  CHECK(doc["rows"][0]["id"] == "a");
  CHECK(doc["rows"][0]["statistic"].get<double>() == 7.0);
  CHECK(doc["rows"][0]["t_star"].get<int>() == 3);
  CHECK(doc["rows"][1]["statistic"].get<double>() == 6.0);
  CHECK(doc["rows"][1]["t_star"].get<int>() == 1);
}

TEST_CASE("run() pvalues subcommand attaches BH and errors") {
  const std::string path = "/tmp/scanstat_test_batch.csv";
  {
    std::ofstream f(path);
    f << "id,values\n";
    f << "n1,0.3;-0.5;0.8;0.1;-0.2;0.4;0.0;0.6;-0.7;0.2\n";
    f << "n2,0.1;0.9;-0.3;0.5;0.2;-0.6;0.7;0.3;-0.1;0.0\n";
  }
  RunConfig cfg;
  cfg.subcommand = "pvalues";
  cfg.input = path;
  cfg.structure = "common";
  cfg.rho = 0.0;
  cfg.w = 3;
  cfg.format = "json";
  std::ostringstream out, err;
  REQUIRE(run(cfg, out, err) == 0);
  const Json doc = Json::parse(out.str());
  REQUIRE(doc["rows"].size() == 2);
  for (const Json& row : doc["rows"]) {
    const double p = row["p"].get<double>();
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(row["p_bh"].get<double>() >= p);
    CHECK(row["p_error"].get<double>() > 0.0);
  }
  CHECK(doc["meta"]["non_converged"] == 0);
}

TEST_CASE("run() sensitivity emits the grid") {
  RunConfig cfg;
  cfg.subcommand = "sensitivity";
  cfg.structure = "common";
  cfg.grid_w = {3};
  cfg.grid_g = {2, 4};
  cfg.grid_rho = {0.0, 0.5, 1.0};
  cfg.format = "json";
  std::ostringstream out, err;
  REQUIRE(run(cfg, out, err) == 0);
  const Json doc = Json::parse(out.str());
  REQUIRE(doc["rows"].size() == 6);
  // g=2: 8 rho + 1; g=4: 9 rho
  for (const Json& row : doc["rows"]) {
    const double rho = row["rho"].get<double>();
    const double cov = row["covariance"].get<double>();
    if (row["g"].get<int>() == 2) CHECK(cov == doctest::Approx(8 * rho + 1));
    else CHECK(cov == doctest::Approx(9 * rho));
  }
}

TEST_CASE("output lands in a file when requested") {
  RunConfig cfg;
  cfg.subcommand = "sensitivity";
  cfg.structure = "auto";
  cfg.grid_w = {3};
  cfg.grid_g = {2};
  cfg.grid_rho = {0.25};
  cfg.output = "/tmp/scanstat_test_grid.csv";
  std::ostringstream out, err;
  REQUIRE(run(cfg, out, err) == 0);
  CHECK(out.str().empty());
  std::ifstream f("/tmp/scanstat_test_grid.csv");
  std::stringstream buf;
  buf << f.rdbuf();
  CHECK(buf.str().find("1.7226") != std::string::npos);
}
