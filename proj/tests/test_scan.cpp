#include <cmath>
#include <vector>

#include "doctest.h"
#include "scanstat/distributions.hpp"
#include "scanstat/rng.hpp"
#include "scanstat/scan.hpp"

using namespace scanstat;

TEST_CASE("moving sums and the scan statistic") {
  const std::vector<double> x{1.0, -2.0, 3.0, 0.5, 4.0};
  const std::vector<double> sums = moving_sums(x, 2);
  CHECK(sums == std::vector<double>{-1.0, 1.0, 3.5, 4.5});
  const ScanResult r = scan_statistic(x, 2);
  CHECK(r.statistic == 4.5);
  CHECK(r.argmax == 4);
  CHECK(r.window == 2);
  // w = n degenerates to the total
  CHECK(scan_statistic(x, 5).statistic == doctest::Approx(6.5));
  CHECK_THROWS_AS(moving_sums(x, 0), std::out_of_range);
  CHECK_THROWS_AS(moving_sums(x, 6), std::out_of_range);
}

TEST_CASE("ties resolve to the earliest window") {
  const std::vector<double> x{2.0, 0.0, 2.0, 0.0};
  const ScanResult r = scan_statistic(x, 1);
  CHECK(r.statistic == 2.0);
  CHECK(r.argmax == 1);
}

TEST_CASE("long-series moving sums do not drift") {
  // alternating large/small magnitudes stress the summation
  std::vector<double> x(5000);
  RngStream s(3);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = (i % 2 ? 1e9 : -1e9) + s.uniform();
  }
  const std::vector<double> sums = moving_sums(x, 7);
  // brute-force a few windows
  for (int t : {0, 1234, 4990}) {
    double direct = 0.0;
    for (int j = t; j < t + 7; ++j) direct += x[j];
    CHECK(sums[t] == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("w=1 iid normal has the closed-form tail") {
  // p = 1 - Phi(s/sigma)^n
  const int n = 12;
  const double sigma = 2.0, s = 3.1;
  const ProcessModel model(n, CovarianceStructure::common(0.0), sigma);
  const TailProbEstimate est = tail_probability(model, 1, s);
  const double exact = 1.0 - std::pow(normal_cdf(s / sigma), n);
  CHECK(std::fabs(est.value - exact) <= 2.0 * est.error_estimate + 1e-12);
}

TEST_CASE("perfect common correlation collapses to one variable") {
  // rho=1: Y_w(t) identical for all t, p = 1 - Phi((s - w theta0)/(sigma w))
  const ProcessModel model(7, CovarianceStructure::common(1.0), 1.0);
  const TailProbEstimate est = tail_probability(model, 3, 3.0);
  CHECK(std::fabs(est.value - (1.0 - normal_cdf(1.0))) <= est.error_estimate + 1e-4);
}

TEST_CASE("reference tail probabilities, n=7 w=3 s=3 sigma=1") {
  IntegrationConfig cfg;
  cfg.seed = 11;
  const ProcessModel common0(7, CovarianceStructure::common(0.0), 1.0);
  const TailProbEstimate a = tail_probability(common0, 3, 3.0, cfg);
  CHECK(std::fabs(a.value - 0.14541) <= 0.003);

  const ProcessModel auto_neg(7, CovarianceStructure::autocorrelated(-1.0), 1.0);
  const TailProbEstimate b = tail_probability(auto_neg, 3, 3.0, cfg);
  CHECK(std::fabs(b.value - 0.00270) <= 0.003);

  const ProcessModel auto_pos(7, CovarianceStructure::autocorrelated(0.5), 1.0);
  const TailProbEstimate c = tail_probability(auto_pos, 3, 3.0, cfg);
  CHECK(std::fabs(c.value - 0.24851) <= 0.003);
}

TEST_CASE("reference t-family tail probabilities, nu=7 sigma=4") {
  IntegrationConfig cfg;
  cfg.seed = 11;
  const ProcessModel c25(7, CovarianceStructure::common(0.25), 4.0,
                         Family::StudentT, 7.0);
  const TailProbEstimate a = tail_probability(c25, 3, 3.0, cfg);
  CHECK(std::fabs(a.value - 0.6202) <= 0.005);
  const ProcessModel a75(7, CovarianceStructure::autocorrelated(0.75), 4.0,
                         Family::StudentT, 7.0);
  const TailProbEstimate b = tail_probability(a75, 3, 3.0, cfg);
  CHECK(std::fabs(b.value - 0.6080) <= 0.005);
}

TEST_CASE("tail probability is non-increasing in s") {
  const ProcessModel model(20, CovarianceStructure::autocorrelated(0.3), 1.0);
  double prev = 2.0;
  double prev_err = 0.0;
  for (double s : {-2.0, 0.0, 2.0, 4.0, 7.0}) {
    const TailProbEstimate est = tail_probability(model, 4, s);
    const double p = est.value;
    CHECK(p <= prev + prev_err + est.error_estimate);
    prev = p;
    prev_err = est.error_estimate;
  }
}

TEST_CASE("location shifts move the tail probability coherently") {
  // theta0 > 0 raises every window mean by w theta0
  const ProcessModel centered(10, CovarianceStructure::common(0.2), 1.0);
  const ProcessModel shifted(10, CovarianceStructure::common(0.2), 1.0,
                             Family::Normal, 0.0, 1.0);
  const TailProbEstimate a = tail_probability(centered, 3, 4.0);
  const TailProbEstimate b = tail_probability(shifted, 3, 7.0);  // s shifted by w theta0
  CHECK(std::fabs(a.value - b.value) <= a.error_estimate + b.error_estimate + 1e-10);
}

TEST_CASE("BH adjustment matches the worked example and the definition") {
  const std::vector<double> p{0.04, 0.01, 0.03, 0.005};
  const std::vector<double> adj = bh_adjust(p);
  REQUIRE(adj.size() == 4);
  CHECK(adj[0] == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(adj[1] == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(adj[2] == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(adj[3] == doctest::Approx(0.02).epsilon(1e-12));

  // random vectors vs a literal step-up transcription
  RngStream s(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 1 + static_cast<int>(s.uniform() * 12);
    std::vector<double> pv(m);
    for (double& v : pv) v = s.uniform();
    const std::vector<double> fast = bh_adjust(pv);
    for (int i = 0; i < m; ++i) {
      // q_i = min over all j with p_j >= p_i of m p_j / rank(p_j), capped at 1
      std::vector<double> sorted = pv;
      std::sort(sorted.begin(), sorted.end());
      double best = 1.0;
      for (int j = m - 1; j >= 0; --j) {
        best = std::min(best, m * sorted[j] / (j + 1));
        if (sorted[j] == pv[i]) {
          CHECK(fast[i] == doctest::Approx(best).epsilon(1e-12));
        }
      }
    }
  }
  CHECK(bh_adjust({}).empty());
  CHECK_THROWS_AS(bh_adjust({0.5, 1.5}), std::invalid_argument);
  CHECK_THROWS_AS(bh_adjust({-0.1}), std::invalid_argument);
}

TEST_CASE("batch p-values: shared law, per-row seeds, BH over ok rows") {
  RngStream gen(21);
  std::vector<Series> series;
  for (int i = 0; i < 6; ++i) {
    Series s;
    s.id = "s" + std::to_string(i + 1);
    s.values.resize(i < 3 ? 30 : 50);
    for (double& v : s.values) v = gen.normal();
    series.push_back(std::move(s));
  }
  series[4].values[7] += 9.0;  // one strong effect

  BatchConfig cfg{CovarianceStructure::common(0.0)};
  cfg.w = 5;
  cfg.integration.seed = 303;
  const BatchReport rep = batch_pvalues(series, cfg);
  REQUIRE(rep.rows.size() == 6);
  for (const BatchRow& row : rep.rows) {
    CHECK(row.ok);
    CHECK(row.converged);
    CHECK(row.p_raw >= 0.0);
    CHECK(row.p_raw <= 1.0);
    CHECK(row.p_bh >= row.p_raw - 1e-12);  // (m p / j) can round one ulp below p
    CHECK(row.p_error > 0.0);
  }
  CHECK(rep.rows[4].p_raw < rep.rows[0].p_raw);

  // determinism
  const BatchReport again = batch_pvalues(series, cfg);
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    CHECK(rep.rows[i].p_raw == again.rows[i].p_raw);
  }

  // a broken row is reported without poisoning the batch
  series[1].values[0] = std::nan("");
  const BatchReport mixed = batch_pvalues(series, cfg);
  CHECK_FALSE(mixed.rows[1].ok);
  CHECK_FALSE(mixed.rows[1].error.empty());
  int ok_count = 0;
  for (const BatchRow& row : mixed.rows) ok_count += row.ok ? 1 : 0;
  CHECK(ok_count == 5);
  CHECK(std::isnan(mixed.rows[1].p_raw));
}

TEST_CASE("two-tier batch integration refines only small p-values") {
  RngStream gen(77);
  std::vector<Series> series;
  for (int i = 0; i < 4; ++i) {
    Series s;
    s.id = "r" + std::to_string(i);
    s.values.resize(60);
    for (double& v : s.values) v = gen.normal();
    series.push_back(std::move(s));
  }
  series[0].values[10] += 8.0;  // p far below refine_below
  series[1].values[20] += 8.0;

  BatchConfig base{CovarianceStructure::common(0.0)};
  base.w = 4;
  base.integration.error_target = 1e-4;
  base.integration.seed = 99;

  BatchConfig tiered = base;
  tiered.coarse_target = 5e-3;
  tiered.refine_below = 0.1;

  const BatchReport fine = batch_pvalues(series, base);
  const BatchReport two = batch_pvalues(series, tiered);
  for (int i = 0; i < 4; ++i) {
    CHECK(two.rows[i].ok);
    CHECK(two.rows[i].converged);
    // tiered and single-tier must agree within reported errors
    CHECK(std::fabs(two.rows[i].p_raw - fine.rows[i].p_raw) <=
          two.rows[i].p_error + fine.rows[i].p_error);
  }
  // refined rows carry the fine error, coarse-only rows the coarse one
  CHECK(two.rows[0].p_error <= 1e-4);
  CHECK(two.rows[1].p_error <= 1e-4);
  int coarse_only = 0;
  for (int i = 0; i < 4; ++i) {
    if (two.rows[i].p_raw - two.rows[i].p_error > tiered.refine_below) {
      CHECK(two.rows[i].samples < fine.rows[i].samples);
      ++coarse_only;
    }
  }
  CHECK(coarse_only >= 1);  // null rows at these lengths sit well above 0.1
}

TEST_CASE("batch validates per row") {
  Series short_series{"tiny", {1.0}};
  Series fits{"fits", {1.0, 2.0, 3.0}};
  BatchConfig cfg{CovarianceStructure::common(0.0)};
  cfg.w = 2;
  const BatchReport rep = batch_pvalues({short_series, fits}, cfg);
  CHECK_FALSE(rep.rows[0].ok);
  CHECK(rep.rows[1].ok);
}
