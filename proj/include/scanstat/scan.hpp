#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scanstat/covariance.hpp"
#include "scanstat/mvprob.hpp"

namespace scanstat {

struct Series {
  std::string id;
  std::vector<double> values;
};

struct ScanResult {
  double statistic;  // S_w, on the sum scale
  int argmax;        // 1-based window start t*, smallest index on ties
  int window;        // w
};

// Window sums of length w; entry t (0-based t-1) is the sum starting at t.
// Computed from compensated prefix sums.
std::vector<double> moving_sums(const std::vector<double>& x, int w);

ScanResult scan_statistic(const std::vector<double>& x, int w);
ScanResult scan_statistic(const Series& series, int w);

// p_w(s) = 1 - P(Y_w(1) <= s, ..., Y_w(m) <= s) under the null model.
TailProbEstimate tail_probability(const ProcessModel& model, int w, double s,
                                  const IntegrationConfig& cfg = {});

// Benjamini-Hochberg step-up adjustment:
// q_(i) = min(1, min_{j >= i} m p_(j) / j), returned in the input order.
std::vector<double> bh_adjust(const std::vector<double>& p);

// Shared null model for a batch; each series supplies its own n.
struct BatchConfig {
  CovarianceStructure structure;
  double sigma = 1.0;
  Family family = Family::Normal;
  double nu = 0.0;
  double theta0 = 0.0;
  int w = 1;
  IntegrationConfig integration;
  // Two-tier integration. When coarse_target > integration.error_target every
  // row is first integrated at coarse_target; only rows whose estimate might
  // still matter for a discovery decision (p - error <= refine_below) are
  // re-integrated at the full target. p_error and converged always describe
  // the estimate that was kept, so the per-row precision stays auditable.
  double coarse_target = 0.0;
  double refine_below = 0.1;
};

struct BatchRow {
  std::string id;
  int n = 0;
  ScanResult scan{0.0, 0, 0};
  double p_raw = 0.0;
  double p_bh = 0.0;
  double p_error = 0.0;  // integration error estimate attached to p_raw
  std::uint64_t samples = 0;
  bool converged = false;
  bool ok = false;
  std::string error;  // populated when ok is false
};

struct BatchReport {
  std::vector<BatchRow> rows;
  int w = 0;
  std::uint64_t seed = 0;
  double error_target = 0.0;
};

// Evaluates every series against the shared null model. Sigma_Y laws are
// cached per distinct length; integration seeds derive from (seed, row index)
// so parallel and serial runs agree. Failures are reported per row.
BatchReport batch_pvalues(const std::vector<Series>& series, const BatchConfig& cfg);

}  // namespace scanstat
