#include "scanstat/scan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "scanstat/parallel.hpp"
#include "scanstat/rng.hpp"

namespace scanstat {

std::vector<double> moving_sums(const std::vector<double>& x, int w) {
  const int n = static_cast<int>(x.size());
  if (w < 1 || w > n) throw std::out_of_range("moving_sums: w out of range");
  // Neumaier-compensated prefix sums, then window sums as differences.
  std::vector<double> prefix(n + 1, 0.0);
  double sum = 0.0, carry = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = sum + x[i];
    carry += std::fabs(sum) >= std::fabs(x[i]) ? (sum - t) + x[i] : (x[i] - t) + sum;
    sum = t;
    prefix[i + 1] = sum + carry;
  }
  std::vector<double> out(n - w + 1);
  for (int t = 0; t <= n - w; ++t) out[t] = prefix[t + w] - prefix[t];
  return out;
}

ScanResult scan_statistic(const std::vector<double>& x, int w) {
  const std::vector<double> sums = moving_sums(x, w);
  int best = 0;
  for (int t = 1; t < static_cast<int>(sums.size()); ++t) {
    if (sums[t] > sums[best]) best = t;
  }
  return ScanResult{sums[best], best + 1, w};
}

ScanResult scan_statistic(const Series& series, int w) {
  return scan_statistic(series.values, w);
}

TailProbEstimate tail_probability(const ProcessModel& model, int w, double s,
                                  const IntegrationConfig& cfg) {
  const MovingSumLaw law = build_sum_covariance(model, w);
  const Eigen::VectorXd upper = Eigen::VectorXd::Constant(law.m, s);
  TailProbEstimate cdf = law.family == Family::StudentT
                             ? mvt_cdf(upper, law.mean, law.sigma_y, law.nu, cfg)
                             : mvn_cdf(upper, law.mean, law.sigma_y, cfg);
  cdf.value = std::clamp(1.0 - cdf.value, 0.0, 1.0);
  return cdf;
}

std::vector<double> bh_adjust(const std::vector<double>& p) {
  const int m = static_cast<int>(p.size());
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("bh_adjust: p-values must lie in [0,1]");
    }
  }
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return p[a] < p[b]; });
  std::vector<double> adjusted(m);
  double running = 1.0;
  for (int i = m - 1; i >= 0; --i) {
    const double q = std::min(1.0, static_cast<double>(m) * p[order[i]] / (i + 1));
    running = std::min(running, q);
    adjusted[order[i]] = running;
  }
  return adjusted;
}

BatchReport batch_pvalues(const std::vector<Series>& series, const BatchConfig& cfg) {
  BatchReport report;
  report.w = cfg.w;
  report.seed = cfg.integration.seed;
  report.error_target = cfg.integration.error_target;
  const int count = static_cast<int>(series.size());
  report.rows.resize(count);

  // One moving-sum law per distinct series length.
  std::map<int, std::shared_ptr<const MovingSumLaw>> laws;
  for (const Series& s : series) {
    const int n = static_cast<int>(s.values.size());
    if (n < 2 || cfg.w < 1 || cfg.w > n || laws.count(n)) continue;
    try {
      const ProcessModel model(n, cfg.structure, cfg.sigma, cfg.family, cfg.nu,
                               cfg.theta0);
      laws[n] = std::make_shared<const MovingSumLaw>(build_sum_covariance(model, cfg.w));
    } catch (const std::exception&) {
      // Row-level evaluation below reports the failure per series.
    }
  }

  const RngStream seed_root(cfg.integration.seed);
  parallel_for(count, [&](int i) {
    const Series& s = series[i];
    BatchRow& row = report.rows[i];
    row.id = s.id;
    row.n = static_cast<int>(s.values.size());
    row.p_raw = row.p_bh = row.p_error = std::numeric_limits<double>::quiet_NaN();
    try {
      for (double v : s.values) {
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite value");
      }
      if (row.n < 2) throw std::invalid_argument("series shorter than 2");
      if (cfg.w < 1 || cfg.w > row.n) {
        throw std::invalid_argument("window does not fit series length");
      }
      row.scan = scan_statistic(s, cfg.w);
      std::shared_ptr<const MovingSumLaw> law_ptr;
      if (auto it = laws.find(row.n); it != laws.end()) {
        law_ptr = it->second;
      } else {
        // Prebuild failed for this length; rebuilding surfaces the error here.
        const ProcessModel model(row.n, cfg.structure, cfg.sigma, cfg.family, cfg.nu,
                                 cfg.theta0);
        law_ptr = std::make_shared<const MovingSumLaw>(build_sum_covariance(model, cfg.w));
      }
      const MovingSumLaw& law = *law_ptr;
      const RngStream row_stream = seed_root.child(static_cast<std::uint64_t>(i));
      const Eigen::VectorXd upper = Eigen::VectorXd::Constant(law.m, row.scan.statistic);
      const auto estimate = [&](const IntegrationConfig& icfg) {
        return law.family == Family::StudentT
                   ? mvt_cdf(upper, law.mean, law.sigma_y, law.nu, icfg)
                   : mvn_cdf(upper, law.mean, law.sigma_y, icfg);
      };
      IntegrationConfig icfg = cfg.integration;
      icfg.seed = row_stream.key();
      const bool tiered = cfg.coarse_target > cfg.integration.error_target;
      if (tiered) icfg.error_target = cfg.coarse_target;
      TailProbEstimate est = estimate(icfg);
      row.samples = est.samples_used;
      if (tiered && (1.0 - est.value) - est.error_estimate <= cfg.refine_below) {
        IntegrationConfig fine = cfg.integration;
        fine.seed = row_stream.child(1).key();
        est = estimate(fine);
        row.samples += est.samples_used;
      }
      row.p_raw = std::clamp(1.0 - est.value, 0.0, 1.0);
      row.p_error = est.error_estimate;
      row.converged = est.converged;
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
  });

  std::vector<int> ok_rows;
  std::vector<double> ok_p;
  for (int i = 0; i < count; ++i) {
    if (report.rows[i].ok) {
      ok_rows.push_back(i);
      ok_p.push_back(report.rows[i].p_raw);
    }
  }
  const std::vector<double> adjusted = bh_adjust(ok_p);
  for (std::size_t k = 0; k < ok_rows.size(); ++k) {
    report.rows[ok_rows[k]].p_bh = adjusted[k];
  }
  return report;
}

}  // namespace scanstat
