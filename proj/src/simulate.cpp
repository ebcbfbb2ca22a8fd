#include "scanstat/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "scanstat/distributions.hpp"

namespace scanstat {

ProcessSampler::ProcessSampler(const ProcessModel& model) : model_(model) {
  switch (model.structure.kind()) {
    case CovarianceStructure::Kind::Auto:
      method_ = Method::AutoRecursion;
      return;
    case CovarianceStructure::Kind::Common:
      if (model.structure.rho() >= 0.0) {
        method_ = Method::SharedFactor;
        return;
      }
      break;
    case CovarianceStructure::Kind::General:
      break;
  }
  method_ = Method::Factor;
  const SymmetricMatrix corr = model.structure.correlation_matrix(model.n);
  try {
    lower_ = cholesky(corr).lower;
  } catch (const NotPositiveDefinite&) {
    Eigen::MatrixXd ridged = corr.data();
    ridged.diagonal().array() += 1e-10;
    lower_ = cholesky(SymmetricMatrix(ridged)).lower;
  }
}

std::vector<double> ProcessSampler::operator()(RngStream& stream) const {
  const int n = model_.n;
  std::vector<double> x(n);
  switch (method_) {
    case Method::AutoRecursion: {
      const double rho = model_.structure.rho();
      const double innovation = std::sqrt(std::max(0.0, 1.0 - rho * rho));
      x[0] = stream.normal();
      for (int i = 1; i < n; ++i) x[i] = rho * x[i - 1] + innovation * stream.normal();
      break;
    }
    case Method::SharedFactor: {
      const double rho = model_.structure.rho();
      const double shared_w = std::sqrt(rho);
      const double own_w = std::sqrt(1.0 - rho);
      const double shared = stream.normal();
      for (int i = 0; i < n; ++i) x[i] = shared_w * shared + own_w * stream.normal();
      break;
    }
    case Method::Factor: {
      Eigen::VectorXd z(n);
      for (int i = 0; i < n; ++i) z(i) = stream.normal();
      Eigen::VectorXd v = lower_.triangularView<Eigen::Lower>() * z;
      for (int i = 0; i < n; ++i) x[i] = v(i);
      break;
    }
  }
  double scale = model_.sigma;
  if (model_.family == Family::StudentT) {
    scale *= std::sqrt(model_.nu / stream.chi_square(model_.nu));
  }
  for (int i = 0; i < n; ++i) x[i] = model_.theta0 + scale * x[i];
  return x;
}

std::vector<double> sample_process(const ProcessModel& model, RngStream& stream) {
  return ProcessSampler(model)(stream);
}

CovarianceEstimate estimate_sum_covariance(const SimPlan& plan) {
  if (plan.n_outer < 1) throw std::invalid_argument("estimate_sum_covariance: N >= 1");
  if (plan.j_inner < 2) {
    throw std::invalid_argument("estimate_sum_covariance: J >= 2 needed for a covariance");
  }
  const ProcessSampler sampler(plan.model);
  const int m = plan.model.n - plan.w + 1;
  if (m < 1) throw std::invalid_argument("estimate_sum_covariance: w exceeds n");
  const RngStream root(plan.seed);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd s1(m, 1), cross(m, m), pivot(m, 1);
  for (int i = 0; i < plan.n_outer; ++i) {
    RngStream stream = root.child(static_cast<std::uint64_t>(i));
    // Single pass, shifted by the first draw to keep the cancellation benign.
    s1.setZero();
    cross.setZero();
    for (int j = 0; j < plan.j_inner; ++j) {
      const std::vector<double> x = sampler(stream);
      const std::vector<double> sums = moving_sums(x, plan.w);
      Eigen::Map<const Eigen::VectorXd> y(sums.data(), m);
      if (j == 0) pivot = y;
      const Eigen::VectorXd d = y - pivot.col(0);
      s1.col(0) += d;
      cross.selfadjointView<Eigen::Lower>().rankUpdate(d);
    }
    const double J = plan.j_inner;
    const Eigen::MatrixXd full = cross.selfadjointView<Eigen::Lower>();
    Eigen::MatrixXd cov = (full - s1 * s1.transpose() / J) / (J - 1.0);
    const Eigen::MatrixXd delta = cov - mean;
    mean += delta / (i + 1.0);
    m2 += delta.cwiseProduct(cov - mean);
  }
  CovarianceEstimate est;
  est.mean = mean;
  est.realizations = plan.n_outer;
  if (plan.n_outer > 1) {
    est.se = (m2 / (plan.n_outer - 1.0) / plan.n_outer).cwiseSqrt();
  } else {
    est.se = Eigen::MatrixXd::Constant(m, m, std::numeric_limits<double>::quiet_NaN());
  }
  return est;
}

ProportionEstimate estimate_tail_probability(const SimPlan& plan) {
  if (plan.n_outer < 1 || plan.j_inner < 1) {
    throw std::invalid_argument("estimate_tail_probability: N, J >= 1");
  }
  const ProcessSampler sampler(plan.model);
  if (plan.w < 1 || plan.w > plan.model.n) {
    throw std::invalid_argument("estimate_tail_probability: w out of range");
  }
  const RngStream root(plan.seed);
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < plan.n_outer; ++i) {
    RngStream stream = root.child(static_cast<std::uint64_t>(i));
    int count = 0;
    for (int j = 0; j < plan.j_inner; ++j) {
      const std::vector<double> x = sampler(stream);
      if (scan_statistic(x, plan.w).statistic > plan.s) ++count;
    }
    const double prop = static_cast<double>(count) / plan.j_inner;
    const double delta = prop - mean;
    mean += delta / (i + 1.0);
    m2 += delta * (prop - mean);
  }
  ProportionEstimate est;
  est.value = mean;
  est.se = plan.n_outer > 1
               ? std::sqrt(m2 / (plan.n_outer - 1.0) / plan.n_outer)
               : std::sqrt(std::max(0.0, mean * (1.0 - mean) / plan.j_inner));
  return est;
}

SymmetricMatrix random_general_structure(int n, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("random_general_structure: n >= 2");
  RngStream stream(seed);
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      m(i, j) = m(j, i) = 2.0 * stream.uniform() - 1.0;
    }
  }
  SymmetricMatrix candidate(m);
  if (is_positive_definite(candidate)) return candidate;
  return nearest_pd(candidate);
}

std::vector<double> inject_effect(const std::vector<double>& x, const EffectSpec& e) {
  const int n = static_cast<int>(x.size());
  if (e.length < 0) throw std::out_of_range("inject_effect: negative length");
  if (e.start < 1 || e.start + e.length - 1 > n) {
    throw std::out_of_range("inject_effect: effect window outside the series");
  }
  std::vector<double> out = x;
  for (int i = e.start - 1; i < e.start - 1 + e.length; ++i) out[i] += e.height;
  return out;
}

Series inject_effect(const Series& s, const EffectSpec& e) {
  return Series{s.id, inject_effect(s.values, e)};
}

std::vector<double> normal_scores(const std::vector<double>& x, double nu) {
  if (!(nu > 0.0)) throw std::invalid_argument("normal_scores: nu must be positive");
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw std::invalid_argument("normal_scores: non-finite input");
    if (x[i] > 0.0) {
      z[i] = -normal_quantile(student_t_survival(x[i], nu));
    } else {
      z[i] = normal_quantile(student_t_cdf(x[i], nu));
    }
  }
  return z;
}

MomentSummary scan_distribution_summary(const ProcessModel& model, int w, double s,
                                        int reps, std::uint64_t seed,
                                        const IntegrationConfig& cfg) {
  if (reps < 2) throw std::invalid_argument("scan_distribution_summary: reps >= 2");
  const ProcessSampler sampler(model);
  const RngStream root(seed);
  std::vector<double> stats(reps);
  for (int i = 0; i < reps; ++i) {
    RngStream stream = root.child(static_cast<std::uint64_t>(i));
    stats[i] = scan_statistic(sampler(stream), w).statistic;
  }
  double mean = 0.0;
  for (double v : stats) mean += v;
  mean /= reps;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : stats) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= reps;
  m3 /= reps;
  m4 /= reps;
  MomentSummary summary;
  summary.mean = mean;
  summary.sd = std::sqrt(m2 * reps / (reps - 1.0));
  summary.skewness = m3 / std::pow(m2, 1.5);
  summary.kurtosis = m4 / (m2 * m2);
  summary.excess_kurtosis = summary.kurtosis - 3.0;
  summary.count = reps;
  summary.threshold = s;
  summary.tail = tail_probability(model, w, s, cfg);
  return summary;
}

std::vector<SensitivityRow> covariance_sensitivity_grid(
    CovarianceStructure::Kind kind, double sigma, const std::vector<int>& ws,
    const std::vector<int>& gs, const std::vector<double>& rhos) {
  if (kind == CovarianceStructure::Kind::General) {
    throw std::invalid_argument(
        "covariance_sensitivity_grid: use Common or Auto (grids sweep a scalar rho)");
  }
  std::vector<SensitivityRow> rows;
  rows.reserve(ws.size() * gs.size() * rhos.size());
  for (int w : ws) {
    for (int g : gs) {
      for (double rho : rhos) {
        SensitivityRow row;
        row.structure = kind == CovarianceStructure::Kind::Common ? "common" : "auto";
        row.sigma = sigma;
        row.w = w;
        row.g = g;
        row.overlap_share = g < w ? static_cast<double>(w - g) / w : 0.0;
        row.rho = rho;
        row.in_bounds = true;
        try {
          row.covariance = kind == CovarianceStructure::Kind::Common
                               ? moving_sum_cov_common(rho, sigma, w, g)
                               : moving_sum_cov_auto(rho, sigma, w, g);
        } catch (const std::exception&) {
          row.covariance = std::numeric_limits<double>::quiet_NaN();
          row.in_bounds = false;
        }
        rows.push_back(row);
      }
    }
  }
  return rows;
}

double ks_uniform_pvalue(std::vector<double> sample) {
  const int n = static_cast<int>(sample.size());
  if (n < 1) throw std::invalid_argument("ks_uniform_pvalue: empty sample");
  std::sort(sample.begin(), sample.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = std::clamp(sample[i], 0.0, 1.0);
    d = std::max(d, (i + 1.0) / n - v);
    d = std::max(d, v - static_cast<double>(i) / n);
  }
  const double root_n = std::sqrt(static_cast<double>(n));
  const double x = d * (root_n + 0.12 + 0.11 / root_n);
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = 2.0 * std::pow(-1.0, k - 1) * std::exp(-2.0 * k * k * x * x);
    p += term;
    if (std::fabs(term) < 1e-12) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

MultiProcessReport experiment_multi_process(const MultiProcessConfig& config) {
  if (config.series_count < 1) {
    throw std::invalid_argument("experiment: series_count >= 1");
  }
  if (!(config.effect_fraction >= 0.0 && config.effect_fraction <= 1.0)) {
    throw std::invalid_argument("experiment: effect fraction must lie in [0,1]");
  }
  if (config.lengths.empty() || config.lengths.size() != config.length_probs.size()) {
    throw std::invalid_argument("experiment: lengths and probabilities must align");
  }
  double prob_sum = 0.0;
  for (double p : config.length_probs) {
    if (p < 0.0) throw std::invalid_argument("experiment: negative length probability");
    prob_sum += p;
  }
  if (std::fabs(prob_sum - 1.0) > 1e-9) {
    throw std::invalid_argument("experiment: length probabilities must sum to 1");
  }
  const int min_len = *std::min_element(config.lengths.begin(), config.lengths.end());
  if (config.w < 1 || config.w > min_len) {
    throw std::invalid_argument("experiment: window must fit the shortest series");
  }
  if (config.effect_fraction > 0.0 &&
      (config.effect_heights.empty() || config.effect_length < 1 ||
       config.effect_length > min_len)) {
    throw std::invalid_argument("experiment: effect length/heights invalid");
  }

  const RngStream root(config.seed);
  const int count = config.series_count;
  const int effect_count =
      static_cast<int>(std::llround(config.effect_fraction * count));

  RngStream length_stream = root.child(1);
  std::vector<int> lengths(count);
  for (int i = 0; i < count; ++i) {
    const double u = length_stream.uniform();
    double acc = 0.0;
    int pick = static_cast<int>(config.lengths.size()) - 1;
    for (std::size_t k = 0; k < config.length_probs.size(); ++k) {
      acc += config.length_probs[k];
      if (u <= acc) {
        pick = static_cast<int>(k);
        break;
      }
    }
    lengths[i] = config.lengths[pick];
  }

  // Partial Fisher-Yates draw of the effect set.
  RngStream pick_stream = root.child(2);
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < effect_count; ++i) {
    const int j = i + static_cast<int>(pick_stream.uniform() * (count - i));
    std::swap(order[i], order[std::min(j, count - 1)]);
  }
  std::vector<bool> has_effect(count, false);
  for (int i = 0; i < effect_count; ++i) has_effect[order[i]] = true;

  RngStream attr_stream = root.child(3);
  std::vector<EffectSpec> effects(count, EffectSpec{0, 0, 0.0});
  for (int i = 0; i < count; ++i) {
    if (!has_effect[i]) continue;
    const int span = lengths[i] - config.effect_length + 1;
    const int start = 1 + static_cast<int>(attr_stream.uniform() * span);
    const std::size_t h = static_cast<std::size_t>(
        attr_stream.uniform() * config.effect_heights.size());
    effects[i] = EffectSpec{std::min(start, span), config.effect_length,
                            config.effect_heights[std::min(h, config.effect_heights.size() - 1)]};
  }

  const Family family = config.nu > 0.0 ? Family::StudentT : Family::Normal;
  const CovarianceStructure structure = CovarianceStructure::autocorrelated(config.rho);
  std::vector<Series> series(count);
  const RngStream series_root = root.child(4);
  for (int i = 0; i < count; ++i) {
    const ProcessModel model(lengths[i], structure, config.sigma, family, config.nu, 0.0);
    RngStream stream = series_root.child(static_cast<std::uint64_t>(i));
    std::vector<double> x = ProcessSampler(model)(stream);
    if (has_effect[i]) x = inject_effect(x, effects[i]);
    series[i] = Series{"s" + std::to_string(i + 1), std::move(x)};
  }

  BatchConfig batch{structure, config.sigma, family, config.nu, 0.0,
                    config.w,  config.integration};
  batch.integration.seed = root.child(5).key();
  batch.coarse_target = config.coarse_target;
  batch.refine_below = config.refine_below;
  const BatchReport batch_report = batch_pvalues(series, batch);

  MultiProcessReport report;
  report.q = config.q;
  report.rows.resize(count);
  std::vector<double> null_p;
  int discoveries = 0, true_disc = 0;
  for (int i = 0; i < count; ++i) {
    const BatchRow& row = batch_report.rows[i];
    if (!row.ok) {
      throw std::runtime_error("experiment: series " + row.id + " failed: " + row.error);
    }
    report.rows[i] = MultiProcessRow{row.id,
                                     row.n,
                                     has_effect[i],
                                     has_effect[i] ? effects[i].start : 0,
                                     has_effect[i] ? effects[i].height : 0.0,
                                     row.scan.statistic,
                                     row.scan.argmax,
                                     row.p_raw,
                                     row.p_bh,
                                     row.p_error};
    if (!has_effect[i]) null_p.push_back(row.p_raw);
    if (row.p_bh <= config.q) {
      ++discoveries;
      if (has_effect[i]) ++true_disc;
    }
    report.sorted_p.push_back(row.p_raw);
    report.sorted_p_bh.push_back(row.p_bh);
  }
  std::sort(report.sorted_p.begin(), report.sorted_p.end());
  std::sort(report.sorted_p_bh.begin(), report.sorted_p_bh.end());
  report.discoveries = discoveries;
  report.true_discoveries = true_disc;
  report.false_discoveries = discoveries - true_disc;
  report.power = effect_count > 0
                     ? static_cast<double>(true_disc) / effect_count
                     : std::numeric_limits<double>::quiet_NaN();
  report.fdp = discoveries > 0 ? static_cast<double>(discoveries - true_disc) / discoveries
                               : 0.0;
  report.ks_null_pvalue = null_p.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : ks_uniform_pvalue(null_p);
  return report;
}

}  // namespace scanstat
