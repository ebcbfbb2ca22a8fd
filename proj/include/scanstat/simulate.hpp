#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "scanstat/covariance.hpp"
#include "scanstat/rng.hpp"
#include "scanstat/scan.hpp"

namespace scanstat {

// N outer realizations, each holding J sampled processes.
struct SimPlan {
  int n_outer;      // N
  int j_inner;      // J
  std::uint64_t seed;
  ProcessModel model;
  int w;
  double s;
};

struct EffectSpec {
  int start;      // 1-based first elevated position
  int length;
  double height;  // added to each of the length consecutive entries
};

struct MomentSummary {
  double mean;
  double sd;
  double skewness;         // g1 = m3 / m2^(3/2)
  double kurtosis;         // b2 = m4 / m2^2
  double excess_kurtosis;  // b2 - 3
  std::int64_t count;
  double threshold;
  TailProbEstimate tail;   // tail probability at the threshold
};

struct CovarianceEstimate {
  Eigen::MatrixXd mean;  // average of per-realization sample covariances
  Eigen::MatrixXd se;    // standard error of each entry over the N realizations
  int realizations;
};

struct ProportionEstimate {
  double value;
  double se;
};

// Draws one realization of the raw process. Normal: theta0 + sigma L z;
// StudentT: theta0 + sigma L z sqrt(nu / chi2_nu), one chi-square per vector.
// Auto uses the exact AR(1) recursion and Common (rho >= 0) a shared-factor
// construction, so the degenerate endpoints rho = +-1 sample exactly.
std::vector<double> sample_process(const ProcessModel& model, RngStream& stream);

// Same, with the structure-specific setup (Cholesky etc.) done once.
class ProcessSampler {
 public:
  explicit ProcessSampler(const ProcessModel& model);
  std::vector<double> operator()(RngStream& stream) const;
  const ProcessModel& model() const { return model_; }

 private:
  enum class Method { AutoRecursion, SharedFactor, Factor };
  ProcessModel model_;
  Method method_;
  Eigen::MatrixXd lower_;
};

// Mean over N realizations of the per-realization (J-sample, divisor J-1)
// covariance matrix of the moving sums, with entrywise standard errors.
CovarianceEstimate estimate_sum_covariance(const SimPlan& plan);

// Overall proportion of the N*J scan statistics exceeding s; SE over the N
// per-realization proportions.
ProportionEstimate estimate_tail_probability(const SimPlan& plan);

// Unit diagonal, off-diagonals uniform on [-1,1], repaired to the nearest
// positive definite correlation matrix when needed.
SymmetricMatrix random_general_structure(int n, std::uint64_t seed);

std::vector<double> inject_effect(const std::vector<double>& x, const EffectSpec& e);
Series inject_effect(const Series& s, const EffectSpec& e);

// z_i = Phi^-1(F_t,nu(x_i)), evaluated through the surviving tail so extreme
// inputs keep full precision.
std::vector<double> normal_scores(const std::vector<double>& x, double nu);

MomentSummary scan_distribution_summary(const ProcessModel& model, int w, double s,
                                        int reps, std::uint64_t seed,
                                        const IntegrationConfig& cfg = {});

struct SensitivityRow {
  std::string structure;
  double sigma;
  int w;
  int g;
  double overlap_share;  // (w - g)/w, 0 when disjoint
  double rho;
  double covariance;
  bool in_bounds;        // false when rho violates the structure's PD bound
};

std::vector<SensitivityRow> covariance_sensitivity_grid(
    CovarianceStructure::Kind kind, double sigma, const std::vector<int>& ws,
    const std::vector<int>& gs, const std::vector<double>& rhos);

struct MultiProcessConfig {
  int series_count = 500;
  double effect_fraction = 0.04;
  int effect_length = 10;
  std::vector<double> effect_heights{12.0, 14.0, 16.0, 18.0};
  std::vector<int> lengths{100, 500, 1000};
  std::vector<double> length_probs{0.4, 0.5, 0.1};
  double rho = 0.2;        // auto-correlation of the simulated processes
  double sigma = 4.0;
  double nu = 7.0;         // 0 switches the family to normal
  int w = 10;
  double q = 0.05;         // FDR level for the power/FDP summary
  std::uint64_t seed = 0;
  IntegrationConfig integration{1.5e-3, 12, 1u << 10, 1ull << 22, 0};
  // Two-tier integration (see BatchConfig): most null series sit far above
  // any BH cutoff, so a coarse pass settles them and only small p-values get
  // the full budget. Set coarse_target <= error_target to force one tier.
  double coarse_target = 8e-3;
  double refine_below = 0.1;
};

struct MultiProcessRow {
  std::string id;
  int n;
  bool has_effect;
  int effect_start;      // 0 for null series
  double effect_height;  // 0 for null series
  double statistic;
  int argmax;
  double p_raw;
  double p_bh;
  double p_error;
};

struct MultiProcessReport {
  std::vector<MultiProcessRow> rows;
  std::vector<double> sorted_p;     // ascending, for discovery-curve plots
  std::vector<double> sorted_p_bh;
  int discoveries;
  int true_discoveries;
  int false_discoveries;
  double power;            // NaN when the run has no effects
  double fdp;
  double q;
  double ks_null_pvalue;   // KS uniformity of the null series' raw p-values
};

MultiProcessReport experiment_multi_process(const MultiProcessConfig& config);

// Kolmogorov-Smirnov test against U[0,1] (asymptotic p-value with the
// Stephens small-sample correction).
double ks_uniform_pvalue(std::vector<double> sample);

}  // namespace scanstat
