#pragma once

#include <Eigen/Core>
#include <optional>

#include "scanstat/matrix.hpp"

namespace scanstat {

enum class Family { Normal, StudentT };

// Correlation model of the raw process: an explicit matrix (General), one
// shared pairwise coefficient (Common), or geometric decay rho^|i-j| (Auto).
class CovarianceStructure {
 public:
  enum class Kind { General, Common, Auto };

  // General requires a positive definite correlation matrix (unit diagonal,
  // |rho_ij| <= 1); repair candidates with nearest_pd first.
  static CovarianceStructure general(const SymmetricMatrix& correlation,
                                     double pd_tol = 1e-12);
  static CovarianceStructure common(double rho);
  static CovarianceStructure autocorrelated(double rho);

  Kind kind() const { return kind_; }
  double rho() const;                    // Common/Auto only
  const SymmetricMatrix& matrix() const; // General only

  double correlation(int i, int j) const;           // 0-based indices
  SymmetricMatrix correlation_matrix(int n) const;  // materialized n x n

  // Positive-definiteness lower bound for Common: rho >= -1/(n-1).
  static double common_lower_bound(int n) { return -1.0 / (n - 1); }

 private:
  CovarianceStructure(Kind kind, double rho, std::optional<SymmetricMatrix> m)
      : kind_(kind), rho_(rho), matrix_(std::move(m)) {}
  Kind kind_;
  double rho_;
  std::optional<SymmetricMatrix> matrix_;
};

// Null law of the raw process X_1..X_n: location theta0 per variable, scale
// sigma, and either a multivariate normal or multivariate t family. For the
// t family, sigma and the correlations parameterize the scale matrix (the
// variance is sigma^2 * nu/(nu-2) for nu > 2), so every covariance formula
// below applies unchanged to scale-matrix entries.
struct ProcessModel {
  ProcessModel(int n, CovarianceStructure structure, double sigma,
               Family family = Family::Normal, double nu = 0.0, double theta0 = 0.0);

  int n;
  CovarianceStructure structure;
  double sigma;
  Family family;
  double nu;
  double theta0;
};

// Two windows of size w starting at t and t+g (1-based starts, g >= 0).
// When they overlap (g < w) their union splits into the first-only run A,
// the shared run B, and the second-only run C.
struct WindowGeometry {
  WindowGeometry(int w, int t, int g);

  int w, t, g;

  // Half-open 0-based index ranges.
  struct Range {
    int begin, end;
    int size() const { return end - begin; }
  };
  Range window1() const { return {t - 1, t - 1 + w}; }
  Range window2() const { return {t - 1 + g, t - 1 + g + w}; }
  Range region_a() const { return {t - 1, t - 1 + g}; }
  Range region_b() const { return {t - 1 + g, t - 1 + w}; }
  Range region_c() const { return {t - 1 + w, t - 1 + w + g}; }
};

// Joint law of the moving sums Y_w(1)..Y_w(m), m = n-w+1.
struct MovingSumLaw {
  int m;
  Eigen::VectorXd mean;      // every entry w * theta0
  SymmetricMatrix sigma_y;   // covariance (normal) or scale (t) matrix
  Family family;
  double nu;
};

// var Y_w(t) = sigma^2 (w + 2 sum_{i<j in window} rho_ij).
double moving_sum_variance(const ProcessModel& model, int w, int t);

// cov(Y_w(t), Y_w(t+g)) for an explicit correlation matrix; dispatches on
// g < w (overlapping windows, region decomposition) vs g >= w (plain double
// sum across the two windows).
double moving_sum_cov_general(const CovarianceStructure& structure, double sigma,
                              int w, int t, int g);

// Closed forms for the stationary structures (value independent of t).
double moving_sum_cov_auto(double rho, double sigma, int w, int g);
double moving_sum_cov_common(double rho, double sigma, int w, int g);

MovingSumLaw build_sum_covariance(const ProcessModel& model, int w);

// Ground-truth oracle: entry (a,b) = sigma^2 sum_{i in window a, j in window b}
// rho*_ij with rho*_ii = 1, by direct double summation.
Eigen::MatrixXd brute_force_sum_covariance(const Eigen::MatrixXd& correlation,
                                           double sigma, int w);

}  // namespace scanstat
