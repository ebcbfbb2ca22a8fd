#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "scanstat/matrix.hpp"

namespace scanstat {

struct IntegrationConfig {
  double error_target = 5e-4;               // absolute, on the probability
  int replications = 12;                    // K randomized shifts
  std::uint64_t initial_points = 1u << 10;  // per replication
  std::uint64_t max_points_per_replication = 1ull << 22;
  std::uint64_t seed = 0;
};

struct TailProbEstimate {
  double value = 0.0;
  double error_estimate = 0.0;  // 3x the standard error across replications
  std::uint64_t samples_used = 0;
  bool converged = false;
};

// P(Z <= upper componentwise), Z ~ Normal(mean, sigma). Positive semidefinite
// sigma is ridged (+1e-10 * trace/m on the diagonal) before factorization;
// genuinely indefinite input raises NotPositiveDefinite. Deterministic for a
// fixed (inputs, seed) pair. If the point budget runs out before the error
// target is met, the estimate is returned with converged = false.
TailProbEstimate mvn_cdf(const Eigen::VectorXd& upper, const Eigen::VectorXd& mean,
                         const SymmetricMatrix& sigma, const IntegrationConfig& cfg = {});

// P(T <= upper componentwise), T ~ multivariate t(nu, location, scale).
TailProbEstimate mvt_cdf(const Eigen::VectorXd& upper, const Eigen::VectorXd& location,
                         const SymmetricMatrix& scale, double nu,
                         const IntegrationConfig& cfg = {});

}  // namespace scanstat
