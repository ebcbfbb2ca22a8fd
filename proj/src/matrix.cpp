#include "scanstat/matrix.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace scanstat {

SymmetricMatrix::SymmetricMatrix(const Eigen::MatrixXd& a, double max_asymmetry) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw std::invalid_argument("SymmetricMatrix: input must be square and nonempty");
  }
  if (!a.allFinite()) {
    throw std::invalid_argument("SymmetricMatrix: input has non-finite entries");
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > max_asymmetry * scale) {
    throw std::invalid_argument("SymmetricMatrix: asymmetry " + std::to_string(asym) +
                                " exceeds tolerance");
  }
  m_ = 0.5 * (a + a.transpose());
}

SymmetricMatrix SymmetricMatrix::identity(int n) {
  return SymmetricMatrix(Eigen::MatrixXd::Identity(n, n));
}

CholeskyFactor cholesky(const SymmetricMatrix& a, double tol) {
  const Eigen::MatrixXd& m = a.data();
  const int n = a.order();
  const double threshold = tol * std::max(m.diagonal().maxCoeff(), 0.0);
  Eigen::MatrixXd lower = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    double d = m(j, j);
    for (int k = 0; k < j; ++k) d -= lower(j, k) * lower(j, k);
    if (!(d > threshold)) {
      throw NotPositiveDefinite(j, "cholesky: pivot " + std::to_string(j) +
                                       " is " + std::to_string(d) + ", not positive definite");
    }
    lower(j, j) = std::sqrt(d);
    const double inv = 1.0 / lower(j, j);
    for (int i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (int k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      lower(i, j) = s * inv;
    }
  }
  return CholeskyFactor{std::move(lower)};
}

bool is_positive_definite(const SymmetricMatrix& a, double tol) {
  try {
    cholesky(a, tol);
    return true;
  } catch (const NotPositiveDefinite&) {
    return false;
  }
}

namespace {

Eigen::MatrixXd project_psd(const Eigen::MatrixXd& a, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

SymmetricMatrix nearest_pd(const SymmetricMatrix& a, double eig_floor,
                           int max_iterations, double tol) {
  const int n = a.order();
  Eigen::MatrixXd y = a.data();
  Eigen::MatrixXd dykstra = Eigen::MatrixXd::Zero(n, n);
  bool converged = false;
  for (int iter = 0; iter < max_iterations; ++iter) {
    const Eigen::MatrixXd y_prev = y;
    const Eigen::MatrixXd r = y - dykstra;
    const Eigen::MatrixXd x = project_psd(r, 0.0);
    dykstra = x - r;
    y = x;
    y.diagonal().setOnes();
    const double change = (y - y_prev).norm() / std::max(1.0, y.norm());
    if (change <= tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw NearestPdFailure(y, "nearest_pd: no convergence within " +
                                  std::to_string(max_iterations) + " iterations");
  }
  // Floor the spectrum, then restore the unit diagonal by congruence
  // (D^-1/2 X D^-1/2 preserves positive definiteness). The rescale can shave
  // the smallest eigenvalue, so escalate the floor until it holds.
  double floor = eig_floor;
  for (int k = 0; k < 60; ++k) {
    y = 0.5 * (y + y.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(y);
    if (es.eigenvalues().minCoeff() >= eig_floor) break;
    y = project_psd(y, floor);
    const Eigen::VectorXd d = y.diagonal().cwiseSqrt().cwiseInverse();
    y = d.asDiagonal() * y * d.asDiagonal();
    y.diagonal().setOnes();
    floor *= 2.0;
  }
  return SymmetricMatrix(0.5 * (y + y.transpose()), 1e-6);
}

}  // namespace scanstat
