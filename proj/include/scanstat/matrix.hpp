#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace scanstat {

class NotPositiveDefinite : public std::runtime_error {
 public:
  NotPositiveDefinite(int pivot, const std::string& what)
      : std::runtime_error(what), pivot_index(pivot) {}
  int pivot_index;  // 0-based column at which factorization failed
};

class NearestPdFailure : public std::runtime_error {
 public:
  NearestPdFailure(Eigen::MatrixXd last, const std::string& what)
      : std::runtime_error(what), last_iterate(std::move(last)) {}
  Eigen::MatrixXd last_iterate;
};

// Square matrix stored symmetrized: construction rejects inputs whose
// asymmetry exceeds the tolerance (relative to the largest magnitude entry)
// and stores (A + A^T)/2, so a_ij == a_ji holds exactly afterwards.
class SymmetricMatrix {
 public:
  explicit SymmetricMatrix(const Eigen::MatrixXd& a, double max_asymmetry = 1e-8);
  static SymmetricMatrix identity(int n);

  int order() const { return static_cast<int>(m_.rows()); }
  double operator()(int i, int j) const { return m_(i, j); }
  const Eigen::MatrixXd& data() const { return m_; }

 private:
  Eigen::MatrixXd m_;
};

struct CholeskyFactor {
  Eigen::MatrixXd lower;
  Eigen::MatrixXd reconstruct() const { return lower * lower.transpose(); }
};

// True iff a Cholesky factorization succeeds with every pivot above
// tol * (largest diagonal entry).
bool is_positive_definite(const SymmetricMatrix& a, double tol = 1e-12);

// Throws NotPositiveDefinite carrying the failing pivot index.
CholeskyFactor cholesky(const SymmetricMatrix& a, double tol = 1e-12);

// Nearest positive definite correlation matrix (Higham 2002): alternating
// projections between the PSD cone and the unit-diagonal set with Dykstra
// correction, then a final eigenvalue floor with the unit diagonal restored.
SymmetricMatrix nearest_pd(const SymmetricMatrix& a, double eig_floor = 1e-8,
                           int max_iterations = 200, double tol = 1e-9);

}  // namespace scanstat
