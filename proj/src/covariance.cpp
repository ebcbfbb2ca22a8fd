#include "scanstat/covariance.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace scanstat {

namespace {

constexpr double kBoundSlack = 1e-12;

// Compensated (Kahan) accumulator; keeps the rho-power series and the long
// region sums accurate for large windows.
struct Accumulator {
  double sum = 0.0;
  double carry = 0.0;
  void add(double value) {
    const double y = value - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
};

std::vector<double> rho_powers(double rho, int max_exponent) {
  std::vector<double> p(static_cast<std::size_t>(max_exponent) + 1);
  p[0] = 1.0;
  for (int k = 1; k <= max_exponent; ++k) p[k] = p[k - 1] * rho;
  return p;
}

}  // namespace

CovarianceStructure CovarianceStructure::general(const SymmetricMatrix& correlation,
                                                 double pd_tol) {
  const int n = correlation.order();
  for (int i = 0; i < n; ++i) {
    if (std::fabs(correlation(i, i) - 1.0) > 1e-12) {
      throw std::invalid_argument("CovarianceStructure: diagonal entry " +
                                  std::to_string(i) + " is not 1");
    }
    for (int j = 0; j < i; ++j) {
      if (std::fabs(correlation(i, j)) > 1.0 + kBoundSlack) {
        throw std::invalid_argument("CovarianceStructure: |rho_ij| > 1 at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  if (!is_positive_definite(correlation, pd_tol)) {
    throw NotPositiveDefinite(-1,
                              "CovarianceStructure: correlation matrix is not positive "
                              "definite; repair it with nearest_pd first");
  }
  return CovarianceStructure(Kind::General, 0.0, correlation);
}

CovarianceStructure CovarianceStructure::common(double rho) {
  if (!(rho >= -1.0 && rho <= 1.0)) {
    throw std::invalid_argument("CovarianceStructure: common rho must lie in [-1,1]");
  }
  return CovarianceStructure(Kind::Common, rho, std::nullopt);
}

CovarianceStructure CovarianceStructure::autocorrelated(double rho) {
  if (!(rho >= -1.0 && rho <= 1.0)) {
    throw std::invalid_argument("CovarianceStructure: auto rho must lie in [-1,1]");
  }
  return CovarianceStructure(Kind::Auto, rho, std::nullopt);
}

double CovarianceStructure::rho() const {
  if (kind_ == Kind::General) {
    throw std::logic_error("CovarianceStructure: general structure has no scalar rho");
  }
  return rho_;
}

const SymmetricMatrix& CovarianceStructure::matrix() const {
  if (kind_ != Kind::General) {
    throw std::logic_error("CovarianceStructure: scalar structure has no matrix");
  }
  return *matrix_;
}

double CovarianceStructure::correlation(int i, int j) const {
  if (i == j) return 1.0;
  switch (kind_) {
    case Kind::General:
      return (*matrix_)(i, j);
    case Kind::Common:
      return rho_;
    case Kind::Auto:
      return std::pow(rho_, std::abs(i - j));
  }
  return 0.0;
}

SymmetricMatrix CovarianceStructure::correlation_matrix(int n) const {
  if (kind_ == Kind::General && matrix_->order() != n) {
    throw std::invalid_argument("CovarianceStructure: matrix order " +
                                std::to_string(matrix_->order()) +
                                " does not match n=" + std::to_string(n));
  }
  if (kind_ == Kind::General) return *matrix_;
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      m(i, j) = m(j, i) = correlation(i, j);
    }
  }
  return SymmetricMatrix(m);
}

ProcessModel::ProcessModel(int n_, CovarianceStructure structure_, double sigma_,
                           Family family_, double nu_, double theta0_)
    : n(n_), structure(std::move(structure_)), sigma(sigma_), family(family_),
      nu(nu_), theta0(theta0_) {
  if (n < 2) throw std::invalid_argument("ProcessModel: n must be >= 2");
  if (!(sigma > 0.0)) throw std::invalid_argument("ProcessModel: sigma must be positive");
  if (family == Family::StudentT && !(nu > 0.0)) {
    throw std::invalid_argument("ProcessModel: StudentT requires nu > 0");
  }
  if (structure.kind() == CovarianceStructure::Kind::Common &&
      structure.rho() < CovarianceStructure::common_lower_bound(n) - kBoundSlack) {
    throw std::invalid_argument("ProcessModel: common rho below -1/(n-1) for n=" +
                                std::to_string(n));
  }
  if (structure.kind() == CovarianceStructure::Kind::General &&
      structure.matrix().order() != n) {
    throw std::invalid_argument("ProcessModel: correlation matrix order must equal n");
  }
}

WindowGeometry::WindowGeometry(int w_, int t_, int g_) : w(w_), t(t_), g(g_) {
  if (w < 1) throw std::invalid_argument("WindowGeometry: w must be >= 1");
  if (t < 1) throw std::invalid_argument("WindowGeometry: t must be >= 1");
  if (g < 0) throw std::invalid_argument("WindowGeometry: g must be >= 0");
}

namespace {

double sum_pairs_within(const CovarianceStructure& s, WindowGeometry::Range r) {
  Accumulator acc;
  for (int i = r.begin; i < r.end; ++i) {
    for (int j = i + 1; j < r.end; ++j) acc.add(s.correlation(i, j));
  }
  return acc.sum;
}

double sum_cross(const CovarianceStructure& s, WindowGeometry::Range r1,
                 WindowGeometry::Range r2) {
  Accumulator acc;
  for (int i = r1.begin; i < r1.end; ++i) {
    for (int j = r2.begin; j < r2.end; ++j) acc.add(s.correlation(i, j));
  }
  return acc.sum;
}

}  // namespace

double moving_sum_variance(const ProcessModel& model, int w, int t) {
  if (w < 1 || w > model.n) throw std::out_of_range("moving_sum_variance: w out of range");
  if (t < 1 || t > model.n - w + 1) {
    throw std::out_of_range("moving_sum_variance: t out of range");
  }
  const double s2 = model.sigma * model.sigma;
  switch (model.structure.kind()) {
    case CovarianceStructure::Kind::Common: {
      const double rho = model.structure.rho();
      return s2 * w * (1.0 + (w - 1) * rho);
    }
    case CovarianceStructure::Kind::Auto: {
      const double rho = model.structure.rho();
      const auto p = rho_powers(rho, w);
      Accumulator acc;
      for (int i = 1; i <= w - 1; ++i) acc.add((w - i) * p[i]);
      return s2 * (w + 2.0 * acc.sum);
    }
    case CovarianceStructure::Kind::General: {
      const WindowGeometry::Range window{t - 1, t - 1 + w};
      return s2 * (w + 2.0 * sum_pairs_within(model.structure, window));
    }
  }
  return 0.0;
}

double moving_sum_cov_general(const CovarianceStructure& structure, double sigma,
                              int w, int t, int g) {
  if (structure.kind() != CovarianceStructure::Kind::General) {
    throw std::invalid_argument("moving_sum_cov_general: structure must be General");
  }
  const int n = structure.matrix().order();
  if (w < 1 || g < 1 || t < 1 || t + g + w - 1 > n) {
    throw std::out_of_range("moving_sum_cov_general: windows out of range");
  }
  const double s2 = sigma * sigma;
  const WindowGeometry geo(w, t, g);
  if (g >= w) {
    return s2 * sum_cross(structure, geo.window1(), geo.window2());
  }
  // Overlapping windows: split into first-only A, shared B, second-only C.
  // The shared block contributes its w-g unit diagonal plus twice its pairs.
  Accumulator acc;
  acc.add(sum_cross(structure, geo.region_a(), geo.region_b()));
  acc.add(sum_cross(structure, geo.region_a(), geo.region_c()));
  acc.add(2.0 * sum_pairs_within(structure, geo.region_b()));
  acc.add(sum_cross(structure, geo.region_b(), geo.region_c()));
  acc.add(static_cast<double>(w - g));
  return s2 * acc.sum;
}

double moving_sum_cov_auto(double rho, double sigma, int w, int g) {
  if (!(rho >= -1.0 && rho <= 1.0)) {
    throw std::invalid_argument("moving_sum_cov_auto: |rho| must be <= 1");
  }
  if (w < 1 || g < 1) throw std::out_of_range("moving_sum_cov_auto: need w >= 1, g >= 1");
  const double s2 = sigma * sigma;
  const auto p = rho_powers(rho, w + g);
  Accumulator acc;
  if (g >= w) {
    for (int i = 1; i <= w; ++i) {
      for (int j = 1; j <= w; ++j) acc.add(p[g + j - i]);
    }
    return s2 * acc.sum;
  }
  // Region offsets within the union: A = [0,g), B = [g,w), C = [w,w+g).
  for (int i = 0; i < g; ++i) {
    for (int j = g; j < w; ++j) acc.add(p[j - i]);  // A x B
    for (int j = w; j < w + g; ++j) acc.add(p[j - i]);  // A x C
  }
  for (int i = g; i < w; ++i) {
    for (int j = i + 1; j < w; ++j) acc.add(2.0 * p[j - i]);  // pairs within B
    for (int j = w; j < w + g; ++j) acc.add(p[j - i]);  // B x C
  }
  acc.add(static_cast<double>(w - g));
  return s2 * acc.sum;
}

double moving_sum_cov_common(double rho, double sigma, int w, int g) {
  if (w < 1 || g < 1) throw std::out_of_range("moving_sum_cov_common: need w >= 1, g >= 1");
  if (!(rho <= 1.0) || rho < CovarianceStructure::common_lower_bound(w + g) - kBoundSlack) {
    throw std::invalid_argument(
        "moving_sum_cov_common: rho outside [-1/(w+g-1), 1], not positive definite");
  }
  const double s2 = sigma * sigma;
  if (g >= w) return s2 * w * w * rho;
  const double slope = g * (2.0 * g - 1.0) + 2.0 * (w - g) * (w + g - 1.0) - w * (w - 1.0);
  return s2 * (rho * slope + (w - g));
}

MovingSumLaw build_sum_covariance(const ProcessModel& model, int w) {
  if (w < 1 || w > model.n) throw std::out_of_range("build_sum_covariance: w out of range");
  const int m = model.n - w + 1;
  Eigen::MatrixXd sy(m, m);
  if (model.structure.kind() == CovarianceStructure::Kind::General) {
    for (int a = 0; a < m; ++a) {
      sy(a, a) = moving_sum_variance(model, w, a + 1);
      for (int b = a + 1; b < m; ++b) {
        const double c = moving_sum_cov_general(model.structure, model.sigma, w, a + 1, b - a);
        sy(a, b) = sy(b, a) = c;
      }
    }
  } else {
    // Stationary structures give a Toeplitz matrix: one value per gap.
    std::vector<double> by_gap(m);
    by_gap[0] = moving_sum_variance(model, w, 1);
    for (int g = 1; g < m; ++g) {
      by_gap[g] = model.structure.kind() == CovarianceStructure::Kind::Common
                      ? moving_sum_cov_common(model.structure.rho(), model.sigma, w, g)
                      : moving_sum_cov_auto(model.structure.rho(), model.sigma, w, g);
    }
    for (int a = 0; a < m; ++a) {
      for (int b = 0; b < m; ++b) sy(a, b) = by_gap[std::abs(a - b)];
    }
  }
  return MovingSumLaw{m, Eigen::VectorXd::Constant(m, w * model.theta0),
                      SymmetricMatrix(sy), model.family, model.nu};
}

Eigen::MatrixXd brute_force_sum_covariance(const Eigen::MatrixXd& correlation,
                                           double sigma, int w) {
  if (correlation.rows() != correlation.cols()) {
    throw std::invalid_argument("brute_force_sum_covariance: matrix must be square");
  }
  const int n = static_cast<int>(correlation.rows());
  if (w < 1 || w > n) throw std::out_of_range("brute_force_sum_covariance: w out of range");
  const int m = n - w + 1;
  const double s2 = sigma * sigma;
  Eigen::MatrixXd sy(m, m);
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b) {
      Accumulator acc;
      for (int i = a; i < a + w; ++i) {
        for (int j = b; j < b + w; ++j) acc.add(i == j ? 1.0 : correlation(i, j));
      }
      sy(a, b) = s2 * acc.sum;
    }
  }
  return sy;
}

}  // namespace scanstat
