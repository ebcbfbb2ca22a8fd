#include "scanstat/mvprob.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "scanstat/distributions.hpp"
#include "scanstat/rng.hpp"

namespace scanstat {

namespace {

constexpr double kRidge = 1e-10;
constexpr double kPivotTol = 1e-13;

std::vector<int> first_primes(int count) {
  std::vector<int> primes;
  primes.reserve(count);
  for (int candidate = 2; static_cast<int>(primes.size()) < count; ++candidate) {
    bool is_prime = true;
    for (int p : primes) {
      if (p * p > candidate) break;
      if (candidate % p == 0) {
        is_prime = false;
        break;
      }
    }
    if (is_prime) primes.push_back(candidate);
  }
  return primes;
}

// Generator coordinates for the Richtmyer/Kronecker rule: fractional parts of
// square roots of consecutive primes.
std::vector<double> lattice_generators(int dim) {
  static const std::vector<int> primes = first_primes(1400);
  if (dim > static_cast<int>(primes.size())) {
    throw std::invalid_argument("mv integration: dimension too large");
  }
  std::vector<double> q(dim);
  for (int j = 0; j < dim; ++j) {
    const double root = std::sqrt(static_cast<double>(primes[j]));
    q[j] = root - std::floor(root);
  }
  return q;
}

double truncated_normal_mean(double z, double prob) {
  // E[Z | Z <= z] = -phi(z)/Phi(z), with asymptotics where Phi underflows.
  if (prob > 1e-300) return -normal_pdf(z) / prob;
  const double az = std::max(std::fabs(z), 1.0);
  return -(az + 1.0 / az);
}

// Factorized, ordered system ready for the separation-of-variables integrand:
// row i of the packed Cholesky factor spans columns [row_begin[i], i].
struct SovSystem {
  int m = 0;
  std::vector<double> rows;       // packed factor entries
  std::vector<int> row_begin;
  std::vector<int> row_offset;    // index of column row_begin[i] inside rows
  std::vector<double> diag;       // factor diagonal
  std::vector<double> limit;      // reordered standardized upper limits
};

// Greedy Genz ordering: at each pivot pick the variable with the smallest
// conditional probability, then substitute the truncated-normal mean for it.
// Operates on a unit-diagonal (correlation-normalized) matrix.
bool ordered_cholesky(Eigen::MatrixXd c, std::vector<double> b, SovSystem* out) {
  const int m = static_cast<int>(c.rows());
  Eigen::MatrixXd lower = Eigen::MatrixXd::Zero(m, m);
  std::vector<double> y(m, 0.0);
  for (int i = 0; i < m; ++i) {
    int best = i;
    double best_prob = 2.0;
    double best_z = 0.0;
    for (int k = i; k < m; ++k) {
      double dot = 0.0, sq = 0.0;
      for (int j = 0; j < i; ++j) {
        dot += lower(k, j) * y[j];
        sq += lower(k, j) * lower(k, j);
      }
      const double residual = c(k, k) - sq;
      const double denom = std::sqrt(std::max(residual, 1e-30));
      const double z = (b[k] - dot) / denom;
      const double prob = normal_cdf(z);
      if (prob < best_prob) {
        best_prob = prob;
        best = k;
        best_z = z;
      }
    }
    if (best != i) {
      c.row(best).swap(c.row(i));
      c.col(best).swap(c.col(i));
      lower.row(best).swap(lower.row(i));
      std::swap(b[best], b[i]);
    }
    double residual = c(i, i);
    for (int j = 0; j < i; ++j) residual -= lower(i, j) * lower(i, j);
    if (residual <= kPivotTol) return false;
    lower(i, i) = std::sqrt(residual);
    const double inv = 1.0 / lower(i, i);
    for (int r = i + 1; r < m; ++r) {
      double s = c(r, i);
      for (int j = 0; j < i; ++j) s -= lower(r, j) * lower(i, j);
      lower(r, i) = s * inv;
    }
    y[i] = truncated_normal_mean(best_z, best_prob);
  }
  out->m = m;
  out->limit = std::move(b);
  out->row_begin.assign(m, 0);
  out->row_offset.resize(m);
  out->diag.resize(m);
  out->rows.clear();
  out->rows.reserve(static_cast<std::size_t>(m) * (m + 1) / 2);
  int offset = 0;
  for (int i = 0; i < m; ++i) {
    out->row_offset[i] = offset;
    for (int j = 0; j < i; ++j) out->rows.push_back(lower(i, j));
    out->diag[i] = lower(i, i);
    offset += i;
  }
  return true;
}

// Band-limited Cholesky in natural order; used for large effectively banded
// matrices where the O(m^2)-per-point dense recursion would dominate.
bool banded_cholesky(const Eigen::MatrixXd& c, const std::vector<double>& b, int band,
                     SovSystem* out) {
  const int m = static_cast<int>(c.rows());
  std::vector<std::vector<double>> rows(m);
  std::vector<double> diag(m);
  std::vector<int> begin(m);
  for (int i = 0; i < m; ++i) {
    begin[i] = std::max(0, i - band);
    rows[i].assign(i - begin[i], 0.0);
  }
  for (int j = 0; j < m; ++j) {
    double residual = c(j, j);
    for (int k = begin[j]; k < j; ++k) {
      const double v = rows[j][k - begin[j]];
      residual -= v * v;
    }
    if (residual <= kPivotTol) return false;
    diag[j] = std::sqrt(residual);
    const double inv = 1.0 / diag[j];
    for (int i = j + 1; i <= std::min(m - 1, j + band); ++i) {
      double s = c(i, j);
      const int lo = std::max(begin[i], begin[j]);
      for (int k = lo; k < j; ++k) s -= rows[i][k - begin[i]] * rows[j][k - begin[j]];
      rows[i][j - begin[i]] = s * inv;
    }
  }
  out->m = m;
  out->limit = b;
  out->row_begin = std::move(begin);
  out->diag = std::move(diag);
  out->row_offset.resize(m);
  out->rows.clear();
  int offset = 0;
  for (int i = 0; i < m; ++i) {
    out->row_offset[i] = offset;
    for (double v : rows[i]) out->rows.push_back(v);
    offset += static_cast<int>(rows[i].size());
  }
  return true;
}

int effective_bandwidth(const Eigen::MatrixXd& c) {
  const int m = static_cast<int>(c.rows());
  int band = 0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < i - band; ++j) {
      if (std::fabs(c(i, j)) > 1e-13) {
        band = i - j;
        break;
      }
    }
  }
  return band;
}

// One integrand evaluation: the Genz separation-of-variables product for
// P(Z <= limit), with limits optionally scaled by the t radial factor.
double sov_integrand(const SovSystem& sys, const double* u, double radial_scale,
                     std::vector<double>* y_buffer) {
  std::vector<double>& y = *y_buffer;
  const int m = sys.m;
  double product = 1.0;
  for (int i = 0; i < m; ++i) {
    const double* row = sys.rows.data() + sys.row_offset[i];
    const double* yv = y.data() + sys.row_begin[i];
    const int len = i - sys.row_begin[i];
    // Four independent accumulators; summation order is fixed by the code, so
    // results stay deterministic while the FMA latency chain is broken up.
    double d0 = 0.0, d1 = 0.0, d2 = 0.0, d3 = 0.0;
    int j = 0;
    for (; j + 4 <= len; j += 4) {
      d0 += row[j] * yv[j];
      d1 += row[j + 1] * yv[j + 1];
      d2 += row[j + 2] * yv[j + 2];
      d3 += row[j + 3] * yv[j + 3];
    }
    for (; j < len; ++j) d0 += row[j] * yv[j];
    const double dot = (d0 + d1) + (d2 + d3);
    const double z = (radial_scale * sys.limit[i] - dot) / sys.diag[i];
    const double e = normal_cdf(z);
    product *= e;
    if (product < 1e-280) return 0.0;
    if (i + 1 < m) {
      const double arg = std::clamp(u[i] * e, 1e-300, 1.0 - 1e-16);
      y[i] = normal_quantile(arg);
    }
  }
  return product;
}

// Batched integrand: kLanes consecutive lattice points evaluated together so
// the per-coordinate normal_cdf / normal_quantile calls are independent work
// instead of one long dependency chain, and the dot products vectorize across
// lanes. u is coordinate-major (row i holds the kLanes values of coordinate
// i); y is laid out the same way.
constexpr int kLanes = 8;

void sov_integrand_batch(const SovSystem& sys, const double* u,
                         const double* radial_scale, double* f_out,
                         std::vector<double>* y_buffer) {
  std::vector<double>& y = *y_buffer;
  const int m = sys.m;
  double product[kLanes];
  for (int b = 0; b < kLanes; ++b) product[b] = 1.0;
  for (int i = 0; i < m; ++i) {
    const double* row = sys.rows.data() + sys.row_offset[i];
    const int begin = sys.row_begin[i];
    const int len = i - begin;
    double dot[kLanes] = {0.0};
    for (int j = 0; j < len; ++j) {
      const double c = row[j];
      const double* yr = y.data() + static_cast<std::size_t>(begin + j) * kLanes;
      for (int b = 0; b < kLanes; ++b) dot[b] += c * yr[b];
    }
    const double limit = sys.limit[i];
    const double inv_diag = 1.0 / sys.diag[i];
    double e[kLanes];
    for (int b = 0; b < kLanes; ++b) {
      e[b] = normal_cdf((radial_scale[b] * limit - dot[b]) * inv_diag);
      product[b] *= e[b];
    }
    double pmax = 0.0;
    for (int b = 0; b < kLanes; ++b) pmax = std::max(pmax, product[b]);
    if (pmax < 1e-280) {
      for (int b = 0; b < kLanes; ++b) f_out[b] = 0.0;
      return;
    }
    if (i + 1 < m) {
      const double* ui = u + static_cast<std::size_t>(i) * kLanes;
      double* yi = y.data() + static_cast<std::size_t>(i) * kLanes;
      for (int b = 0; b < kLanes; ++b) {
        const double arg = std::clamp(ui[b] * e[b], 1e-300, 1.0 - 1e-16);
        yi[b] = normal_quantile(arg);
      }
    }
  }
  for (int b = 0; b < kLanes; ++b) f_out[b] = product[b];
}

struct PreparedProblem {
  SovSystem sys;
  bool trivially_zero = false;  // a degenerate coordinate with negative limit
};

// Normalize to unit diagonal, drop degenerate coordinates, factor (with a
// ridge retry for semidefinite input).
PreparedProblem prepare(const Eigen::VectorXd& upper, const Eigen::VectorXd& center,
                        const SymmetricMatrix& sigma) {
  const int m_in = sigma.order();
  if (upper.size() != m_in || center.size() != m_in) {
    throw std::invalid_argument("mv integration: dimension mismatch");
  }
  if (!upper.allFinite() || !center.allFinite()) {
    throw std::invalid_argument("mv integration: limits must be finite");
  }
  const double max_diag = sigma.data().diagonal().maxCoeff();
  if (!(max_diag > 0.0)) {
    throw NotPositiveDefinite(0, "mv integration: covariance diagonal is not positive");
  }
  PreparedProblem prep;
  std::vector<int> keep;
  for (int i = 0; i < m_in; ++i) {
    if (sigma(i, i) > 1e-14 * max_diag) {
      keep.push_back(i);
    } else if (upper(i) - center(i) < 0.0) {
      prep.trivially_zero = true;  // point mass at the center exceeds the limit
      return prep;
    }
  }
  const int m = static_cast<int>(keep.size());
  Eigen::MatrixXd c(m, m);
  std::vector<double> b(m);
  std::vector<double> scale(m);
  for (int i = 0; i < m; ++i) scale[i] = std::sqrt(sigma(keep[i], keep[i]));
  for (int i = 0; i < m; ++i) {
    b[i] = (upper(keep[i]) - center(keep[i])) / scale[i];
    for (int j = 0; j < m; ++j) {
      c(i, j) = sigma(keep[i], keep[j]) / (scale[i] * scale[j]);
    }
  }
  const int band = effective_bandwidth(c);
  const bool use_band = m >= 64 && band <= m / 3;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const bool ok = use_band ? banded_cholesky(c, b, band, &prep.sys)
                             : ordered_cholesky(c, b, &prep.sys);
    if (ok) return prep;
    c.diagonal().array() += kRidge;
  }
  throw NotPositiveDefinite(-1, "mv integration: matrix is not positive semidefinite");
}

TailProbEstimate integrate(const PreparedProblem& prep, double nu,
                           const IntegrationConfig& cfg) {
  if (cfg.replications < 2) {
    throw std::invalid_argument("mv integration: need at least 2 replications");
  }
  if (!(cfg.error_target > 0.0)) {
    throw std::invalid_argument("mv integration: error target must be positive");
  }
  const bool student = nu > 0.0;
  const int m = prep.sys.m;
  const int dim = std::max(1, (m - 1) + (student ? 1 : 0));
  const int k_reps = cfg.replications;

  const std::vector<double> q = lattice_generators(dim);
  RngStream root(cfg.seed);
  std::vector<std::vector<double>> shifts(k_reps);
  for (int r = 0; r < k_reps; ++r) {
    RngStream stream = root.child(r);
    shifts[r].resize(dim);
    for (int j = 0; j < dim; ++j) shifts[r][j] = stream.uniform();
  }

  std::vector<double> sums(k_reps, 0.0), carries(k_reps, 0.0);
  std::vector<double> y_buffer(std::max(1, m));
  std::vector<double> u(dim);

  std::uint64_t n_points = std::min<std::uint64_t>(
      std::max<std::uint64_t>(cfg.initial_points, 8), cfg.max_points_per_replication);
  std::uint64_t n_done = 0;
  double value = 0.0, error = 0.0;
  bool converged = false;
  const double half_nu = 0.5 * nu;

  std::vector<double> u_batch(static_cast<std::size_t>(dim) * kLanes);
  std::vector<double> y_batch(static_cast<std::size_t>(std::max(1, m)) * kLanes);

  while (true) {
    for (int r = 0; r < k_reps; ++r) {
      const double* shift = shifts[r].data();
      double sum = sums[r], carry = carries[r];
      std::uint64_t k = n_done + 1;
      for (; k + kLanes - 1 <= n_points; k += kLanes) {
        // Coordinate-major fill: lattice point k+b in lane b, baker-folded.
        for (int j = 0; j < dim; ++j) {
          const double base = static_cast<double>(k) * q[j] + shift[j];
          double* uj = u_batch.data() + static_cast<std::size_t>(j) * kLanes;
          for (int b = 0; b < kLanes; ++b) {
            const double v = base + static_cast<double>(b) * q[j];
            uj[b] = std::fabs(2.0 * (v - std::floor(v)) - 1.0);
          }
        }
        double radial[kLanes];
        const double* coords = u_batch.data();
        if (student) {
          for (int b = 0; b < kLanes; ++b) {
            const double u0 = std::clamp(u_batch[b], 1e-15, 1.0 - 1e-15);
            radial[b] = std::sqrt(2.0 * inverse_lower_gamma(half_nu, u0) / nu);
          }
          coords = u_batch.data() + kLanes;
        } else {
          for (int b = 0; b < kLanes; ++b) radial[b] = 1.0;
        }
        double f[kLanes];
        sov_integrand_batch(prep.sys, coords, radial, f, &y_batch);
        for (int b = 0; b < kLanes; ++b) {
          const double adj = f[b] - carry;
          const double t = sum + adj;
          carry = (t - sum) - adj;
          sum = t;
        }
      }
      for (; k <= n_points; ++k) {
        for (int j = 0; j < dim; ++j) {
          const double v = static_cast<double>(k) * q[j] + shift[j];
          u[j] = std::fabs(2.0 * (v - std::floor(v)) - 1.0);
        }
        double radial = 1.0;
        const double* coords = u.data();
        if (student) {
          const double u0 = std::clamp(u[0], 1e-15, 1.0 - 1e-15);
          radial = std::sqrt(2.0 * inverse_lower_gamma(half_nu, u0) / nu);
          coords = u.data() + 1;
        }
        const double f = sov_integrand(prep.sys, coords, radial, &y_buffer);
        const double adj = f - carry;
        const double t = sum + adj;
        carry = (t - sum) - adj;
        sum = t;
      }
      sums[r] = sum;
      carries[r] = carry;
    }
    n_done = n_points;

    double mean = 0.0;
    for (int r = 0; r < k_reps; ++r) mean += sums[r] / static_cast<double>(n_done);
    mean /= k_reps;
    double var = 0.0;
    for (int r = 0; r < k_reps; ++r) {
      const double d = sums[r] / static_cast<double>(n_done) - mean;
      var += d * d;
    }
    var /= k_reps * (k_reps - 1);
    value = mean;
    error = 3.0 * std::sqrt(var);
    converged = error <= cfg.error_target;
    if (converged || n_points >= cfg.max_points_per_replication) break;
    n_points = std::min(n_points * 2, cfg.max_points_per_replication);
  }

  TailProbEstimate est;
  est.value = std::clamp(value, 0.0, 1.0);
  est.error_estimate = error;
  est.samples_used = n_done * static_cast<std::uint64_t>(k_reps);
  est.converged = converged;
  return est;
}

TailProbEstimate exact_univariate(double limit, double nu) {
  TailProbEstimate est;
  est.value = nu > 0.0 ? student_t_cdf(limit, nu) : normal_cdf(limit);
  est.error_estimate = 1e-15;
  est.samples_used = 0;
  est.converged = true;
  return est;
}

TailProbEstimate evaluate(const Eigen::VectorXd& upper, const Eigen::VectorXd& center,
                          const SymmetricMatrix& sigma, double nu,
                          const IntegrationConfig& cfg) {
  PreparedProblem prep = prepare(upper, center, sigma);
  if (prep.trivially_zero) {
    TailProbEstimate est;
    est.value = 0.0;
    est.error_estimate = 0.0;
    est.samples_used = 0;
    est.converged = true;
    return est;
  }
  if (prep.sys.m == 0) {
    TailProbEstimate est;
    est.value = 1.0;
    est.error_estimate = 0.0;
    est.samples_used = 0;
    est.converged = true;
    return est;
  }
  if (prep.sys.m == 1) {
    return exact_univariate(prep.sys.limit[0], nu);
  }
  return integrate(prep, nu, cfg);
}

}  // namespace

TailProbEstimate mvn_cdf(const Eigen::VectorXd& upper, const Eigen::VectorXd& mean,
                         const SymmetricMatrix& sigma, const IntegrationConfig& cfg) {
  return evaluate(upper, mean, sigma, 0.0, cfg);
}

TailProbEstimate mvt_cdf(const Eigen::VectorXd& upper, const Eigen::VectorXd& location,
                         const SymmetricMatrix& scale, double nu,
                         const IntegrationConfig& cfg) {
  if (!(nu > 0.0)) throw std::invalid_argument("mvt_cdf: nu must be positive");
  return evaluate(upper, location, scale, nu, cfg);
}

}  // namespace scanstat
