#include "scanstat/distributions.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace scanstat {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
constexpr double kEps = 2.22044604925031308e-16;

double polynomial(const double* c, int degree, double x) {
  double r = c[degree];
  for (int i = degree - 1; i >= 0; --i) r = r * x + c[i];
  return r;
}

}  // namespace

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must lie in (0,1)");
  static const double a[8] = {
      3.3871328727963666080e0,  1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4,  4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4,  2.5090809287301226727e3};
  static const double b[8] = {
      1.0,                      4.2313330701600911252e1, 6.8718700749205790830e2,
      5.3941960214247511077e3,  2.1213794301586595867e4, 3.9307895800092710610e4,
      2.8729085735721942674e4,  5.2264952788528545610e3};
  static const double c[8] = {
      1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4};
  static const double d[8] = {
      1.0,                      2.05319162663775882187e0, 1.67638483018380384940e0,
      6.89767334985100004550e-1, 1.48103976427480074590e-1, 1.51986665636164571966e-2,
      5.47593808499534494600e-4, 1.05075007164441684324e-9};
  static const double e[8] = {
      6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static const double f[8] = {
      1.0,                      5.99832206555887937690e-1, 1.36929880922735805310e-1,
      1.48753612908506148525e-2, 7.86869131145613259100e-4, 1.84631831751005468180e-5,
      1.42151175831644588870e-7, 2.04426310338993978564e-15};

  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * polynomial(a, 7, r) / polynomial(b, 7, r);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    value = polynomial(c, 7, r) / polynomial(d, 7, r);
  } else {
    r -= 5.0;
    value = polynomial(e, 7, r) / polynomial(f, 7, r);
  }
  return q < 0.0 ? -value : value;
}

namespace {

// Series expansion of P(a,x), valid for x < a+1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double term = sum;
  const int max_iter = 300 + static_cast<int>(12.0 * std::sqrt(a));
  for (int i = 0; i < max_iter; ++i) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Lentz continued fraction for Q(a,x), valid for x >= a+1.
double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  const int max_iter = 300 + static_cast<int>(12.0 * std::sqrt(a));
  for (int i = 1; i <= max_iter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double lower_gamma_regularized(double a, double x) {
  if (!(a > 0.0)) throw std::domain_error("lower_gamma_regularized: a must be positive");
  if (x < 0.0) throw std::domain_error("lower_gamma_regularized: x must be nonnegative");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_cf(a, x);
}

double inverse_lower_gamma(double a, double p) {
  if (!(a > 0.0)) throw std::domain_error("inverse_lower_gamma: a must be positive");
  if (!(p >= 0.0 && p < 1.0)) throw std::domain_error("inverse_lower_gamma: p must lie in [0,1)");
  if (p == 0.0) return 0.0;

  // Wilson-Hilferty start, with the small-x asymptotic as fallback.
  double x;
  {
    const double z = normal_quantile(p);
    const double t = 1.0 - 1.0 / (9.0 * a) + z / (3.0 * std::sqrt(a));
    x = a * t * t * t;
    if (!(x > 0.0) || !std::isfinite(x)) {
      x = std::exp((std::log(p) + std::lgamma(a + 1.0)) / a);
    }
  }
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  const double lg = std::lgamma(a);
  for (int iter = 0; iter < 100; ++iter) {
    const double fx = lower_gamma_regularized(a, x) - p;
    if (fx > 0.0) {
      hi = x;
    } else {
      lo = x;
    }
    const double logpdf = -x + (a - 1.0) * std::log(x) - lg;
    double step = fx * std::exp(-logpdf);
    double next = x - step;
    if (!(next > lo && next < hi)) {
      next = std::isfinite(hi) ? 0.5 * (lo + hi) : x * 2.0;
    }
    if (std::fabs(next - x) <= 1e-14 * (std::fabs(x) + 1e-300)) {
      x = next;
      break;
    }
    x = next;
  }
  return x;
}

double chi_square_quantile(double p, double nu) {
  if (!(nu > 0.0)) throw std::domain_error("chi_square_quantile: nu must be positive");
  return 2.0 * inverse_lower_gamma(0.5 * nu, p);
}

namespace {

// Lentz continued fraction for the incomplete beta, per Numerical Recipes.
double beta_cf(double a, double b, double x) {
  const double tiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  const int max_iter = 1000 + static_cast<int>(10.0 * std::sqrt(std::max(a, b)));
  for (int m = 1; m <= max_iter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw std::domain_error("incomplete_beta: a, b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("incomplete_beta: x must lie in [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double lbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  const double front = std::exp(lbeta + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cf(a, b, x) / a;
  }
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_pdf(double x, double nu) {
  if (!(nu > 0.0)) throw std::domain_error("student_t_pdf: nu must be positive");
  const double lognorm = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                         0.5 * std::log(nu * M_PI);
  return std::exp(lognorm - 0.5 * (nu + 1.0) * std::log1p(x * x / nu));
}

double student_t_survival(double x, double nu) {
  if (!(nu > 0.0)) throw std::domain_error("student_t_survival: nu must be positive");
  if (x == 0.0) return 0.5;
  const double half_tail = 0.5 * incomplete_beta(0.5 * nu, 0.5, nu / (nu + x * x));
  return x > 0.0 ? half_tail : 1.0 - half_tail;
}

double student_t_cdf(double x, double nu) { return student_t_survival(-x, nu); }

double student_t_quantile(double p, double nu) {
  if (!(nu > 0.0)) throw std::domain_error("student_t_quantile: nu must be positive");
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("student_t_quantile: p must lie in (0,1)");
  if (p == 0.5) return 0.0;
  // Solve in the lower tail and mirror; the survival form keeps precision.
  const bool upper = p > 0.5;
  const double tail = upper ? 1.0 - p : p;  // P(T <= -x) = tail with x > 0

  // Bracket [lo, hi] with survival(hi) <= tail <= survival(lo), x > 0.
  double x = std::fabs(normal_quantile(tail));
  if (!(x > 0.0)) x = 0.5;
  double lo = 0.0, hi = x;
  while (student_t_survival(hi, nu) > tail) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) break;
  }
  x = 0.5 * (lo + hi);
  for (int iter = 0; iter < 200; ++iter) {
    const double fx = student_t_survival(x, nu) - tail;
    if (fx > 0.0) {
      lo = x;
    } else {
      hi = x;
    }
    const double pdf = student_t_pdf(x, nu);
    double next = pdf > 0.0 ? x + fx / pdf : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::fabs(next - x) <= 1e-14 * (std::fabs(x) + 1e-300)) {
      x = next;
      break;
    }
    x = next;
  }
  return upper ? x : -x;
}

}  // namespace scanstat
