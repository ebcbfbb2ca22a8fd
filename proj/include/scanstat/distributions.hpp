#pragma once

namespace scanstat {

double normal_pdf(double x);
double normal_cdf(double x);

// Wichura's AS 241 (PPND16). Accurate to ~1e-15 over p in (0,1).
double normal_quantile(double p);

// Regularized lower incomplete gamma P(a,x) and its inverse in x.
double lower_gamma_regularized(double a, double x);
double inverse_lower_gamma(double a, double p);

double chi_square_quantile(double p, double nu);

// Regularized incomplete beta I_x(a,b).
double incomplete_beta(double a, double b, double x);

double student_t_pdf(double x, double nu);
double student_t_cdf(double x, double nu);
// Upper tail P(T > x); precise for large x where 1 - cdf would cancel.
double student_t_survival(double x, double nu);
double student_t_quantile(double p, double nu);

}  // namespace scanstat
