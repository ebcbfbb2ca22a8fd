#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "scanstat/covariance.hpp"
#include "scanstat/rng.hpp"
#include "scanstat/simulate.hpp"

using namespace scanstat;

TEST_CASE("structures expose kind, rho and bounds") {
  CHECK(CovarianceStructure::common(0.3).kind() == CovarianceStructure::Kind::Common);
  CHECK(CovarianceStructure::autocorrelated(-0.4).rho() == -0.4);
  CHECK(CovarianceStructure::common_lower_bound(7) == doctest::Approx(-1.0 / 6.0));
  CHECK_THROWS_AS(CovarianceStructure::common(1.2), std::invalid_argument);
  CHECK_THROWS_AS(CovarianceStructure::autocorrelated(-1.01), std::invalid_argument);

  const CovarianceStructure a = CovarianceStructure::autocorrelated(0.5);
  CHECK(a.correlation(2, 5) == doctest::Approx(0.125));
  CHECK(a.correlation(4, 4) == 1.0);
  const SymmetricMatrix m = a.correlation_matrix(4);
  CHECK(m(0, 3) == doctest::Approx(0.125));

  // Common below the PD bound for the requested n fails at model construction
  CHECK_THROWS_AS(ProcessModel(7, CovarianceStructure::common(-0.2), 1.0),
                  std::invalid_argument);
  CHECK_NOTHROW(ProcessModel(7, CovarianceStructure::common(-0.14), 1.0));
  CHECK(CovarianceStructure::common(-0.14).correlation_matrix(7)(0, 6) ==
        doctest::Approx(-0.14));
}

TEST_CASE("variance of a moving sum, both closed forms") {
  // Common: sigma^2 w (1 + (w-1) rho); Auto: sigma^2 (w + 2 sum (w-i) rho^i)
  const ProcessModel common(12, CovarianceStructure::common(0.25), 2.0);
  CHECK(moving_sum_variance(common, 3, 4) ==
        doctest::Approx(4.0 * 3.0 * (1.0 + 2.0 * 0.25)).epsilon(1e-14));

  const ProcessModel autoc(12, CovarianceStructure::autocorrelated(0.5), 1.0);
  const double expect = 3.0 + 2.0 * (2.0 * 0.5 + 1.0 * 0.25);
  CHECK(moving_sum_variance(autoc, 3, 1) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("reference covariance spot values, n=7 w=3") {
  // Common, windows 2 apart: 8 rho + 1; windows 4 apart (disjoint): 9 rho
  for (double rho : {-0.1, 0.0, 0.1, 0.25, 0.5, 0.75, 1.0}) {
    CHECK(moving_sum_cov_common(rho, 1.0, 3, 2) ==
          doctest::Approx(8.0 * rho + 1.0).epsilon(1e-6));
    CHECK(moving_sum_cov_common(rho, 1.0, 3, 4) ==
          doctest::Approx(9.0 * rho).epsilon(1e-6));
  }
  CHECK(moving_sum_cov_auto(0.25, 1.0, 3, 2) == doctest::Approx(1.72266).epsilon(2e-5));
  CHECK(moving_sum_cov_auto(0.5, 1.0, 3, 4) == doctest::Approx(0.765625).epsilon(1e-9));
  CHECK(moving_sum_cov_auto(-0.75, 1.0, 3, 2) == doctest::Approx(0.66016).epsilon(2e-5));
  CHECK(moving_sum_cov_auto(-0.1, 1.0, 3, 4) == doctest::Approx(0.00828).epsilon(2e-3));
}

TEST_CASE("disjoint-window closed forms") {
  // Common g >= w: sigma^2 w^2 rho regardless of the gap
  CHECK(moving_sum_cov_common(0.3, 2.0, 4, 4) == doctest::Approx(4.0 * 16.0 * 0.3));
  CHECK(moving_sum_cov_common(0.3, 2.0, 4, 9) == doctest::Approx(4.0 * 16.0 * 0.3));
  // Auto decays with the gap
  CHECK(moving_sum_cov_auto(0.5, 1.0, 3, 5) <
        moving_sum_cov_auto(0.5, 1.0, 3, 4));
}

TEST_CASE("closed forms match the brute-force double sum") {
  RngStream seeds(31415);
  for (int trial = 0; trial < 200; ++trial) {
    RngStream t = seeds.child(trial);
    const int n = 2 + static_cast<int>(t.uniform() * 11);  // 2..12
    const int w = 1 + static_cast<int>(t.uniform() * n);
    const double sigma = 0.5 + 2.0 * t.uniform();
    const int m = n - w + 1;

    const double rho_a = 2.0 * t.uniform() - 1.0;
    const ProcessModel ma(n, CovarianceStructure::autocorrelated(rho_a), sigma);
    const MovingSumLaw la = build_sum_covariance(ma, w);
    const Eigen::MatrixXd ba = brute_force_sum_covariance(
        ma.structure.correlation_matrix(n).data(), sigma, w);
    CHECK(la.m == m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        CHECK(la.sigma_y(i, j) ==
              doctest::Approx(ba(i, j)).epsilon(1e-10).scale(std::fabs(ba(i, j)) + 1.0));

    const double lo = CovarianceStructure::common_lower_bound(n);
    const double rho_c = lo + (1.0 - lo) * t.uniform();
    const ProcessModel mc(n, CovarianceStructure::common(rho_c), sigma);
    const MovingSumLaw lc = build_sum_covariance(mc, w);
    const Eigen::MatrixXd bc = brute_force_sum_covariance(
        mc.structure.correlation_matrix(n).data(), sigma, w);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        CHECK(lc.sigma_y(i, j) ==
              doctest::Approx(bc(i, j)).epsilon(1e-10).scale(std::fabs(bc(i, j)) + 1.0));

    const SymmetricMatrix corr = random_general_structure(n, t.next_u64());
    const ProcessModel mg(n, CovarianceStructure::general(corr), sigma);
    const MovingSumLaw lg = build_sum_covariance(mg, w);
    const Eigen::MatrixXd bg = brute_force_sum_covariance(corr.data(), sigma, w);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        CHECK(lg.sigma_y(i, j) ==
              doctest::Approx(bg(i, j)).epsilon(1e-10).scale(std::fabs(bg(i, j)) + 1.0));
  }
}

TEST_CASE("the t family reuses the same scale-matrix formulas") {
  const ProcessModel normal(9, CovarianceStructure::autocorrelated(0.4), 1.5);
  const ProcessModel student(9, CovarianceStructure::autocorrelated(0.4), 1.5,
                             Family::StudentT, 7.0);
  const MovingSumLaw ln = build_sum_covariance(normal, 4);
  const MovingSumLaw ls = build_sum_covariance(student, 4);
  CHECK(ls.family == Family::StudentT);
  CHECK(ls.nu == 7.0);
  CHECK((ls.sigma_y.data() - ln.sigma_y.data()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mean vector carries w theta0 and long windows stay accurate") {
  const ProcessModel m(300, CovarianceStructure::autocorrelated(0.9), 1.0,
                       Family::Normal, 0.0, 2.5);
  const MovingSumLaw law = build_sum_covariance(m, 100);
  CHECK(law.mean.size() == 201);
  CHECK(law.mean(0) == doctest::Approx(250.0).epsilon(1e-13));
  // w > 64 engages the compensated power series; cross-check one entry
  const Eigen::MatrixXd b = brute_force_sum_covariance(
      m.structure.correlation_matrix(300).data(), 1.0, 100);
  CHECK(law.sigma_y(0, 50) == doctest::Approx(b(0, 50)).epsilon(1e-10));
}

TEST_CASE("window geometry splits overlap into the three runs") {
  const WindowGeometry geo(5, 3, 2);  // windows [3..7] and [5..9], 1-based
  CHECK(geo.window1().begin == 2);
  CHECK(geo.window1().end == 7);
  CHECK(geo.region_a().size() == 2);
  CHECK(geo.region_b().size() == 3);
  CHECK(geo.region_c().size() == 2);
  CHECK(geo.region_a().end == geo.region_b().begin);
  CHECK(geo.region_b().end == geo.region_c().begin);
  CHECK_THROWS_AS(WindowGeometry(0, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(WindowGeometry(3, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(WindowGeometry(3, 1, -1), std::invalid_argument);
}
