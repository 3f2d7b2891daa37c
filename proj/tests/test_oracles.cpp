#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "evnn/oracles.hpp"

using namespace evnn;

TEST_CASE("error metrics") {
  Vec a = {1.0, 2.0, 3.0};
  CHECK(l2_error(a, a) == 0.0);
  CHECK(relative_l2_error(a, a) == 0.0);
  Vec twice = {2.0, 4.0, 6.0};
  CHECK(relative_l2_error(twice, a) == doctest::Approx(1.0));
  Vec shifted = {1.5, 2.5, 3.5};
  CHECK(l2_error(shifted, a) == doctest::Approx(0.5));
  Vec zero = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(relative_l2_error(a, zero), DomainViolation);
}

TEST_CASE("PDE residual self-tests") {
  auto results = oracle_self_tests(99);
  for (const auto& r : results) {
    INFO(r.name, " residual ", r.worst_residual, " tol ", r.tolerance);
    CHECK(r.pass);
  }
}

TEST_CASE("Fokker-Planck moments") {
  auto fp = FokkerPlanckGauss::benchmark2d();
  SUBCASE("t = 0 is the standard normal") {
    auto mu = fp.mean_at(0.0);
    auto S = fp.cov_at(0.0);
    CHECK(mu[0] == doctest::Approx(0.0));
    CHECK(S[0][0] == doctest::Approx(1.0));
    CHECK(S[0][1] == doctest::Approx(0.0));
  }
  SUBCASE("long-time limit reaches the target") {
    auto mu = fp.mean_at(50.0);
    auto S = fp.cov_at(50.0);
    CHECK(mu[0] == doctest::Approx(1.0 / 3.0));
    CHECK(mu[1] == doctest::Approx(1.0 / 3.0));
    CHECK(S[0][0] == doctest::Approx(5.0 / 8.0));
    CHECK(S[0][1] == doctest::Approx(-3.0 / 8.0));
  }
  SUBCASE("t = 0.5 entry") {
    auto S = fp.cov_at(0.5);
    CHECK(S[0][0] == doctest::Approx(5.0 / 8.0 + 3.0 / 8.0 * std::exp(-4.0)).epsilon(1e-12));
    CHECK(S[0][0] == doctest::Approx(0.631868).epsilon(1e-5));
  }
  SUBCASE("4-D direct sum") {
    auto fp4 = FokkerPlanckGauss::benchmark4d();
    auto S = fp4.cov_at(0.3);
    CHECK(S[2][2] == 1.0);
    CHECK(S[3][3] == 1.0);
    CHECK(S[2][3] == 0.0);
    auto mu = fp4.mean_at(0.3);
    CHECK(mu[2] == 0.0);
  }
}

TEST_CASE("Barenblatt profile") {
  const double alpha = 4.0, C0 = 0.1;
  SUBCASE("similarity exponent") {
    // k = (alpha - 1 + 2/d)^{-1} = 1/4 shows up in the radius power law
    const double r1 = barenblatt_support_radius(1.0, alpha, C0, 2);
    const double r16 = barenblatt_support_radius(16.0, alpha, C0, 2);
    CHECK(r16 / r1 == doctest::Approx(std::pow(16.0, 1.0 / 8.0)).epsilon(1e-12));
  }
  SUBCASE("support radius value") {
    CHECK(barenblatt_support_radius(0.1, alpha, C0, 2) == doctest::Approx(1.0953).epsilon(1e-4));
    CHECK(barenblatt_support_radius(0.6, alpha, C0, 2) == doctest::Approx(1.3703).epsilon(1e-4));
  }
  SUBCASE("clamped to zero outside the support") {
    const double xi = barenblatt_support_radius(0.5, alpha, C0, 2);
    const double x[2] = {xi * 1.01, 0.0};
    CHECK(barenblatt(x, 0.5, alpha, C0, 2) == 0.0);
    const double y[2] = {xi * 0.5, 0.0};
    CHECK(barenblatt(y, 0.5, alpha, C0, 2) > 0.0);
  }
}

TEST_CASE("mixture target") {
  SUBCASE("90-degree symmetry of the mean set") {
    const double a[2] = {0.0, 4.0}, b[2] = {4.0, 0.0};
    CHECK(mixture_density(a) == doctest::Approx(mixture_density(b)).epsilon(1e-12));
  }
  SUBCASE("value at a mean is dominated by its component") {
    const double a[2] = {0.0, 4.0};
    const double dominant = 1.0 / (8.0 * 2.0 * M_PI * 0.2);
    CHECK(mixture_density(a) == doctest::Approx(dominant).epsilon(1e-6));
  }
  SUBCASE("potential gradient is minus the log-density slope") {
    const double x[2] = {1.3, -0.4};
    double g[2];
    mixture_potential_grad(x, g);
    const double h = 1e-6;
    double xp[2] = {x[0] + h, x[1]}, xm[2] = {x[0] - h, x[1]};
    const double fd = (mixture_potential(xp) - mixture_potential(xm)) / (2 * h);
    CHECK(g[0] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("FDM heat oracle") {
  SUBCASE("zero initial data stays zero") {
    auto res = fdm_heat_solve(21, 2.0, 0.01, 10, [](const double*) { return 0.0; }, {10});
    for (double v : res.fields[0]) CHECK(v == 0.0);
    for (double e : res.energy_trace) CHECK(e == 0.0);
  }
  SUBCASE("matches the closed form at small tau; energy decreasing") {
    auto ic = [](const double* x) { return std::sin(M_PI_2 * x[0]) * std::sin(M_PI_2 * x[1]); };
    const double tau = 1e-3;
    const int steps = 600;  // t = 0.6
    auto res = fdm_heat_solve(101, 2.0, tau, steps, ic, {steps});
    Vec ref(res.grid.n_interior());
    for (int i = 0; i < res.grid.n_interior(); ++i)
      ref[i] = heat_exact(res.grid.interior_point(i), 0.6);
    CHECK(relative_l2_error(res.fields[0], ref) < 1e-2);
    for (std::size_t s = 1; s < res.energy_trace.size(); ++s)
      REQUIRE(res.energy_trace[s] < res.energy_trace[s - 1]);
  }
}
