#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "evnn/eulerian.hpp"
#include "evnn/oracles.hpp"

using namespace evnn;

TEST_CASE("fit_initial reproduces a representable constant to machine level") {
  MLPSpec nspec{2, {4}, ActivationKind::Tanh};
  Network net{nspec, make_layout(nspec)};  // zero start: the output bias carries the fit
  auto s = uniform_grid({11, 11}, DomainDescriptor::box({0.0, 0.0}, {1.0, 1.0}));
  OptimizerConfig cfg;
  cfg.kind = OptKind::LBFGS;
  cfg.max_iters = 200;
  cfg.grad_tol = 1e-15;
  cfg.param_change_tol = 1e-15;
  double rmse = 1.0;
  net = fit_initial(net, [](const double*) { return 0.7; }, s, cfg, &rmse);
  CHECK(rmse <= 1e-8);
}

TEST_CASE("scalar toy trajectory is the closed-form geometric decay") {
  // phi(x) = theta via the output bias; F = theta^2/2 from a volume penalty
  MLPSpec nspec{1, {1}, ActivationKind::Tanh};
  Network net{nspec, make_layout(nspec)};
  const double theta0 = 1.0;
  net.params.values.back() = theta0;
  EnergySpec spec;
  spec.vol_penalty_W = 0.5;
  spec.vol_penalty_A = 0.0;
  auto s = uniform_grid({41}, DomainDescriptor::box({0.0}, {1.0}));
  const double tau = 0.25;
  OptimizerConfig inner;
  inner.kind = OptKind::LBFGS;
  inner.max_iters = 100;
  inner.grad_tol = 1e-14;
  inner.param_change_tol = 1e-13;
  EulerianSolver solver(spec, DissipationSpec{}, net, s, tau, TimeScheme::ImplicitEuler, inner);
  for (int n = 1; n <= 8; ++n) {
    auto rep = solver.step();
    REQUIRE(rep.accepted);
    const double expect = theta0 / std::pow(1.0 + tau, n);
    REQUIRE(solver.net().params.values.back() == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("zero steps leave the network untouched") {
  ResNetSpec nspec{2, 1, 1, 6, 6, ActivationKind::Tanh};
  Network net = build_network(nspec, 9);
  EnergySpec spec;
  spec.dirichlet = true;
  auto s = uniform_grid({9, 9}, DomainDescriptor::box({0.0, 0.0}, {1.0, 1.0}));
  OptimizerConfig inner;
  EulerianSolver solver(spec, DissipationSpec{}, net, s, 0.1, TimeScheme::ImplicitEuler, inner);
  CHECK(solver.net().params.values == net.params.values);
  CHECK(solver.step_index() == 0);
}

TEST_CASE("fixed-sample steps keep the energy chain and accept monotonically") {
  // small heat-like flow: Dirichlet energy + boundary penalty
  ResNetSpec nspec{2, 1, 1, 8, 8, ActivationKind::Tanh};
  Network net = build_network(nspec, 17);
  EnergySpec spec;
  spec.dirichlet = true;
  spec.boundary_lambda = 50.0;
  auto box = DomainDescriptor::box({0.0, 0.0}, {2.0, 2.0});
  auto s = uniform_grid({25, 25}, box);
  double wb;
  s.boundary = boundary_samples(box, 40, 3, BoundaryMode::Equispaced, wb);
  s.boundary_weight = wb;
  // start from a rough fit of the heat initial state
  OptimizerConfig fitcfg;
  fitcfg.max_iters = 150;
  net = fit_initial(net, [](const double* x) { return std::sin(M_PI_2 * x[0]) * std::sin(M_PI_2 * x[1]); },
                    s, fitcfg);
  OptimizerConfig inner;
  inner.max_iters = 60;
  inner.param_change_tol = 1e-8;
  EulerianSolver solver(spec, DissipationSpec{}, net, s, 0.02, TimeScheme::ImplicitEuler, inner);
  double prev_energy = solver.current_energy();
  for (int n = 0; n < 10; ++n) {
    auto rep = solver.step();
    REQUIRE(rep.accepted);
    // energy chain: F(new) <= J_opt <= J(start) = F(old)
    REQUIRE(rep.energy_after <= rep.objective_opt);
    REQUIRE(rep.objective_opt <= prev_energy);
    REQUIRE(rep.energy_after <= prev_energy);
    prev_energy = rep.energy_after;
  }
  // the trace mirrors the reports
  const auto& tr = solver.trace();
  REQUIRE(tr.size() == 10);
  for (std::size_t i = 1; i < tr.size(); ++i) REQUIRE(tr[i].free_energy <= tr[i - 1].free_energy);
}

TEST_CASE("BDF2 run matches implicit Euler order of magnitude on the toy") {
  MLPSpec nspec{1, {1}, ActivationKind::Tanh};
  Network net{nspec, make_layout(nspec)};
  net.params.values.back() = 1.0;
  EnergySpec spec;
  spec.vol_penalty_W = 0.5;
  auto s = uniform_grid({41}, DomainDescriptor::box({0.0}, {1.0}));
  const double tau = 0.1;
  OptimizerConfig inner;
  inner.max_iters = 100;
  inner.grad_tol = 1e-14;
  inner.param_change_tol = 1e-13;
  EulerianSolver solver(spec, DissipationSpec{}, net, s, tau, TimeScheme::BDF2, inner);
  for (int n = 0; n < 10; ++n) solver.step();
  // reference recurrence: backward Euler bootstrap, then
  // (3 a_n - 4 a_{n-1} + a_{n-2}) / (2 tau) = -a_n
  double am2 = 1.0, am1 = 1.0 / (1.0 + tau);
  for (int n = 2; n <= 10; ++n) {
    const double an = (4.0 * am1 - am2) / (3.0 + 2.0 * tau);
    am2 = am1;
    am1 = an;
  }
  const double got = solver.net().params.values.back();
  CHECK(std::abs(got - am1) < 1e-8);
  CHECK(std::abs(got - std::exp(-1.0)) < 5e-3);  // second-order accurate in tau
}

TEST_CASE("resampled runs never reject and log the monitor energy") {
  ResNetSpec nspec{2, 1, 1, 6, 6, ActivationKind::Tanh};
  Network net = build_network(nspec, 23);
  EnergySpec spec;
  spec.dirichlet = true;
  spec.source = poisson_case1_f;
  spec.boundary_lambda = 500.0;
  auto box = DomainDescriptor::box({0.0, -M_PI_2}, {M_PI, M_PI_2});
  auto make_samples = [&box](int step) {
    auto s = latin_hypercube(400, box, 1000 + step);
    double wb;
    s.boundary = boundary_samples(box, 20, 2000 + step, BoundaryMode::UniformRandom, wb);
    s.boundary_weight = wb;
    return s;
  };
  OptimizerConfig inner;
  inner.max_iters = 25;
  EulerianSolver solver(spec, DissipationSpec{}, net, make_samples(0), 0.05,
                        TimeScheme::ImplicitEuler, inner);
  solver.set_resampler(make_samples);
  solver.set_monitor_samples(uniform_grid({21, 21}, box));
  for (int n = 0; n < 5; ++n) {
    auto rep = solver.step();
    REQUIRE(rep.accepted);
  }
  for (const auto& row : solver.trace()) CHECK(row.monitor_energy != 0.0);
}
