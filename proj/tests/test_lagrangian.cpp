#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "evnn/lagrangian.hpp"
#include "evnn/linalg.hpp"
#include "evnn/oracles.hpp"

using namespace evnn;

namespace {

ParticleEnsemble std_normal_ensemble(int n, int d, std::uint64_t seed) {
  Vec mean(d, 0.0);
  std::vector<Vec> cov(d, Vec(d, 0.0));
  for (int j = 0; j < d; ++j) cov[j][j] = 1.0;
  return gaussian_draw(n, mean, cov, seed);
}

}  // namespace

TEST_CASE("all-zero ICNN with beta=1 is exactly the identity map") {
  ICNNSpec spec{2, 3, 8, ActivationKind::GaussSoftplus, 1.0};
  Network net{spec, make_layout(spec)};
  IcnnKernel kern(spec);
  kern.bind(net.params.data());
  Vec X = {0.3, -0.7, 1.2, 0.5};
  Vec map(4), hess(8);
  kern.eval_all(X.data(), 2, nullptr, map.data(), hess.data());
  for (int i = 0; i < 4; ++i) CHECK(map[i] == doctest::Approx(X[i]).epsilon(1e-15));
  CHECK(hess[0] == doctest::Approx(1.0));
  CHECK(hess[1] == doctest::Approx(0.0));
}

TEST_CASE("identity pretrain meets its thresholds") {
  ICNNSpec spec{2, 4, 16, ActivationKind::GaussSoftplus, 0.1};
  OptimizerConfig cfg;
  cfg.max_iters = 400;
  cfg.grad_tol = 1e-12;
  cfg.param_change_tol = 1e-10;
  Network net = init_identity_map(spec, 7, cfg);
  REQUIRE(icnn_weights_nonnegative(net));

  auto ens = std_normal_ensemble(10000, 2, 11);
  IcnnKernel kern(spec);
  kern.bind(net.params.data());
  Vec map(ens.positions.size()), hess(static_cast<std::size_t>(ens.size()) * 4);
  kern.eval_all(ens.positions.data(), ens.size(), nullptr, map.data(), hess.data());
  double worst = 0.0, dmin = 1e300, dmax = -1e300;
  for (int i = 0; i < ens.size(); ++i) {
    for (int j = 0; j < 2; ++j)
      worst = std::max(worst, std::abs(map[2 * i + j] - ens.positions[2 * i + j]));
    const double det = det_small(hess.data() + 4 * static_cast<std::size_t>(i), 2);
    dmin = std::min(dmin, det);
    dmax = std::max(dmax, det);
  }
  CHECK(worst <= 1e-2);
  CHECK(dmin > 0.9);
  CHECK(dmax < 1.1);
}

TEST_CASE("single-particle quadratic potential reduces to backward Euler") {
  // one particle, V = |x|^2/2, no internal energy: Psi(x0) = x0/(1+tau)
  ParticleEnsemble one;
  one.d = 2;
  one.positions = {0.8, -0.6};
  one.rho = {1.0};
  one.weights = {1.0};
  EnergySpec spec;
  spec.potential = [](const double* x) { return 0.5 * (x[0] * x[0] + x[1] * x[1]); };
  spec.potential_grad = [](const double* x, double* g) {
    g[0] = x[0];
    g[1] = x[1];
  };
  const double tau = 0.4;
  ICNNSpec mspec{2, 2, 8, ActivationKind::GaussSoftplus, 0.1};
  OptimizerConfig inner;
  inner.max_iters = 300;
  inner.grad_tol = 1e-13;
  inner.param_change_tol = 1e-12;
  LagrangianSolver solver(spec, DissipationSpec{DissipationSpec::Kind::Rho}, mspec, one, tau,
                          inner, 3);
  auto rep = solver.step();
  REQUIRE(rep.accepted);
  const auto& x = solver.ensemble().positions;
  CHECK(x[0] == doctest::Approx(0.8 / (1.0 + tau)).epsilon(1e-4));
  CHECK(x[1] == doctest::Approx(-0.6 / (1.0 + tau)).epsilon(1e-4));
}

TEST_CASE("pushforward density bookkeeping") {
  auto ens = std_normal_ensemble(200, 2, 13);
  SUBCASE("doubling map divides the density by 4") {
    ICNNSpec dspec{2, 2, 4, ActivationKind::Softplus, 2.0};
    Network dbl{dspec, make_layout(dspec)};
    ParticleEnsemble moved = ens;
    pushforward_density(moved, dbl);
    for (int i = 0; i < ens.size(); ++i) {
      REQUIRE(moved.rho[i] == doctest::Approx(ens.rho[i] / 4.0).epsilon(1e-12));
      REQUIRE(moved.positions[2 * i] == doctest::Approx(2.0 * ens.positions[2 * i]).epsilon(1e-12));
    }
    // weights untouched
    REQUIRE(moved.weights == ens.weights);
  }
  SUBCASE("identity map changes nothing") {
    ICNNSpec ispec{2, 2, 4, ActivationKind::Softplus, 1.0};
    Network id{ispec, make_layout(ispec)};
    ParticleEnsemble moved = ens;
    pushforward_density(moved, id);
    REQUIRE(moved.positions == ens.positions);
    REQUIRE(moved.rho == ens.rho);
  }
  SUBCASE("total weight invariant under random map sequences") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    ParticleEnsemble moved = ens;
    for (int rep = 0; rep < 100; ++rep) {
      ICNNSpec sp{2, 2, 4, ActivationKind::Softplus, u(rng)};
      Network scale{sp, make_layout(sp)};
      pushforward_density(moved, scale);
      double total = 0.0;
      for (double w : moved.weights) total += w;
      REQUIRE(total == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("invert_map") {
  SUBCASE("identity potential inverts trivially") {
    ICNNSpec spec{2, 2, 4, ActivationKind::Softplus, 1.0};
    Network id{spec, make_layout(spec)};
    Vec x = {0.4, -1.2};
    auto y = invert_map(id, x);
    CHECK(y[0] == doctest::Approx(0.4).epsilon(1e-10));
    CHECK(y[1] == doctest::Approx(-1.2).epsilon(1e-10));
  }
  SUBCASE("random ICNN round trip to 1e-6") {
    ICNNSpec spec{2, 3, 8, ActivationKind::GaussSoftplus, 0.2};
    OptimizerConfig cfg;
    cfg.max_iters = 300;
    Network net = init_identity_map(spec, 21, cfg);
    IcnnKernel kern(spec);
    kern.bind(net.params.data());
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (int t = 0; t < 25; ++t) {
      Vec x = {u(rng), u(rng)};
      auto wk = kern.make_work();
      kern.forward(*wk, x.data(), 1);
      Vec img = {wk->map(0, 0), wk->map(1, 0)};
      auto back = invert_map(net, img);
      REQUIRE(std::abs(back[0] - x[0]) < 1e-6);
      REQUIRE(std::abs(back[1] - x[1]) < 1e-6);
    }
  }
}

TEST_CASE("density_at") {
  auto rho0 = [](const double* x) {
    return std::exp(-0.5 * (x[0] * x[0] + x[1] * x[1])) / (2.0 * M_PI);
  };
  SUBCASE("empty chain returns the initial density") {
    FlowMapChain chain;
    Vec x = {0.7, -0.1};
    CHECK(density_at(chain, rho0, x) == doctest::Approx(rho0(x.data())).epsilon(1e-15));
  }
  SUBCASE("single doubling map: change of variables") {
    ICNNSpec dspec{2, 2, 4, ActivationKind::Softplus, 2.0};
    Network dbl{dspec, make_layout(dspec)};
    FlowMapChain chain;
    chain.maps.push_back(dbl);
    Vec y = {1.0, 0.5};
    const double half[2] = {0.5, 0.25};
    CHECK(density_at(chain, rho0, y) == doctest::Approx(rho0(half) / 4.0).epsilon(1e-9));
  }
}

TEST_CASE("small Fokker-Planck run: decay, positivity, mass, round trips") {
  auto fp = FokkerPlanckGauss::benchmark2d();
  EnergySpec spec;
  spec.omega = EnergySpec::Omega::Entropy;
  spec.potential = [&fp](const double* x) { return fp.potential(x); };
  spec.potential_grad = [&fp](const double* x, double* g) { fp.potential_grad(x, g); };
  auto ens = std_normal_ensemble(500, 2, 41);
  ICNNSpec mspec{2, 3, 12, ActivationKind::GaussSoftplus, 0.1};
  OptimizerConfig inner;
  inner.max_iters = 40;
  inner.param_change_tol = 1e-7;
  LagrangianSolver solver(spec, DissipationSpec{DissipationSpec::Kind::Rho}, mspec, ens, 0.05,
                          inner, 53);
  double prev = solver.current_energy_estimate();
  for (int n = 0; n < 8; ++n) {
    auto rep = solver.step();
    REQUIRE(rep.accepted);
    REQUIRE(rep.energy_after <= prev);
    REQUIRE(rep.min_det > 0.0);
    prev = rep.energy_after;
    for (double r : solver.ensemble().rho) REQUIRE(r > 0.0);
    double mass = 0.0;
    for (double w : solver.ensemble().weights) mass += w;
    REQUIRE(mass == doctest::Approx(1.0).epsilon(1e-14));
  }
  // round-trip inversion on the stored chain
  for (const auto& map : solver.chain().maps) {
    CHECK(solver.max_roundtrip_error(map, 8) < 1e-6);
  }
}
