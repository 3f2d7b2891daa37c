#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "evnn/energy.hpp"
#include "test_common.hpp"

using namespace evnn;
using namespace evnn::testing;

namespace {

SampleSet grid_samples(int res, double lo, double hi, int n_bdry = 0) {
  auto box = DomainDescriptor::box({lo, lo}, {hi, hi});
  auto s = uniform_grid({res, res}, box);
  if (n_bdry > 0) {
    double w;
    s.boundary = boundary_samples(box, n_bdry, 3, BoundaryMode::Equispaced, w);
    s.boundary_weight = w;
  }
  return s;
}

}  // namespace

TEST_CASE("free energy of trivial fields") {
  SUBCASE("zero field with Dirichlet + zero source") {
    EnergySpec spec;
    spec.dirichlet = true;
    spec.source = [](const double*) { return 0.0; };
    AnalyticField zero(2, [](const double*) { return 0.0; },
                       [](const double*, double* g) { g[0] = g[1] = 0.0; });
    auto s = grid_samples(21, 0.0, 1.0);
    CHECK(free_energy(spec, zero, s) == 0.0);
  }
  SUBCASE("constant -1 with Ginzburg-Landau and volume penalty") {
    EnergySpec spec;
    spec.dirichlet = true;
    spec.gl_inv_eps2 = 100.0;
    spec.vol_penalty_W = 1000.0;
    spec.vol_penalty_A = -(4.0 - M_PI * 0.25) + M_PI * 0.25;  // about -2.429204
    AnalyticField minus_one(2, [](const double*) { return -1.0; },
                            [](const double*, double* g) { g[0] = g[1] = 0.0; });
    auto s = grid_samples(301, -1.0, 1.0);
    const double got = free_energy(spec, minus_one, s);
    CHECK(got == doctest::Approx(1000.0 * M_PI * M_PI / 4.0).epsilon(1e-9));
  }
  SUBCASE("heat initial state Dirichlet energy near pi^2/4") {
    EnergySpec spec;
    spec.dirichlet = true;
    AnalyticField u0(
        2, [](const double* x) { return std::sin(M_PI_2 * x[0]) * std::sin(M_PI_2 * x[1]); },
        [](const double* x, double* g) {
          g[0] = M_PI_2 * std::cos(M_PI_2 * x[0]) * std::sin(M_PI_2 * x[1]);
          g[1] = M_PI_2 * std::sin(M_PI_2 * x[0]) * std::cos(M_PI_2 * x[1]);
        });
    auto s = grid_samples(301, 0.0, 2.0);
    CHECK(free_energy(spec, u0, s) == doctest::Approx(M_PI * M_PI / 4.0).epsilon(2e-2));
  }
}

TEST_CASE("movement objective properties") {
  // tiny net over a tiny sample set
  ResNetSpec nspec{2, 1, 1, 6, 6, ActivationKind::Tanh};
  Network net_n = build_network(nspec, 3);
  Network net = build_network(nspec, 4);
  EnergySpec spec;
  spec.dirichlet = true;
  spec.source = [](const double* x) { return std::sin(x[0]); };
  spec.boundary_lambda = 7.0;
  auto s = grid_samples(9, 0.0, 1.0, 8);
  DissipationSpec eta;

  SUBCASE("objective at the reference equals the free energy") {
    EulerianObjective obj(spec, eta, nspec, s, 0.05);
    obj.set_reference(net_n.params.values);
    const double J = obj.value_and_grad(net_n.params.values, nullptr);
    const double F = obj.free_energy_of(net_n.params.values);
    CHECK(J == F);  // movement term vanishes exactly
  }
  SUBCASE("objective dominates the free energy") {
    EulerianObjective obj(spec, eta, nspec, s, 0.05);
    obj.set_reference(net_n.params.values);
    const double J = obj.value_and_grad(net.params.values, nullptr);
    const double F = obj.free_energy_of(net.params.values);
    CHECK(J >= F);
  }
  SUBCASE("tau to infinity leaves only the free energy") {
    EulerianObjective obj(spec, eta, nspec, s, 1e12);
    obj.set_reference(net_n.params.values);
    const double J = obj.value_and_grad(net.params.values, nullptr);
    const double F = obj.free_energy_of(net.params.values);
    CHECK(std::abs(J - F) < 1e-9);
  }
  SUBCASE("gradient matches finite differences (all terms active)") {
    EnergySpec full = spec;
    full.gl_inv_eps2 = 4.0;
    full.vol_penalty_W = 3.0;
    full.vol_penalty_A = 0.2;
    full.meanzero_lambda = 0.5;
    EulerianObjective obj(full, eta, nspec, s, 0.05);
    obj.set_reference(net_n.params.values);
    Vec g;
    (void)obj.value_and_grad(net.params.values, &g);
    auto fd = fd_gradient(
        [&](const Vec& th) { return obj.value_and_grad(th, nullptr); }, net.params.values);
    CHECK(max_rel_err(g, fd) < 1e-6);
  }
}

TEST_CASE("scalar toy reductions of the schemes") {
  // phi_Theta(x) = theta via an MLP whose only active parameter is the output
  // bias; F = 0.5 theta^2 from a volume penalty with W=1/2, A=0 on |Omega|=1
  MLPSpec nspec{1, {1}, ActivationKind::Tanh};
  EnergySpec spec;
  spec.vol_penalty_W = 0.5;
  spec.vol_penalty_A = 0.0;
  auto box = DomainDescriptor::box({0.0}, {1.0});
  auto s = uniform_grid({51}, box);
  s.interior_weight = 1.0 / s.n_interior();  // quadrature of the unit interval, exact mass 1
  const double tau = 0.3;

  auto make_const_net = [&](double theta0) {
    Network n{nspec, make_layout(nspec)};
    n.params.values.back() = theta0;  // b_out
    return n;
  };

  SUBCASE("implicit Euler minimizer theta/(1+tau)") {
    Network prev = make_const_net(1.0);
    EulerianObjective obj(spec, DissipationSpec{}, nspec, s, tau);
    obj.set_reference(prev.params.values);
    // closed-form minimizer over the bias-only family
    double best = 0, bestf = 1e300;
    for (double th = 0.5; th < 1.0; th += 1e-5) {
      Network cand = make_const_net(th);
      const double J = obj.value_and_grad(cand.params.values, nullptr);
      if (J < bestf) {
        bestf = J;
        best = th;
      }
    }
    CHECK(best == doctest::Approx(1.0 / (1.0 + tau)).epsilon(1e-3));
  }
  SUBCASE("BDF2 first-order condition") {
    // (3 theta - 4 a + b)/(2 tau) = -theta at the minimizer
    const double a = 0.9, b = 1.0;
    Network na = make_const_net(a), nb = make_const_net(b);
    const double expect = (4.0 * a - b) / (3.0 + 2.0 * tau);
    double best = 0, bestf = 1e300;
    for (double th = 0.5; th < 1.1; th += 1e-5) {
      Network cand = make_const_net(th);
      const double J = evnn_objective_bdf2(spec, cand, na, nb, tau, 1.0, s);
      if (J < bestf) {
        bestf = J;
        best = th;
      }
    }
    CHECK(best == doctest::Approx(expect).epsilon(1e-3));
  }
  SUBCASE("Crank-Nicolson first-order condition (trapezoidal)") {
    // (theta - a)/tau = -(theta + a)/2
    const double a = 1.0;
    Network na = make_const_net(a);
    const double expect = a * (1.0 - tau / 2.0) / (1.0 + tau / 2.0);
    double best = 0, bestf = 1e300;
    for (double th = 0.5; th < 1.1; th += 1e-5) {
      Network cand = make_const_net(th);
      const double J = evnn_objective_cn(spec, cand, na, tau, 1.0, s);
      if (J < bestf) {
        bestf = J;
        best = th;
      }
    }
    CHECK(best == doctest::Approx(expect).epsilon(1e-3));
  }
  SUBCASE("objective at the CN reference equals the free energy") {
    Network na = make_const_net(0.7);
    const double J = evnn_objective_cn(spec, na, na, tau, 1.0, s);
    EulerianObjective fo(spec, DissipationSpec{}, nspec, s, tau);
    CHECK(J == doctest::Approx(fo.free_energy_of(na.params.values)).epsilon(1e-14));
  }
}

TEST_CASE("pinn loss") {
  SUBCASE("exact solution inserted analytically has zero loss") {
    // -lap u = f with u = sin x cos y, f = 2 sin x cos y, g = 0
    AnalyticField u(2, [](const double* x) { return std::sin(x[0]) * std::cos(x[1]); }, nullptr,
                    [](const double* x) { return -2.0 * std::sin(x[0]) * std::cos(x[1]); });
    auto box = DomainDescriptor::box({0.0, -M_PI_2}, {M_PI, M_PI_2});
    auto s = latin_hypercube(500, box, 9);
    double wq;
    s.boundary = boundary_samples(box, 50, 9, BoundaryMode::UniformRandom, wq);
    s.boundary_weight = wq;
    const double L = pinn_loss([](const double* x) { return 2.0 * std::sin(x[0]) * std::cos(x[1]); },
                               nullptr, 500.0, u, s);
    CHECK(L <= 1e-12);
  }
  SUBCASE("all-zero data gives zero loss") {
    AnalyticField zero(2, [](const double*) { return 0.0; }, nullptr,
                       [](const double*) { return 0.0; });
    auto s = grid_samples(11, 0.0, 1.0, 6);
    CHECK(pinn_loss(nullptr, nullptr, 500.0, zero, s) == 0.0);
  }
  SUBCASE("network PINN gradient matches finite differences") {
    ResNetSpec nspec{2, 1, 1, 5, 5, ActivationKind::Tanh};
    Network net = build_network(nspec, 12);
    auto s = grid_samples(7, 0.0, 1.0, 5);
    PinnObjective obj([](const double* x) { return x[0] + x[1]; },
                      [](const double*) { return 0.0; }, 500.0, nspec, s);
    Vec g;
    (void)obj.value_and_grad(net.params.values, &g);
    auto fd = fd_gradient([&](const Vec& th) { return obj.value_and_grad(th, nullptr); },
                          net.params.values);
    CHECK(max_rel_err(g, fd) < 1e-5);
  }
}

TEST_CASE("kernel energy") {
  Vec pts = {0.0, 0.0, 1.0, 0.0, 0.0, 2.0};  // three 2-D points
  SUBCASE("zero kernel") {
    CHECK(kernel_energy([](const double*, const double*) { return 0.0; }, pts, 2) == 0.0);
  }
  SUBCASE("constant kernel gives c/2") {
    CHECK(kernel_energy([](const double*, const double*) { return 3.0; }, pts, 2) ==
          doctest::Approx(1.5));
  }
  SUBCASE("N=3 Gaussian kernel vs brute force") {
    auto K = [](const double* a, const double* b) {
      const double dx = a[0] - b[0], dy = a[1] - b[1];
      return std::exp(-(dx * dx + dy * dy));
    };
    double brute = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        brute += K(pts.data() + 2 * i, pts.data() + 2 * j);
    brute /= 2.0 * 9.0;
    CHECK(kernel_energy(K, pts, 2) == doctest::Approx(brute).epsilon(1e-15));
  }
}

TEST_CASE("lagrangian objective") {
  // ensemble of standard-normal draws
  Vec mean = {0.0, 0.0};
  std::vector<Vec> cov = {{1.0, 0.0}, {0.0, 1.0}};
  auto ens = gaussian_draw(2000, mean, cov, 21);
  ICNNSpec mspec{2, 3, 8, ActivationKind::GaussSoftplus, 0.1};

  SUBCASE("identity map value equals the particle free-energy estimate bitwise") {
    EnergySpec spec;
    spec.omega = EnergySpec::Omega::Entropy;
    spec.potential = [](const double* x) { return 0.5 * (x[0] * x[0] + x[1] * x[1]); };
    spec.potential_grad = [](const double* x, double* g) {
      g[0] = x[0];
      g[1] = x[1];
    };
    LagrangianObjective obj(spec, DissipationSpec{DissipationSpec::Kind::Rho}, mspec, ens, 0.05);
    const double at_id = obj.value_at_identity();
    // direct estimate, same summation order
    double direct = 0.0;
    for (int i = 0; i < ens.size(); ++i) {
      const double* x = ens.positions.data() + 2 * i;
      direct += 1.0 * (std::log(ens.rho[i]) + 0.5 * (x[0] * x[0] + x[1] * x[1])) / ens.size();
    }
    CHECK(at_id == direct);
  }
  SUBCASE("doubling map with entropy: hand-computed value") {
    // Psi(x) = 2x realized by beta=2 and zero weights; D = 4 in 2-D
    ICNNSpec dspec{2, 2, 4, ActivationKind::Softplus, 2.0};
    Network dbl{dspec, make_layout(dspec)};
    EnergySpec spec;
    spec.omega = EnergySpec::Omega::Entropy;
    const double tau = 0.1;
    const double J = lagrangian_objective(spec, dbl, ens, tau, DissipationSpec{DissipationSpec::Kind::Rho});
    double expect = 0.0;
    const int N = ens.size();
    for (int i = 0; i < N; ++i) {
      const double* x = ens.positions.data() + 2 * i;
      const double x2 = x[0] * x[0] + x[1] * x[1];
      expect += x2 / (2.0 * tau * N) + (std::log(ens.rho[i]) - std::log(4.0)) / N;
    }
    CHECK(J == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("Fokker-Planck estimate vs grid quadrature") {
    EnergySpec spec;
    spec.omega = EnergySpec::Omega::Entropy;
    spec.potential = [](const double* x) { return 0.5 * (x[0] * x[0] + x[1] * x[1]); };
    spec.potential_grad = [](const double* x, double* g) {
      g[0] = x[0];
      g[1] = x[1];
    };
    auto big = gaussian_draw(10000, mean, cov, 33);
    LagrangianObjective obj(spec, DissipationSpec{DissipationSpec::Kind::Rho}, mspec, big, 0.05);
    const double est = obj.value_at_identity();
    // fine-grid quadrature of  int rho ln rho + rho V
    const int res = 401;
    double quad = 0.0;
    const double h = 16.0 / (res - 1);
    for (int i = 0; i < res; ++i)
      for (int j = 0; j < res; ++j) {
        const double x = -8.0 + i * h, y = -8.0 + j * h;
        const double rho = std::exp(-0.5 * (x * x + y * y)) / (2.0 * M_PI);
        quad += h * h * (rho * std::log(rho) + rho * 0.5 * (x * x + y * y));
      }
    CHECK(est == doctest::Approx(quad).epsilon(0.02));
  }
  SUBCASE("permutation symmetry") {
    EnergySpec spec;
    spec.omega = EnergySpec::Omega::Entropy;
    spec.kernel = [](const double* a, const double* b) {
      const double dx = a[0] - b[0], dy = a[1] - b[1];
      return std::exp(-(dx * dx + dy * dy));
    };
    auto small = gaussian_draw(64, mean, cov, 5);
    ParticleEnsemble swapped = small;
    for (int k = 0; k < 2; ++k) {
      std::swap(swapped.positions[2 * 3 + k], swapped.positions[2 * 40 + k]);
    }
    std::swap(swapped.rho[3], swapped.rho[40]);
    std::swap(swapped.weights[3], swapped.weights[40]);
    LagrangianObjective a(spec, DissipationSpec{DissipationSpec::Kind::Rho}, mspec, small, 0.1);
    LagrangianObjective b(spec, DissipationSpec{DissipationSpec::Kind::Rho}, mspec, swapped, 0.1);
    CHECK(a.value_at_identity() == doctest::Approx(b.value_at_identity()).epsilon(1e-13));
  }
  SUBCASE("gradient matches finite differences (entropy + potential)") {
    EnergySpec spec;
    spec.omega = EnergySpec::Omega::Entropy;
    spec.potential = [](const double* x) { return 0.5 * (x[0] * x[0] + x[1] * x[1]); };
    spec.potential_grad = [](const double* x, double* g) {
      g[0] = x[0];
      g[1] = x[1];
    };
    auto small = gaussian_draw(50, mean, cov, 8);
    ICNNSpec tiny{2, 2, 4, ActivationKind::GaussSoftplus, 0.3};
    Network map = build_network(tiny, 13);
    LagrangianObjective obj(spec, DissipationSpec{DissipationSpec::Kind::Rho}, tiny, small, 0.1);
    Vec g;
    (void)obj.value_and_grad(map.params.values, &g);
    auto fd = fd_gradient([&](const Vec& th) { return obj.value_and_grad(th, nullptr); },
                          map.params.values, 1e-6);
    CHECK(max_rel_err(g, fd) < 1e-5);
  }
  SUBCASE("power internal energy gradient matches finite differences") {
    EnergySpec spec;
    spec.omega = EnergySpec::Omega::Power;
    spec.power_alpha = 4.0;
    DissipationSpec eta;  // constant 1: c_i = 1/rho_i
    auto small = gaussian_draw(50, mean, cov, 9);
    ICNNSpec tiny{2, 2, 4, ActivationKind::GaussSoftplus, 0.3};
    Network map = build_network(tiny, 14);
    LagrangianObjective obj(spec, eta, tiny, small, 0.1);
    Vec g;
    (void)obj.value_and_grad(map.params.values, &g);
    auto fd = fd_gradient([&](const Vec& th) { return obj.value_and_grad(th, nullptr); },
                          map.params.values, 1e-6);
    CHECK(max_rel_err(g, fd) < 1e-5);
  }
  SUBCASE("interaction kernel gradient matches finite differences") {
    EnergySpec spec;
    spec.kernel = [](const double* a, const double* b) {
      const double dx = a[0] - b[0], dy = a[1] - b[1];
      return std::exp(-(dx * dx + dy * dy));
    };
    spec.kernel_grad = [](const double* a, const double* b, double* g) {
      const double dx = a[0] - b[0], dy = a[1] - b[1];
      const double e = std::exp(-(dx * dx + dy * dy));
      g[0] = -2.0 * dx * e;
      g[1] = -2.0 * dy * e;
    };
    auto small = gaussian_draw(40, mean, cov, 10);
    ICNNSpec tiny{2, 2, 4, ActivationKind::GaussSoftplus, 0.3};
    Network map = build_network(tiny, 15);
    LagrangianObjective obj(spec, DissipationSpec{DissipationSpec::Kind::Rho}, tiny, small, 0.1);
    Vec g;
    (void)obj.value_and_grad(map.params.values, &g);
    auto fd = fd_gradient([&](const Vec& th) { return obj.value_and_grad(th, nullptr); },
                          map.params.values, 1e-6);
    CHECK(max_rel_err(g, fd) < 1e-5);
  }
}
