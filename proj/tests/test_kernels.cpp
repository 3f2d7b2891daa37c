#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "evnn/autodiff.hpp"
#include "evnn/kernels.hpp"
#include "test_common.hpp"

using namespace evnn;
using namespace evnn::testing;

namespace {

// Reference objective on the tape: sum_i a_i phi(x_i) + B_i . grad(x_i)
// (+ c_i lap(x_i)), matching ScalarNetKernel::backward's contract.
double tape_objective_and_grad(const Network& net, const Vec& X, int n, const Vec& a,
                               const Vec& B, const Vec& c, bool with_lap, Vec& grad_out) {
  const int d = input_dim(net.spec);
  auto loss = [&](Tape<double>& t, std::span<const TVar<double>> th) {
    TVar<double> L = t.constant(0.0);
    for (int i = 0; i < n; ++i) {
      std::span<const double> xi(X.data() + i * d, d);
      auto ch = tape_net_channels<double>(t, net.spec, th, xi, with_lap);
      L = L + t.scale(ch.value, a[i]);
      for (int j = 0; j < d; ++j) L = L + t.scale(ch.grad[j], B[i * d + j]);
      if (with_lap) {
        TVar<double> lap = ch.hess[0];
        for (int j = 1; j < d; ++j) lap = lap + ch.hess[j * d + j];
        L = L + t.scale(lap, c[i]);
      }
    }
    return L;
  };
  auto rep = grad_params(net, loss);
  grad_out = rep.grad;
  return rep.value;
}

void check_scalar_kernel(const NetworkSpec& spec, bool with_lap, std::uint64_t seed) {
  Network net = build_network(spec, seed);
  const int d = input_dim(spec);
  const int n = 23;  // odd size, exercises partial-chunk paths when > kChunk
  std::mt19937_64 rng(seed * 7 + 1);
  Vec X = random_vec(n * d, rng);
  Vec a = random_vec(n, rng), B = random_vec(n * d, rng), c = random_vec(n, rng);

  ScalarNetKernel kern(spec, with_lap);
  kern.bind(net.params.data());
  auto w = kern.make_work();
  kern.forward(*w, X.data(), n);

  // values / grads / laps against single-point tape evaluation
  for (int i = 0; i < n; ++i) {
    std::span<const double> xi(X.data() + i * d, d);
    const double phi_ref = eval_scalar(net, xi);
    REQUIRE(w->phi[i] == doctest::Approx(phi_ref).epsilon(1e-12));
    auto g_ref = grad_input(net, xi);
    for (int j = 0; j < d; ++j)
      REQUIRE(w->grad(j, i) == doctest::Approx(g_ref[j]).epsilon(1e-10));
    if (with_lap) {
      auto H = hessian_input(net, xi);
      double lap_ref = 0;
      for (int j = 0; j < d; ++j) lap_ref += H[j * d + j];
      REQUIRE(w->lap[i] == doctest::Approx(lap_ref).epsilon(1e-9));
    }
  }

  // parameter gradient against the taped objective
  Vec gk(kern.n_params(), 0.0);
  kern.backward(*w, a.data(), B.data(), with_lap ? c.data() : nullptr, gk.data());
  Vec gt;
  tape_objective_and_grad(net, X, n, a, B, c, with_lap, gt);
  REQUIRE(max_rel_err(gk, gt) < 1e-10);
}

}  // namespace

TEST_CASE("scalar-net kernel matches the tape (MLP)") {
  check_scalar_kernel(MLPSpec{2, {7, 5}, ActivationKind::Tanh}, false, 31);
  check_scalar_kernel(MLPSpec{2, {7, 5}, ActivationKind::Tanh}, true, 32);
  check_scalar_kernel(MLPSpec{3, {6}, ActivationKind::Sigmoid}, false, 33);
  check_scalar_kernel(MLPSpec{1, {4, 4, 4}, ActivationKind::Softplus}, true, 34);
}

TEST_CASE("scalar-net kernel matches the tape (ResNet)") {
  check_scalar_kernel(ResNetSpec{2, 1, 1, 20, 20, ActivationKind::Tanh}, false, 41);
  check_scalar_kernel(ResNetSpec{2, 1, 1, 20, 20, ActivationKind::Tanh}, true, 42);
  check_scalar_kernel(ResNetSpec{2, 1, 2, 20, 20, ActivationKind::Tanh}, false, 43);
  check_scalar_kernel(ResNetSpec{4, 2, 2, 10, 10, ActivationKind::Tanh}, false, 44);
  check_scalar_kernel(ResNetSpec{4, 3, 2, 8, 8, ActivationKind::Tanh}, true, 45);
  check_scalar_kernel(ResNetSpec{2, 2, 1, 6, 6, ActivationKind::Tanh, ActivationKind::Tanh},
                      false, 46);
  check_scalar_kernel(ResNetSpec{2, 2, 1, 6, 6, ActivationKind::Tanh, ActivationKind::Tanh},
                      true, 47);
}

TEST_CASE("ICNN kernel matches the tape") {
  for (auto [dd, seed] : {std::pair{2, 51}, std::pair{4, 52}}) {
    ICNNSpec spec{dd, 4, 8, ActivationKind::GaussSoftplus, 0.1};
    Network net = build_network(spec, seed);
    const int d = dd;
    const int n = 17;
    std::mt19937_64 rng(seed);
    Vec X = random_vec(n * d, rng);
    Vec fb = random_vec(n, rng), Pb = random_vec(n * d, rng), Mb = random_vec(n * d * d, rng);

    IcnnKernel kern(spec);
    kern.bind(net.params.data());
    auto w = kern.make_work();
    kern.forward(*w, X.data(), n);

    for (int i = 0; i < n; ++i) {
      std::span<const double> xi(X.data() + i * d, d);
      REQUIRE(w->f[i] == doctest::Approx(eval_scalar(net, xi)).epsilon(1e-12));
      auto g = grad_input(net, xi);
      for (int j = 0; j < d; ++j) REQUIRE(w->map(j, i) == doctest::Approx(g[j]).epsilon(1e-10));
      auto H = hessian_input(net, xi);
      for (int s = 0; s < d * d; ++s)
        REQUIRE(w->hess(s, i) == doctest::Approx(H[s]).epsilon(1e-9));
    }

    Vec gk(kern.n_params(), 0.0);
    kern.backward(*w, fb.data(), Pb.data(), Mb.data(), gk.data());

    auto loss = [&](Tape<double>& t, std::span<const TVar<double>> th) {
      TVar<double> L = t.constant(0.0);
      for (int i = 0; i < n; ++i) {
        std::span<const double> xi(X.data() + i * d, d);
        auto ch = tape_net_channels<double>(t, spec, th, xi, true);
        L = L + t.scale(ch.value, fb[i]);
        for (int j = 0; j < d; ++j) L = L + t.scale(ch.grad[j], Pb[i * d + j]);
        for (int s = 0; s < d * d; ++s) L = L + t.scale(ch.hess[s], Mb[i * d * d + s]);
      }
      return L;
    };
    auto rep = grad_params(net, loss);
    REQUIRE(max_rel_err(gk, rep.grad) < 1e-10);
  }
}

TEST_CASE("eval_all spans several chunks and matches single-point eval") {
  ResNetSpec spec{2, 1, 1, 20, 20, ActivationKind::Tanh};
  Network net = build_network(spec, 61);
  const int n = 3 * kChunk + 37;
  std::mt19937_64 rng(61);
  Vec X = random_vec(n * 2, rng);
  Vec phi(n), grad(n * 2);
  ScalarNetKernel kern(spec, false);
  kern.bind(net.params.data());
  kern.eval_all(X.data(), n, phi.data(), grad.data(), nullptr);
  for (int i : {0, 1, kChunk - 1, kChunk, 2 * kChunk + 5, n - 1}) {
    std::span<const double> xi(X.data() + i * 2, 2);
    CHECK(phi[i] == doctest::Approx(eval_scalar(net, xi)).epsilon(1e-12));
    auto g = grad_input(net, xi);
    CHECK(grad[i * 2] == doctest::Approx(g[0]).epsilon(1e-10));
    CHECK(grad[i * 2 + 1] == doctest::Approx(g[1]).epsilon(1e-10));
  }
}

TEST_CASE("chunk-slot reduction is independent of thread count") {
  // grad accumulated per chunk, then reduced in chunk order
  ResNetSpec spec{2, 1, 1, 10, 10, ActivationKind::Tanh};
  Network net = build_network(spec, 71);
  const int n = 2 * kChunk + 10;
  std::mt19937_64 rng(71);
  Vec X = random_vec(n * 2, rng);
  Vec a = random_vec(n, rng);
  ScalarNetKernel kern(spec, false);
  kern.bind(net.params.data());
  auto reduce = [&]() {
    const int nc = n_chunks(n);
    std::vector<Vec> partial(nc, Vec(kern.n_params(), 0.0));
    auto w = kern.make_work();
    for (int c = 0; c < nc; ++c) {
      const int i0 = c * kChunk;
      const int len = std::min(kChunk, n - i0);
      kern.forward(*w, X.data() + i0 * 2, len);
      kern.backward(*w, a.data() + i0, nullptr, nullptr, partial[c].data());
    }
    Vec total(kern.n_params(), 0.0);
    for (const auto& p : partial)
      for (std::size_t i = 0; i < total.size(); ++i) total[i] += p[i];
    return total;
  };
  auto g1 = reduce();
  auto g2 = reduce();
  for (std::size_t i = 0; i < g1.size(); ++i) REQUIRE(g1[i] == g2[i]);
}
