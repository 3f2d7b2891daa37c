#include <chrono>
#include <cstdio>
#include <random>

#include "evnn/autodiff.hpp"
#include "evnn/kernels.hpp"

using namespace evnn;
using clock_type = std::chrono::steady_clock;

namespace {

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

Vec random_points(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec X(static_cast<std::size_t>(n) * d);
  for (auto& x : X) x = u(rng);
  return X;
}

// Serial reference: one tape per sample, accumulated parameter gradient of
// sum_i phi(x_i) + |grad phi(x_i)|^2-style weights.
double tape_reference(const Network& net, const Vec& X, int n, Vec& grad, double& fwd_s,
                      double& bwd_s) {
  const int d = input_dim(net.spec);
  grad.assign(net.params.size(), 0.0);
  double total = 0.0;
  fwd_s = bwd_s = 0.0;
  Tape<double> tape;
  for (int i = 0; i < n; ++i) {
    tape.clear();
    std::vector<TVar<double>> theta;
    std::vector<std::int32_t> ids;
    theta.reserve(net.params.values.size());
    for (double v : net.params.values) {
      theta.push_back(tape.leaf(v));
      ids.push_back(theta.back().id);
    }
    auto t0 = clock_type::now();
    auto ch = tape_net_channels<double>(tape, net.spec, theta,
                                        std::span<const double>(X.data() + static_cast<std::size_t>(i) * d, d),
                                        false);
    auto loss = ch.value;
    for (auto& g : ch.grad) loss = loss + g * g;
    fwd_s += seconds_since(t0);
    total += tape.value(loss.id);
    t0 = clock_type::now();
    auto gi = tape.gradient(loss.id, ids);
    bwd_s += seconds_since(t0);
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += gi[k];
  }
  return total;
}

double kernel_path(const Network& net, const Vec& X, int n, Vec& grad) {
  ScalarNetKernel kern(net.spec, false);
  kern.bind(net.params.data());
  const int d = kern.dim();
  grad.assign(kern.n_params(), 0.0);
  const int nc = n_chunks(n);
  std::vector<Vec> slots(nc, Vec(kern.n_params(), 0.0));
  Vec phi(n), gx(static_cast<std::size_t>(n) * d);
  kern.eval_all(X.data(), n, phi.data(), gx.data(), nullptr);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    total += phi[i];
    for (int j = 0; j < d; ++j) {
      const double g = gx[static_cast<std::size_t>(i) * d + j];
      total += g * g;
    }
  }
#pragma omp parallel
  {
    auto& wk = kern.pooled_work();
    Vec a(kChunk), B(static_cast<std::size_t>(kChunk) * d);
#pragma omp for schedule(static)
    for (int c = 0; c < nc; ++c) {
      const int i0 = c * kChunk;
      const int len = std::min(kChunk, n - i0);
      kern.forward(wk, X.data() + static_cast<std::size_t>(i0) * d, len);
      for (int k = 0; k < len; ++k) {
        a[k] = 1.0;
        for (int j = 0; j < d; ++j)
          B[static_cast<std::size_t>(k) * d + j] =
              2.0 * gx[static_cast<std::size_t>(i0 + k) * d + j];
      }
      kern.backward(wk, a.data(), B.data(), nullptr, slots[c].data());
    }
  }
  for (const auto& s : slots)
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += s[k];
  return total;
}

void bench_net(const char* name, const NetworkSpec& spec, int n_serial, int n_parallel) {
  Network net = build_network(spec, 42);
  const int d = input_dim(spec);
  Vec X = random_points(std::max(n_serial, n_parallel), d, 7);

  Vec g_tape, g_kern;
  double fwd_s = 0.0, bwd_s = 0.0;
  auto t0 = clock_type::now();
  (void)tape_reference(net, X, n_serial, g_tape, fwd_s, bwd_s);
  const double tape_total = seconds_since(t0);

  t0 = clock_type::now();
  (void)kernel_path(net, X, n_serial, g_kern);
  const double kern_small = seconds_since(t0);

  double worst = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < g_tape.size(); ++k) scale = std::max(scale, std::abs(g_tape[k]));
  for (std::size_t k = 0; k < g_tape.size(); ++k)
    worst = std::max(worst, std::abs(g_tape[k] - g_kern[k]) / std::max(1e-3 * scale, 1e-12));

  t0 = clock_type::now();
  (void)kernel_path(net, X, n_parallel, g_kern);
  const double kern_large = seconds_since(t0);

  std::printf("%-22s tape %8.1f ms (fwd/bwd ratio %.2f) | kernel %8.1f ms | speedup %6.1fx | "
              "%d pts kernel %8.1f ms | grad rel dev %.2e\n",
              name, 1e3 * tape_total, bwd_s / std::max(fwd_s, 1e-12), 1e3 * kern_small,
              tape_total / kern_small, n_parallel, 1e3 * kern_large, worst);
}

}  // namespace

int main() {
  std::printf("serial tape reference vs fused OpenMP kernels (identical objectives)\n");
  bench_net("resnet(1x1,20) d=2", ResNetSpec{2, 1, 1, 20, 20, ActivationKind::Tanh}, 2000, 90601);
  bench_net("resnet(1x2,20) d=2", ResNetSpec{2, 1, 2, 20, 20, ActivationKind::Tanh}, 2000, 90601);
  bench_net("resnet(3x2,60) d=8", ResNetSpec{8, 3, 2, 60, 60, ActivationKind::Tanh}, 300, 10000);

  {  // convex-potential map: value+map+Hessian channels
    ICNNSpec spec{2, 6, 32, ActivationKind::GaussSoftplus, 0.1};
    Network net = build_network(spec, 42);
    Vec X = random_points(10000, 2, 9);
    IcnnKernel kern(spec);
    kern.bind(net.params.data());
    Vec f(10000), map(20000), hess(40000);
    auto t0 = clock_type::now();
    kern.eval_all(X.data(), 10000, f.data(), map.data(), hess.data());
    std::printf("icnn(6x32) d=2         value+map+hessian over 10000 pts: %8.1f ms\n",
                1e3 * seconds_since(t0));
  }
  return 0;
}
