#include "evnn/lagrangian.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>

#include "evnn/linalg.hpp"

namespace evnn {

namespace {

// fit f to |x|^2/2 by matching values and gradients on the reference sample;
// the gradient misfit is what the contract bounds, values only fix the gauge
constexpr double kValueWeight = 0.1;

class IdentityFit {
 public:
  IdentityFit(const ICNNSpec& spec, const Vec& X, int n) : kern_(spec), X_(X), n_(n) {}

  double operator()(const Vec& theta, Vec* grad) const {
    const int d = kern_.dim();
    IcnnKernel& kern = const_cast<IcnnKernel&>(kern_);
    kern.bind(theta.data());
    Vec f(n_), map(static_cast<std::size_t>(n_) * d);
    kern.eval_all(X_.data(), n_, f.data(), map.data(), nullptr);
    double value = 0.0;
    for (int i = 0; i < n_; ++i) {
      const double* x = X_.data() + static_cast<std::size_t>(i) * d;
      double x2 = 0.0;
      for (int j = 0; j < d; ++j) x2 += x[j] * x[j];
      const double rf = f[i] - 0.5 * x2;
      value += kValueWeight * rf * rf;
      for (int j = 0; j < d; ++j) {
        const double rg = map[static_cast<std::size_t>(i) * d + j] - x[j];
        value += rg * rg;
      }
    }
    value /= n_;
    if (!grad) return value;
    grad->assign(kern_.n_params(), 0.0);
    const int nc = n_chunks(n_);
    std::vector<Vec> slots(nc, Vec(kern_.n_params(), 0.0));
#pragma omp parallel
    {
      auto& wk = kern.pooled_work();
      Vec fb(kChunk), pb(static_cast<std::size_t>(kChunk) * d);
#pragma omp for schedule(static)
      for (int c = 0; c < nc; ++c) {
        const int i0 = c * kChunk;
        const int len = std::min(kChunk, n_ - i0);
        kern.forward(wk, X_.data() + static_cast<std::size_t>(i0) * d, len);
        for (int k = 0; k < len; ++k) {
          const int i = i0 + k;
          const double* x = X_.data() + static_cast<std::size_t>(i) * d;
          double x2 = 0.0;
          for (int j = 0; j < d; ++j) x2 += x[j] * x[j];
          fb[k] = kValueWeight * 2.0 * (f[i] - 0.5 * x2) / n_;
          for (int j = 0; j < d; ++j)
            pb[static_cast<std::size_t>(k) * d + j] =
                2.0 * (map[static_cast<std::size_t>(i) * d + j] - x[j]) / n_;
        }
        kern.backward(wk, fb.data(), pb.data(), nullptr, slots[c].data());
      }
    }
    for (const auto& s : slots)
      for (std::size_t i = 0; i < s.size(); ++i) (*grad)[i] += s[i];
    return value;
  }

 private:
  IcnnKernel kern_;
  const Vec& X_;
  int n_;
};

}  // namespace

Network init_identity_map(const ICNNSpec& spec, std::uint64_t seed, const OptimizerConfig& cfg,
                          double sample_scale, int n_reference, double target_rmse) {
  Network net = build_network(spec, seed);
  const int d = spec.input_dim;
  Vec mean(d, 0.0);
  std::vector<Vec> cov(d, Vec(d, 0.0));
  for (int j = 0; j < d; ++j) cov[j][j] = sample_scale * sample_scale;
  auto ref = gaussian_draw(n_reference, mean, cov, mix_seed(seed, 0x1de0));

  ParamVector layout = make_layout(spec);
  double* v = net.params.values.data();
  const auto& wout = layout.entry("w_out");
  const auto& aout = layout.entry("a_out");
  // with zero couplings the read-out sees only the last layer's skip terms
  const std::string last = std::to_string(spec.layers - 1);
  const auto& a_last = layout.entry("A" + last);

  // Start from an analytic near-identity: antisymmetric unit pairs
  //   a = +/- c e_j, weight w = (1 - beta) / (2 c^2 sqrt(2/pi))
  // give grad f ~ (1-beta) x + O(c^2) and an input Hessian ~ (1-beta) I,
  // so the full map grad f + beta x is the identity up to O(c^2).  The
  // remaining units stay dormant (zero read-out weight) as spare capacity.
  for (int i = 0; i < wout.size(); ++i) v[wout.offset + i] = 0.0;
  for (int i = 0; i < aout.size(); ++i) v[aout.offset + i] = 0.0;
  v[layout.entry("b_out").offset] = 0.0;
  const bool analytic_start = spec.width >= 2 * d;
  if (analytic_start) {
    const double c = 0.02;
    const double wpair = (1.0 - spec.beta) / (2.0 * c * c * act::kSqrt2OverPi);
    const auto& b_last = layout.entry("b" + last);
    for (int j = 0; j < d; ++j) {
      for (int s2 = 0; s2 < 2; ++s2) {
        const int r = 2 * j + s2;
        for (int cc = 0; cc < d; ++cc)
          v[a_last.offset + r * d + cc] = (cc == j ? (s2 == 0 ? c : -c) : 0.0);
        v[b_last.offset + r] = 0.0;
        v[wout.offset + r] = wpair;
      }
    }
    // cancel the constant offset so the value misfit starts near zero
    v[layout.entry("b_out").offset] = -2.0 * d * wpair * act::kSqrt2OverPi;
  }

  // freeze the internal couplings at zero (a feasible corner) while the
  // shallow parameters are fitted, then release everything under projection
  std::vector<char> frozen(net.params.size(), 0);
  for (const auto& e : layout.layout)
    if (e.name[0] == 'W')
      for (int i = 0; i < e.size(); ++i) {
        frozen[e.offset + i] = 1;
        net.params.values[e.offset + i] = 0.0;
      }

  IdentityFit fit(spec, ref.positions, n_reference);
  auto masked = [&](const Vec& x, Vec* g) {
    const double val = fit(x, g);
    if (g)
      for (std::size_t i = 0; i < g->size(); ++i)
        if (frozen[i]) (*g)[i] = 0.0;
    return val;
  };
  const auto ranges = icnn_nonneg_ranges(spec);
  auto project_frozen = [&](Vec& x) {
    for (std::size_t i = 0; i < x.size(); ++i)
      if (frozen[i]) x[i] = 0.0;
    for (int i = 0; i < wout.size(); ++i)
      x[wout.offset + i] = std::max(x[wout.offset + i], 0.0);
  };
  auto project_all = [&ranges](Vec& x) {
    for (const auto& [off, len] : ranges)
      for (int i = 0; i < len; ++i) x[off + i] = std::max(x[off + i], 0.0);
  };
  auto res = minimize(masked, net.params.values, cfg, project_frozen);
  auto res2 = minimize([&fit](const Vec& x, Vec* g) { return fit(x, g); }, std::move(res.x), cfg,
                       project_all);
  net.params.values = std::move(res2.x);
  project_icnn_weights(net);

  // verify: gradient map close to the identity on the reference sample
  IcnnKernel kern(spec);
  kern.bind(net.params.data());
  Vec map(static_cast<std::size_t>(n_reference) * d);
  kern.eval_all(ref.positions.data(), n_reference, nullptr, map.data(), nullptr);
  double mse = 0.0;
  for (int i = 0; i < n_reference; ++i)
    for (int j = 0; j < d; ++j) {
      const double r = map[static_cast<std::size_t>(i) * d + j] -
                       ref.positions[static_cast<std::size_t>(i) * d + j];
      mse += r * r;
    }
  const double rmse = std::sqrt(mse / (static_cast<double>(n_reference) * d));
  if (rmse > target_rmse)
    throw std::runtime_error("identity pretrain failed: map RMSE " + std::to_string(rmse));
  return net;
}

void pushforward_density(ParticleEnsemble& ens, const Network& map) {
  const auto* ic = std::get_if<ICNNSpec>(&map.spec);
  if (!ic) throw DomainViolation("pushforward_density expects an ICNN map");
  const int n = ens.size();
  const int d = ens.d;
  IcnnKernel kern(*ic);
  kern.bind(map.params.data());
  Vec images(static_cast<std::size_t>(n) * d), hess(static_cast<std::size_t>(n) * d * d);
  kern.eval_all(ens.positions.data(), n, nullptr, images.data(), hess.data());
  Vec dets(n);
  for (int i = 0; i < n; ++i) {
    dets[i] = det_small(hess.data() + static_cast<std::size_t>(i) * d * d, d);
    if (!(dets[i] > 0.0))
      throw PositiveDefiniteViolation("pushforward requires positive Jacobian determinants");
  }
  ens.positions = std::move(images);
  for (int i = 0; i < n; ++i) ens.rho[i] /= dets[i];
}

Vec invert_map(const Network& icnn, std::span<const double> x, double tol, int max_iters) {
  const auto* ic = std::get_if<ICNNSpec>(&icnn.spec);
  if (!ic) throw DomainViolation("invert_map expects an ICNN");
  const int d = ic->input_dim;
  if (static_cast<int>(x.size()) != d) throw DimensionMismatch("invert_map point dimension");
  IcnnKernel kern(*ic);
  kern.bind(icnn.params.data());
  auto& wk = kern.pooled_work();
  Vec y(x.begin(), x.end()), trial(d), delta(d), rhs(d);
  double res_norm = 0.0;
  auto eval = [&](const Vec& pt, Vec& grad_out, double* hess_out) {
    kern.forward(wk, pt.data(), 1);
    for (int j = 0; j < d; ++j) grad_out[j] = wk.map(j, 0);
    if (hess_out)
      for (int s = 0; s < d * d; ++s) hess_out[s] = wk.hess(s, 0);
  };
  Vec grad(d), hess(d * d);
  for (int it = 0; it < max_iters; ++it) {
    eval(y, grad, hess.data());
    res_norm = 0.0;
    for (int j = 0; j < d; ++j) {
      rhs[j] = grad[j] - x[j];
      res_norm += rhs[j] * rhs[j];
    }
    res_norm = std::sqrt(res_norm);
    if (res_norm <= tol) return y;
    spd_solve_small(hess.data(), rhs.data(), delta.data(), d);
    double step = 1.0;
    for (int back = 0; back < 30; ++back) {
      for (int j = 0; j < d; ++j) trial[j] = y[j] - step * delta[j];
      Vec g2(d);
      eval(trial, g2, nullptr);
      double rn = 0.0;
      for (int j = 0; j < d; ++j) rn += (g2[j] - x[j]) * (g2[j] - x[j]);
      if (std::sqrt(rn) < res_norm) break;
      step *= 0.5;
    }
    for (int j = 0; j < d; ++j) y[j] -= step * delta[j];
  }
  // final check
  eval(y, grad, nullptr);
  res_norm = 0.0;
  for (int j = 0; j < d; ++j) res_norm += (grad[j] - x[j]) * (grad[j] - x[j]);
  res_norm = std::sqrt(res_norm);
  if (res_norm > tol)
    throw std::runtime_error("invert_map: Newton stalled, residual " + std::to_string(res_norm));
  return y;
}

void invert_map_batch(const Network& icnn, const Vec& X, int n, Vec& Y, double tol,
                      int max_iters) {
  const auto* ic = std::get_if<ICNNSpec>(&icnn.spec);
  if (!ic) throw DomainViolation("invert_map expects an ICNN");
  const int d = ic->input_dim;
  Y = X;  // warm start at the query (maps stay near the identity)
  IcnnKernel kern(*ic);
  kern.bind(icnn.params.data());
  Vec map(static_cast<std::size_t>(n) * d), hess(static_cast<std::size_t>(n) * d * d);
  std::vector<char> active(n, 1);
  Vec rhs(d), delta(d);
  for (int it = 0; it < max_iters; ++it) {
    kern.eval_all(Y.data(), n, nullptr, map.data(), hess.data());
    long remaining = 0;
#pragma omp parallel for schedule(static) reduction(+ : remaining)
    for (int i = 0; i < n; ++i) {
      if (!active[i]) continue;
      double r2 = 0.0;
      double rhs_l[4], delta_l[4];
      for (int j = 0; j < d; ++j) {
        rhs_l[j] = map[static_cast<std::size_t>(i) * d + j] - X[static_cast<std::size_t>(i) * d + j];
        r2 += rhs_l[j] * rhs_l[j];
      }
      if (std::sqrt(r2) <= tol) {
        active[i] = 0;
        continue;
      }
      spd_solve_small(hess.data() + static_cast<std::size_t>(i) * d * d, rhs_l, delta_l, d);
      for (int j = 0; j < d; ++j) Y[static_cast<std::size_t>(i) * d + j] -= delta_l[j];
      remaining += 1;
    }
    if (remaining == 0) return;
  }
  // polish any stragglers with the damped scalar routine
  for (int i = 0; i < n; ++i) {
    if (!active[i]) continue;
    std::span<const double> xi(X.data() + static_cast<std::size_t>(i) * d, d);
    Vec yi = invert_map(icnn, xi, tol, max_iters);
    for (int j = 0; j < d; ++j) Y[static_cast<std::size_t>(i) * d + j] = yi[j];
  }
}

double density_at(const FlowMapChain& chain, const SpaceFn& rho0, std::span<const double> x) {
  Vec X(x.begin(), x.end());
  Vec v = density_at_batch(chain, rho0, X, 1);
  return v[0];
}

Vec density_at_batch(const FlowMapChain& chain, const SpaceFn& rho0, const Vec& X, int n) {
  if (chain.maps.empty()) {
    Vec out(n);
    const int d = n > 0 ? static_cast<int>(X.size()) / n : 0;
    for (int i = 0; i < n; ++i) out[i] = rho0(X.data() + static_cast<std::size_t>(i) * d);
    return out;
  }
  const auto* ic0 = std::get_if<ICNNSpec>(&chain.maps.front().spec);
  if (!ic0) throw DomainViolation("density evaluation requires convex-potential maps");
  const int d = ic0->input_dim;
  Vec Y = X;
  Vec logdet(n, 0.0);
  Vec hess(static_cast<std::size_t>(n) * d * d);
  for (int k = chain.size() - 1; k >= 0; --k) {
    const Network& map = chain.maps[k];
    Vec Ynext;
    try {
      invert_map_batch(map, Y, n, Ynext);
    } catch (const std::exception& e) {
      throw std::runtime_error("density_at: inversion failed at chain index " +
                               std::to_string(k) + ": " + e.what());
    }
    // determinant of the forward map at its pre-image
    const auto* ic = std::get_if<ICNNSpec>(&map.spec);
    IcnnKernel kern(*ic);
    kern.bind(map.params.data());
    kern.eval_all(Ynext.data(), n, nullptr, nullptr, hess.data());
    for (int i = 0; i < n; ++i)
      logdet[i] += std::log(det_small(hess.data() + static_cast<std::size_t>(i) * d * d, d));
    Y = std::move(Ynext);
  }
  Vec out(n);
  for (int i = 0; i < n; ++i)
    out[i] = rho0(Y.data() + static_cast<std::size_t>(i) * d) * std::exp(-logdet[i]);
  return out;
}

LagrangianSolver::LagrangianSolver(EnergySpec spec, DissipationSpec eta, ICNNSpec map_spec,
                                   ParticleEnsemble initial, double tau, OptimizerConfig inner,
                                   std::uint64_t seed)
    : spec_(std::move(spec)),
      eta_(eta),
      map_spec_(map_spec),
      ens_(std::move(initial)),
      tau_(tau),
      inner_(std::move(inner)) {
  ens_.validate();
  OptimizerConfig pre = inner_;
  pre.kind = OptKind::LBFGS;
  pre.max_iters = 500;
  pre.grad_tol = 1e-12;
  pre.param_change_tol = 1e-10;
  identity_start_ = init_identity_map(map_spec_, seed, pre);
}

double LagrangianSolver::current_energy_estimate() const {
  LagrangianObjective obj(spec_, eta_, map_spec_, ens_, tau_);
  return obj.value_at_identity();
}

double LagrangianSolver::max_roundtrip_error(const Network& map, int n_probe) const {
  const int n = ens_.size();
  const int d = ens_.d;
  const int stride = std::max(1, n / std::max(1, n_probe));
  Vec probes;
  for (int i = 0; i < n; i += stride) {
    const double* x = ens_.positions.data() + static_cast<std::size_t>(i) * d;
    probes.insert(probes.end(), x, x + d);
  }
  const int np = static_cast<int>(probes.size()) / d;
  IcnnKernel kern(map_spec_);
  kern.bind(map.params.data());
  Vec images(probes.size());
  kern.eval_all(probes.data(), np, nullptr, images.data(), nullptr);
  Vec back;
  invert_map_batch(map, images, np, back, 1e-8);
  double worst = 0.0;
  for (std::size_t k = 0; k < probes.size(); ++k)
    worst = std::max(worst, std::abs(back[k] - probes[k]));
  return worst;
}

LagStepReport LagrangianSolver::step() {
  const auto t0 = std::chrono::steady_clock::now();
  LagStepReport rep;
  LagrangianObjective obj(spec_, eta_, map_spec_, ens_, tau_);
  rep.energy_before = obj.value_at_identity();

  const auto ranges = icnn_nonneg_ranges(map_spec_);
  auto res = minimize([&obj](const Vec& x, Vec* g) { return obj.value_and_grad(x, g); },
                      identity_start_.params.values, inner_, [&ranges](Vec& x) {
                        for (const auto& [off, len] : ranges)
                          for (int i = 0; i < len; ++i) x[off + i] = std::max(x[off + i], 0.0);
                      });
  rep.inner_iters = res.iters;
  rep.stop = res.reason;
  rep.objective_opt = res.f;

  rep.accepted = std::isfinite(res.f) && res.f <= rep.energy_before;
  if (rep.accepted) {
    Network map{NetworkSpec{map_spec_}, make_layout(NetworkSpec{map_spec_})};
    map.params.values = std::move(res.x);
    Vec images, dets;
    obj.map_and_dets(map.params.values, images, dets);
    rep.min_det = *std::min_element(dets.begin(), dets.end());
    rep.max_det = *std::max_element(dets.begin(), dets.end());
    if (!(rep.min_det > 0.0))
      throw PositiveDefiniteViolation("accepted step produced a non-positive determinant");
    ens_.positions = std::move(images);
    for (int i = 0; i < ens_.size(); ++i) ens_.rho[i] /= dets[i];
    chain_.maps.push_back(std::move(map));
  }
  rep.energy_after = current_energy_estimate();
  ++n_;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace evnn
