#include "evnn/eulerian.hpp"

#include <Eigen/Cholesky>

#include <chrono>
#include <cmath>

namespace evnn {

namespace {

// (1/N) sum (phi(x_i) - t_i)^2 over the interior points.
class L2FitObjective {
 public:
  L2FitObjective(const NetworkSpec& spec, const SampleSet& samples, const SpaceFn& target)
      : kern_(spec, false), samples_(samples) {
    const int n = samples_.n_interior();
    t_.assign(n, 0.0);
    for (int i = 0; i < n; ++i) t_[i] = target(samples_.interior_point(i));
  }

  double operator()(const Vec& theta, Vec* grad) const {
    const int n = samples_.n_interior();
    const int d = kern_.dim();
    ScalarNetKernel& kern = const_cast<ScalarNetKernel&>(kern_);
    kern.bind(theta.data());
    Vec phi(n);
    kern.eval_all(samples_.interior.data(), n, phi.data(), nullptr, nullptr);
    const int nc = n_chunks(n);
    Vec parts(nc, 0.0);
    for (int c = 0; c < nc; ++c) {
      const int i0 = c * kChunk;
      const int len = std::min(kChunk, n - i0);
      double e = 0.0;
      for (int k = 0; k < len; ++k) {
        const double r = phi[i0 + k] - t_[i0 + k];
        e += r * r;
      }
      parts[c] = e;
    }
    double value = 0.0;
    for (double p : parts) value += p;
    value /= n;
    if (!grad) return value;
    grad->assign(kern_.n_params(), 0.0);
    std::vector<Vec> slots(nc, Vec(kern_.n_params(), 0.0));
#pragma omp parallel
    {
      auto& wk = kern.pooled_work();
      Vec a(kChunk);
#pragma omp for schedule(static)
      for (int c = 0; c < nc; ++c) {
        const int i0 = c * kChunk;
        const int len = std::min(kChunk, n - i0);
        kern.forward(wk, samples_.interior.data() + static_cast<std::size_t>(i0) * d, len);
        for (int k = 0; k < len; ++k) a[k] = 2.0 * (phi[i0 + k] - t_[i0 + k]) / n;
        kern.backward(wk, a.data(), nullptr, nullptr, slots[c].data());
      }
    }
    for (const auto& s : slots)
      for (std::size_t i = 0; i < s.size(); ++i) (*grad)[i] += s[i];
    return value;
  }

 private:
  ScalarNetKernel kern_;
  const SampleSet& samples_;
  Vec t_;
};

}  // namespace

double fit_rmse(const Network& net, const SpaceFn& target, const SampleSet& samples) {
  NetworkField f(net, false);
  const int n = samples.n_interior();
  Vec phi(n);
  f.eval(samples.interior.data(), n, phi.data(), nullptr, nullptr);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = phi[i] - target(samples.interior_point(i));
    s += r * r;
  }
  return std::sqrt(s / n);
}

namespace {

// The read-out layer is linear in its coefficients; for fixed hidden
// parameters the optimal read-out solves a tiny normal-equation system.
void solve_readout(const NetworkSpec& spec, Vec& theta, const SampleSet& samples,
                   const SpaceFn& target) {
  ScalarNetKernel kern(spec, false);
  kern.bind(theta.data());
  const int m = kern.readout_width();
  const int n = samples.n_interior();
  const int d = kern.dim();
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(m + 1, m + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + 1);
  auto& wk = kern.pooled_work();
  Eigen::VectorXd feat(m + 1);
  for (int c = 0; c < n_chunks(n); ++c) {
    const int i0 = c * kChunk;
    const int len = std::min(kChunk, n - i0);
    kern.forward(wk, samples.interior.data() + static_cast<std::size_t>(i0) * d, len);
    const Mat& Z = kern.readout_features(wk);
    for (int k = 0; k < len; ++k) {
      feat.head(m) = Z.col(k);
      feat[m] = 1.0;
      G.noalias() += feat * feat.transpose();
      rhs.noalias() += feat * target(samples.interior_point(i0 + k));
    }
  }
  G.diagonal().array() += 1e-10 * std::max(1.0, G.trace() / (m + 1));
  Eigen::VectorXd sol = G.ldlt().solve(rhs);
  for (int i = 0; i < m; ++i) theta[kern.readout_w_offset() + i] = sol[i];
  theta[kern.readout_b_offset()] = sol[m];
}

}  // namespace

Network fit_initial(Network net, const SpaceFn& target, const SampleSet& samples,
                    const OptimizerConfig& cfg, double* rmse_out) {
  L2FitObjective obj(net.spec, samples, target);
  Vec theta = net.params.values;
  double f = 0.0;
  if (cfg.kind == OptKind::LBFGS) {
    // alternate exact read-out solves with joint quasi-Newton rounds
    const int rounds = 4;
    OptimizerConfig seg = cfg;
    seg.max_iters = std::max(1, cfg.max_iters / rounds);
    for (int r = 0; r < rounds; ++r) {
      solve_readout(net.spec, theta, samples, target);
      auto res = minimize([&obj](const Vec& x, Vec* g) { return obj(x, g); }, std::move(theta), seg);
      theta = std::move(res.x);
      f = res.f;
    }
    solve_readout(net.spec, theta, samples, target);
    f = obj(theta, nullptr);
  } else {
    auto res = minimize([&obj](const Vec& x, Vec* g) { return obj(x, g); }, std::move(theta), cfg);
    theta = std::move(res.x);
    f = res.f;
  }
  net.params.values = std::move(theta);
  if (rmse_out) *rmse_out = std::sqrt(std::max(0.0, f));
  return net;
}

EulerianSolver::EulerianSolver(EnergySpec spec, DissipationSpec eta, Network init,
                               SampleSet samples, double tau, TimeScheme scheme,
                               OptimizerConfig inner)
    : spec_(spec),
      eta_(eta),
      net_(std::move(init)),
      tau_(tau),
      scheme_(scheme),
      inner_(std::move(inner)),
      obj_(spec_, eta_, net_.spec, std::move(samples), tau, scheme) {}

void EulerianSolver::set_resampler(std::function<SampleSet(int)> sampler) {
  resampler_ = std::move(sampler);
}

void EulerianSolver::set_monitor_samples(SampleSet monitor) {
  monitor_.emplace(spec_, eta_, net_.spec, std::move(monitor), tau_, TimeScheme::ImplicitEuler);
}

double EulerianSolver::current_energy() { return obj_.free_energy_of(net_.params.values); }

StepReport EulerianSolver::step() {
  const auto t0 = std::chrono::steady_clock::now();
  if (resampler_) obj_.set_samples(resampler_(n_));

  const bool bdf2_ready = scheme_ == TimeScheme::BDF2 && n_ >= 1;
  if (bdf2_ready)
    obj_.set_reference_bdf2(net_.params.values, net_prev_.params.values);
  else
    obj_.set_reference(net_.params.values);

  StepReport rep;
  auto res = minimize([this](const Vec& x, Vec* g) { return obj_.value_and_grad(x, g); },
                      net_.params.values, inner_);
  rep.inner_iters = res.iters;
  rep.stop = res.reason;
  rep.objective_opt = res.f;
  rep.energy_before = obj_.free_energy_of(net_.params.values);

  // warm-started monotone solvers cannot raise the objective above its start
  // value J(theta_n); reject defensively if that ever fails
  const bool accept = resampler_ ? std::isfinite(res.f) : (std::isfinite(res.f) && res.f <= res.f_initial);
  if (accept) {
    if (scheme_ == TimeScheme::BDF2) net_prev_ = net_;
    net_.params.values = std::move(res.x);
    rep.accepted = true;
  }
  rep.energy_after = obj_.free_energy_of(net_.params.values);
  ++n_;

  TraceRow row;
  row.step = n_;
  row.time = n_ * tau_;
  row.free_energy = rep.energy_after;
  row.objective = rep.objective_opt;
  row.inner_iters = rep.inner_iters;
  row.accepted = rep.accepted;
  if (monitor_) row.monitor_energy = monitor_->free_energy_of(net_.params.values);
  trace_.push_back(row);

  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace evnn
