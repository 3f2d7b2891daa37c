#include "evnn/energy.hpp"

#include <omp.h>

#include <cmath>
#include <limits>

#include "evnn/linalg.hpp"

namespace evnn {

void EnergySpec::validate() const {
  if (omega == Omega::Power && !(power_alpha > 2.0))
    throw DomainViolation("power internal energy needs alpha > 2");
  if (boundary_lambda < 0.0 || meanzero_lambda < 0.0 || gl_inv_eps2 < 0.0 || vol_penalty_W < 0.0)
    throw DomainViolation("energy term coefficients must be nonnegative");
  if (kernel && !kernel_grad)
    ;  // value-only kernels are fine for energies; gradients need kernel_grad
}

double omega_density(const EnergySpec& spec, double rho) {
  if (!(rho > 0.0) && spec.omega == EnergySpec::Omega::Entropy)
    throw DomainViolation("entropy term needs positive density");
  switch (spec.omega) {
    case EnergySpec::Omega::Entropy: return rho * std::log(rho);
    case EnergySpec::Omega::Power: {
      const double a = spec.power_alpha;
      return a / ((a - 1.0) * (a - 2.0)) * std::pow(rho, a - 1.0);
    }
    case EnergySpec::Omega::None: return 0.0;
  }
  return 0.0;
}

double f_omega(const EnergySpec& spec, double rho) {
  if (!(rho > 0.0) && spec.omega != EnergySpec::Omega::None)
    throw DomainViolation("internal energy needs positive density");
  switch (spec.omega) {
    case EnergySpec::Omega::Entropy: return std::log(rho);
    case EnergySpec::Omega::Power: {
      const double a = spec.power_alpha;
      return a / ((a - 1.0) * (a - 2.0)) * std::pow(rho, a - 2.0);
    }
    case EnergySpec::Omega::None: return 0.0;
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// fields
// ---------------------------------------------------------------------------

NetworkField::NetworkField(const Network& net, bool with_lap)
    : theta_(net.params.values), kern_(net.spec, with_lap) {
  kern_.bind(theta_.data());
}

void NetworkField::eval(const double* X, int n, double* phi, double* grad, double* lap) const {
  kern_.eval_all(X, n, phi, grad, lap);
}

AnalyticField::AnalyticField(int d, SpaceFn value, SpaceGradFn grad, SpaceFn lap)
    : d_(d), value_(std::move(value)), lap_(std::move(lap)), grad_(std::move(grad)) {}

void AnalyticField::eval(const double* X, int n, double* phi, double* grad, double* lap) const {
  for (int i = 0; i < n; ++i) {
    const double* x = X + static_cast<std::ptrdiff_t>(i) * d_;
    if (phi) phi[i] = value_(x);
    if (grad) {
      if (!grad_) throw DomainViolation("analytic field has no gradient");
      grad_(x, grad + static_cast<std::ptrdiff_t>(i) * d_);
    }
    if (lap) {
      if (!lap_) throw DomainViolation("analytic field has no Laplacian");
      lap[i] = lap_(x);
    }
  }
}

// ---------------------------------------------------------------------------
// free energy of a field (single pass, serial accumulation)
// ---------------------------------------------------------------------------

double free_energy(const EnergySpec& spec, const FieldEval& field, const SampleSet& samples) {
  spec.validate();
  const int d = field.dim();
  const int n = samples.n_interior();
  Vec phi(n), grad;
  const bool need_grad = spec.dirichlet;
  if (need_grad) grad.resize(static_cast<std::size_t>(n) * d);
  field.eval(samples.interior.data(), n, phi.data(), need_grad ? grad.data() : nullptr, nullptr);

  const double w = samples.interior_weight;
  double e = 0.0, S = 0.0;
  for (int i = 0; i < n; ++i) {
    double loc = 0.0;
    if (spec.dirichlet) {
      double g2 = 0.0;
      for (int j = 0; j < d; ++j) {
        const double g = grad[static_cast<std::size_t>(i) * d + j];
        g2 += g * g;
      }
      loc += 0.5 * g2;
    }
    if (spec.gl_inv_eps2 > 0.0) {
      const double q = phi[i] * phi[i] - 1.0;
      loc += 0.25 * spec.gl_inv_eps2 * q * q;
    }
    if (spec.source) loc -= spec.source(samples.interior_point(i)) * phi[i];
    e += w * loc;
    S += w * phi[i];
  }
  if (spec.boundary_lambda > 0.0 && samples.n_boundary() > 0) {
    const int nb = samples.n_boundary();
    Vec phib(nb);
    field.eval(samples.boundary.data(), nb, phib.data(), nullptr, nullptr);
    double eb = 0.0;
    for (int i = 0; i < nb; ++i) {
      const double* x = samples.boundary.data() + static_cast<std::size_t>(i) * d;
      const double g = spec.boundary_target ? spec.boundary_target(x) : 0.0;
      eb += (phib[i] - g) * (phib[i] - g);
    }
    e += spec.boundary_lambda * samples.boundary_weight * eb;
  }
  if (spec.vol_penalty_W > 0.0) e += spec.vol_penalty_W * (S - spec.vol_penalty_A) * (S - spec.vol_penalty_A);
  if (spec.meanzero_lambda > 0.0) e += spec.meanzero_lambda * S * S;
  return e;
}

double free_energy(const EnergySpec& spec, const Network& net, const SampleSet& samples) {
  NetworkField f(net, false);
  return free_energy(spec, f, samples);
}

// ---------------------------------------------------------------------------
// EulerianObjective
// ---------------------------------------------------------------------------

EulerianObjective::EulerianObjective(EnergySpec spec, DissipationSpec eta, NetworkSpec net_spec,
                                     SampleSet samples, double tau, TimeScheme scheme)
    : spec_(std::move(spec)),
      eta_(eta),
      net_spec_(std::move(net_spec)),
      tau_(tau),
      scheme_(scheme),
      kern_(net_spec_, false) {
  spec_.validate();
  if (tau_ <= 0.0) throw DomainViolation("time step must be positive");
  if (scheme_ != TimeScheme::ImplicitEuler && eta_.kind != DissipationSpec::Kind::Constant)
    throw DomainViolation("BDF2/CN variants assume a constant dissipation rate");
  set_samples(std::move(samples));
}

void EulerianObjective::set_samples(SampleSet samples) {
  samples_ = std::move(samples);
  const int n = samples_.n_interior();
  f_interior_.assign(n, 0.0);
  if (spec_.source)
    for (int i = 0; i < n; ++i) f_interior_[i] = spec_.source(samples_.interior_point(i));
  const int nb = samples_.n_boundary();
  g_boundary_.assign(nb, 0.0);
  if (spec_.boundary_target)
    for (int i = 0; i < nb; ++i)
      g_boundary_[i] =
          spec_.boundary_target(samples_.boundary.data() + static_cast<std::size_t>(i) * samples_.d);
  have_ref_ = false;
}

void EulerianObjective::set_reference(const Vec& theta_n) {
  const int n = samples_.n_interior();
  phi_a_.assign(n, 0.0);
  kern_.bind(theta_n.data());
  kern_.eval_all(samples_.interior.data(), n, phi_a_.data(), nullptr, nullptr);
  eta_a_.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    eta_a_[i] = eta_.at(phi_a_[i]);
    if (!(eta_a_[i] > 0.0)) throw DomainViolation("dissipation rate must stay positive");
  }
  phi_b_.clear();
  cn_grad_.clear();
  if (scheme_ == TimeScheme::CrankNicolson) {
    cn_theta_ = theta_n;
    cn_grad_.assign(kern_.n_params(), 0.0);
    have_ref_ = false;  // gradient of F alone
    Vec g;
    (void)value_and_grad(theta_n, &g);
    cn_grad_ = g;
  }
  have_ref_ = true;
}

void EulerianObjective::set_reference_bdf2(const Vec& theta_nm1, const Vec& theta_nm2) {
  if (scheme_ != TimeScheme::BDF2) throw DomainViolation("set_reference_bdf2 needs the BDF2 scheme");
  set_reference(theta_nm1);
  const int n = samples_.n_interior();
  phi_b_.assign(n, 0.0);
  kern_.bind(theta_nm2.data());
  kern_.eval_all(samples_.interior.data(), n, phi_b_.data(), nullptr, nullptr);
  have_ref_ = true;
}

double EulerianObjective::free_energy_of(const Vec& theta) const {
  const bool saved = have_ref_;
  const_cast<EulerianObjective*>(this)->have_ref_ = false;
  const double v = value_and_grad(theta, nullptr);
  const_cast<EulerianObjective*>(this)->have_ref_ = saved;
  return v;
}

double EulerianObjective::value_and_grad(const Vec& theta, Vec* grad) const {
  const int d = kern_.dim();
  const int n = samples_.n_interior();
  const int nb = samples_.n_boundary();
  const double w = samples_.interior_weight;
  const double wb = samples_.boundary_weight;
  const bool movement = have_ref_;
  // BDF2 before two history states are available: one backward Euler step
  const TimeScheme scheme_eff =
      (scheme_ == TimeScheme::BDF2 && phi_b_.empty()) ? TimeScheme::ImplicitEuler : scheme_;
  const bool need_grad_channel = spec_.dirichlet;

  ScalarNetKernel& kern = const_cast<ScalarNetKernel&>(kern_);
  kern.bind(theta.data());

  Vec phi(n), gx;
  if (need_grad_channel) gx.resize(static_cast<std::size_t>(n) * d);
  kern.eval_all(samples_.interior.data(), n, phi.data(), need_grad_channel ? gx.data() : nullptr,
                nullptr);
  Vec phib(nb);
  if (nb > 0 && spec_.boundary_lambda > 0.0)
    kern.eval_all(samples_.boundary.data(), nb, phib.data(), nullptr, nullptr);

  // chunk-ordered partial sums of the quadrature
  const int nc = n_chunks(n);
  Vec part_e(nc, 0.0), part_S(nc, 0.0), part_ma(nc, 0.0), part_mb(nc, 0.0);
  const double inv_eps2 = spec_.gl_inv_eps2;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < nc; ++c) {
    const int i0 = c * kChunk;
    const int len = std::min(kChunk, n - i0);
    double e = 0.0, S = 0.0, ma = 0.0, mb = 0.0;
    for (int k = 0; k < len; ++k) {
      const int i = i0 + k;
      double loc = 0.0;
      if (need_grad_channel) {
        double g2 = 0.0;
        for (int j = 0; j < d; ++j) {
          const double g = gx[static_cast<std::size_t>(i) * d + j];
          g2 += g * g;
        }
        loc += 0.5 * g2;
      }
      if (inv_eps2 > 0.0) {
        const double q = phi[i] * phi[i] - 1.0;
        loc += 0.25 * inv_eps2 * q * q;
      }
      if (spec_.source) loc -= f_interior_[i] * phi[i];
      e += loc;
      S += phi[i];
      if (movement) {
        const double da = phi[i] - phi_a_[i];
        if (scheme_eff == TimeScheme::ImplicitEuler) {
          ma += eta_a_[i] * da * da;
        } else {
          ma += da * da;
          if (scheme_eff == TimeScheme::BDF2) {
            const double db = phi[i] - phi_b_[i];
            mb += db * db;
          }
        }
      }
    }
    part_e[c] = e;
    part_S[c] = S;
    part_ma[c] = ma;
    part_mb[c] = mb;
  }
  double e_int = 0.0, S = 0.0, ma = 0.0, mb = 0.0;
  for (int c = 0; c < nc; ++c) {
    e_int += part_e[c];
    S += part_S[c];
    ma += part_ma[c];
    mb += part_mb[c];
  }
  e_int *= w;
  S *= w;

  double e_bdry = 0.0;
  if (nb > 0 && spec_.boundary_lambda > 0.0) {
    const int ncb = n_chunks(nb);
    Vec pb(ncb, 0.0);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < ncb; ++c) {
      const int i0 = c * kChunk;
      const int len = std::min(kChunk, nb - i0);
      double e = 0.0;
      for (int k = 0; k < len; ++k) {
        const double dlt = phib[i0 + k] - g_boundary_[i0 + k];
        e += dlt * dlt;
      }
      pb[c] = e;
    }
    for (int c = 0; c < ncb; ++c) e_bdry += pb[c];
    e_bdry *= spec_.boundary_lambda * wb;
  }

  double value = e_int + e_bdry;
  if (spec_.vol_penalty_W > 0.0)
    value += spec_.vol_penalty_W * (S - spec_.vol_penalty_A) * (S - spec_.vol_penalty_A);
  if (spec_.meanzero_lambda > 0.0) value += spec_.meanzero_lambda * S * S;

  const double eta_c = eta_.c;
  if (movement) {
    switch (scheme_eff) {
      case TimeScheme::ImplicitEuler: value += w * ma / (2.0 * tau_); break;
      case TimeScheme::BDF2: value += eta_c * w * (ma / tau_ - mb / (4.0 * tau_)); break;
      case TimeScheme::CrankNicolson: {
        value += eta_c * w * ma / tau_;
        if (!cn_grad_.empty())
          for (std::size_t i = 0; i < cn_grad_.size(); ++i)
            value += cn_grad_[i] * (theta[i] - cn_theta_[i]);
        break;
      }
    }
  }
  if (!std::isfinite(value)) return std::numeric_limits<double>::infinity();
  if (!grad) return value;

  // reverse pass with per-chunk gradient slots
  grad->assign(kern_.n_params(), 0.0);
  const double vol_coeff = (spec_.vol_penalty_W > 0.0 ? 2.0 * spec_.vol_penalty_W * (S - spec_.vol_penalty_A) : 0.0) +
                           (spec_.meanzero_lambda > 0.0 ? 2.0 * spec_.meanzero_lambda * S : 0.0);
  std::vector<Vec> slots(nc + (nb > 0 && spec_.boundary_lambda > 0.0 ? n_chunks(nb) : 0),
                         Vec(kern_.n_params(), 0.0));
#pragma omp parallel
  {
    auto& wk = kern.pooled_work();
    Vec a(kChunk), B(static_cast<std::size_t>(kChunk) * d);
#pragma omp for schedule(static) nowait
    for (int c = 0; c < nc; ++c) {
      const int i0 = c * kChunk;
      const int len = std::min(kChunk, n - i0);
      kern.forward(wk, samples_.interior.data() + static_cast<std::size_t>(i0) * d, len);
      for (int k = 0; k < len; ++k) {
        const int i = i0 + k;
        double ai = vol_coeff;
        if (inv_eps2 > 0.0) ai += inv_eps2 * (phi[i] * phi[i] - 1.0) * phi[i];
        if (spec_.source) ai -= f_interior_[i];
        if (movement) {
          const double da = phi[i] - phi_a_[i];
          switch (scheme_eff) {
            case TimeScheme::ImplicitEuler: ai += eta_a_[i] * da / tau_; break;
            case TimeScheme::BDF2:
              ai += 2.0 * eta_c * da / tau_;
              ai -= eta_c * (phi[i] - phi_b_[i]) / (2.0 * tau_);
              break;
            case TimeScheme::CrankNicolson: ai += 2.0 * eta_c * da / tau_; break;
          }
        }
        a[k] = w * ai;
        if (need_grad_channel)
          for (int j = 0; j < d; ++j)
            B[static_cast<std::size_t>(k) * d + j] = w * gx[static_cast<std::size_t>(i) * d + j];
      }
      kern.backward(wk, a.data(), need_grad_channel ? B.data() : nullptr, nullptr,
                    slots[c].data());
    }
    if (nb > 0 && spec_.boundary_lambda > 0.0) {
      const int ncb = n_chunks(nb);
#pragma omp for schedule(static)
      for (int c = 0; c < ncb; ++c) {
        const int i0 = c * kChunk;
        const int len = std::min(kChunk, nb - i0);
        kern.forward(wk, samples_.boundary.data() + static_cast<std::size_t>(i0) * d, len);
        for (int k = 0; k < len; ++k)
          a[k] = 2.0 * spec_.boundary_lambda * wb * (phib[i0 + k] - g_boundary_[i0 + k]);
        kern.backward(wk, a.data(), nullptr, nullptr, slots[nc + c].data());
      }
    }
  }
  for (const auto& s : slots)
    for (std::size_t i = 0; i < s.size(); ++i) (*grad)[i] += s[i];
  if (movement && scheme_eff == TimeScheme::CrankNicolson && !cn_grad_.empty())
    for (std::size_t i = 0; i < cn_grad_.size(); ++i) (*grad)[i] += cn_grad_[i];
  return value;
}

// ---------------------------------------------------------------------------
// PINN / DRM baselines
// ---------------------------------------------------------------------------

PinnObjective::PinnObjective(SpaceFn f, SpaceFn g, double lambda, NetworkSpec net_spec,
                             SampleSet samples)
    : f_(std::move(f)),
      g_(std::move(g)),
      lambda_(lambda),
      net_spec_(std::move(net_spec)),
      kern_(net_spec_, true) {
  set_samples(std::move(samples));
}

void PinnObjective::set_samples(SampleSet samples) {
  samples_ = std::move(samples);
  const int n = samples_.n_interior();
  f_interior_.assign(n, 0.0);
  if (f_)
    for (int i = 0; i < n; ++i) f_interior_[i] = f_(samples_.interior_point(i));
  const int nb = samples_.n_boundary();
  g_boundary_.assign(nb, 0.0);
  if (g_)
    for (int i = 0; i < nb; ++i)
      g_boundary_[i] = g_(samples_.boundary.data() + static_cast<std::size_t>(i) * samples_.d);
}

double PinnObjective::value_and_grad(const Vec& theta, Vec* grad) const {
  const int d = kern_.dim();
  const int n = samples_.n_interior();
  const int nb = samples_.n_boundary();
  ScalarNetKernel& kern = const_cast<ScalarNetKernel&>(kern_);
  kern.bind(theta.data());
  Vec lap(n), phib(nb);
  kern.eval_all(samples_.interior.data(), n, nullptr, nullptr, lap.data());
  if (nb > 0) kern.eval_all(samples_.boundary.data(), nb, phib.data(), nullptr, nullptr);

  const int nc = n_chunks(n);
  Vec parts(nc, 0.0);
  for (int c = 0; c < nc; ++c) {
    const int i0 = c * kChunk;
    const int len = std::min(kChunk, n - i0);
    double e = 0.0;
    for (int k = 0; k < len; ++k) {
      const double r = lap[i0 + k] + f_interior_[i0 + k];
      e += r * r;
    }
    parts[c] = e;
  }
  double value = 0.0;
  for (double p : parts) value += p;
  value /= n;
  double eb = 0.0;
  for (int i = 0; i < nb; ++i) {
    const double dlt = phib[i] - g_boundary_[i];
    eb += dlt * dlt;
  }
  if (nb > 0) value += lambda_ * eb / nb;
  if (!std::isfinite(value)) return std::numeric_limits<double>::infinity();
  if (!grad) return value;

  grad->assign(kern_.n_params(), 0.0);
  const int ncb = nb > 0 ? n_chunks(nb) : 0;
  std::vector<Vec> slots(nc + ncb, Vec(kern_.n_params(), 0.0));
#pragma omp parallel
  {
    auto& wk = kern.pooled_work();
    Vec a(kChunk), cc(kChunk);
#pragma omp for schedule(static) nowait
    for (int c = 0; c < nc; ++c) {
      const int i0 = c * kChunk;
      const int len = std::min(kChunk, n - i0);
      kern.forward(wk, samples_.interior.data() + static_cast<std::size_t>(i0) * d, len);
      for (int k = 0; k < len; ++k)
        cc[k] = 2.0 * (lap[i0 + k] + f_interior_[i0 + k]) / n;
      kern.backward(wk, nullptr, nullptr, cc.data(), slots[c].data());
    }
#pragma omp for schedule(static)
    for (int c = 0; c < ncb; ++c) {
      const int i0 = c * kChunk;
      const int len = std::min(kChunk, nb - i0);
      kern.forward(wk, samples_.boundary.data() + static_cast<std::size_t>(i0) * d, len);
      for (int k = 0; k < len; ++k)
        a[k] = 2.0 * lambda_ * (phib[i0 + k] - g_boundary_[i0 + k]) / nb;
      kern.backward(wk, a.data(), nullptr, nullptr, slots[nc + c].data());
    }
  }
  for (const auto& s : slots)
    for (std::size_t i = 0; i < s.size(); ++i) (*grad)[i] += s[i];
  return value;
}

double pinn_loss(const SpaceFn& f, const SpaceFn& g, double lambda, const Network& net,
                 const SampleSet& samples) {
  PinnObjective obj(f, g, lambda, net.spec, samples);
  return obj.value_and_grad(net.params.values, nullptr);
}

double pinn_loss(const SpaceFn& f, const SpaceFn& g, double lambda, const FieldEval& field,
                 const SampleSet& samples) {
  const int d = field.dim();
  const int n = samples.n_interior();
  Vec lap(n);
  field.eval(samples.interior.data(), n, nullptr, nullptr, lap.data());
  double value = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = lap[i] + (f ? f(samples.interior_point(i)) : 0.0);
    value += r * r;
  }
  value /= std::max(1, n);
  const int nb = samples.n_boundary();
  if (nb > 0) {
    Vec phib(nb);
    field.eval(samples.boundary.data(), nb, phib.data(), nullptr, nullptr);
    double eb = 0.0;
    for (int i = 0; i < nb; ++i) {
      const double* x = samples.boundary.data() + static_cast<std::size_t>(i) * d;
      const double dlt = phib[i] - (g ? g(x) : 0.0);
      eb += dlt * dlt;
    }
    value += lambda * eb / nb;
  }
  return value;
}

SampleSet DrmObjective::mean_weighted(SampleSet s) {
  s.interior_weight = 1.0 / std::max(1, s.n_interior());
  s.boundary_weight = 1.0 / std::max(1, s.n_boundary());
  return s;
}

DrmObjective::DrmObjective(EnergySpec spec, NetworkSpec net_spec, SampleSet samples)
    : inner_(std::move(spec), DissipationSpec{}, std::move(net_spec), mean_weighted(std::move(samples)),
             1.0, TimeScheme::ImplicitEuler) {}

void DrmObjective::set_samples(SampleSet samples) { inner_.set_samples(mean_weighted(std::move(samples))); }

double DrmObjective::value_and_grad(const Vec& theta, Vec* grad) const {
  return inner_.value_and_grad(theta, grad);  // no reference set: pure energy
}

// ---------------------------------------------------------------------------
// Lagrangian objective
// ---------------------------------------------------------------------------

LagrangianObjective::LagrangianObjective(EnergySpec spec, DissipationSpec eta, ICNNSpec map_spec,
                                         const ParticleEnsemble& ensemble, double tau)
    : spec_(std::move(spec)), eta_(eta), map_spec_(map_spec), ens_(ensemble), tau_(tau),
      kern_(map_spec) {
  spec_.validate();
  ens_.validate();
  if (tau_ <= 0.0) throw DomainViolation("time step must be positive");
  const int n = ens_.size();
  what_.assign(n, 0.0);
  ci_.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    what_[i] = n * ens_.weights[i];
    ci_[i] = eta_.at(ens_.rho[i]) / ens_.rho[i];
  }
}

void LagrangianObjective::map_and_dets(const Vec& theta, Vec& images, Vec& dets) const {
  const int n = ens_.size();
  const int d = ens_.d;
  IcnnKernel& kern = const_cast<IcnnKernel&>(kern_);
  kern.bind(theta.data());
  images.resize(static_cast<std::size_t>(n) * d);
  Vec hess(static_cast<std::size_t>(n) * d * d);
  kern.eval_all(ens_.positions.data(), n, nullptr, images.data(), hess.data());
  dets.assign(n, 0.0);
  for (int i = 0; i < n; ++i)
    dets[i] = det_small(hess.data() + static_cast<std::size_t>(i) * d * d, d);
}

double LagrangianObjective::assemble(const Vec* theta, Vec* grad, const Vec* images_in,
                                     const Vec* dets_in) const {
  const int n = ens_.size();
  const int d = ens_.d;
  const double inf = std::numeric_limits<double>::infinity();

  Vec images, hess, dets;
  const Vec* imgp = images_in;
  const Vec* detp = dets_in;
  IcnnKernel& kern = const_cast<IcnnKernel&>(kern_);
  if (theta) {
    kern.bind(theta->data());
    images.resize(static_cast<std::size_t>(n) * d);
    hess.resize(static_cast<std::size_t>(n) * d * d);
    kern.eval_all(ens_.positions.data(), n, nullptr, images.data(), hess.data());
    dets.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
      // positive definite Jacobian required (diffeomorphic candidate)
      try {
        dets[i] = std::exp(logdet_spd(hess.data() + static_cast<std::size_t>(i) * d * d, d));
      } catch (const PositiveDefiniteViolation&) {
        return inf;
      }
      if (!(dets[i] > 0.0) || !std::isfinite(dets[i])) return inf;
    }
    imgp = &images;
    detp = &dets;
  }

  const Vec& Psi = *imgp;
  const Vec& D = *detp;
  double value = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* x = ens_.positions.data() + static_cast<std::size_t>(i) * d;
    const double* y = Psi.data() + static_cast<std::size_t>(i) * d;
    double move2 = 0.0;
    for (int j = 0; j < d; ++j) move2 += (y[j] - x[j]) * (y[j] - x[j]);
    double loc = ci_[i] * what_[i] * move2 / (2.0 * tau_ * n);
    const double rho_new = ens_.rho[i] / D[i];
    if (spec_.omega != EnergySpec::Omega::None) loc += what_[i] * f_omega(spec_, rho_new) / n;
    if (spec_.potential) loc += what_[i] * spec_.potential(y) / n;
    value += loc;
  }
  if (spec_.kernel) value += kernel_energy(spec_.kernel, Psi, d, &what_);
  if (!std::isfinite(value)) return inf;
  if (!grad) return value;

  // upstream adjoints per particle, then chunked reverse through the map
  grad->assign(kern_.n_params(), 0.0);
  Vec Psibar(static_cast<std::size_t>(n) * d, 0.0);
  Vec Mbar(static_cast<std::size_t>(n) * d * d, 0.0);
  Vec vg(d);
  for (int i = 0; i < n; ++i) {
    const double* x = ens_.positions.data() + static_cast<std::size_t>(i) * d;
    const double* y = Psi.data() + static_cast<std::size_t>(i) * d;
    double* pb = Psibar.data() + static_cast<std::size_t>(i) * d;
    const double cmove = ci_[i] * what_[i] / (tau_ * n);
    for (int j = 0; j < d; ++j) pb[j] += cmove * (y[j] - x[j]);
    if (spec_.potential) {
      if (!spec_.potential_grad) throw DomainViolation("potential gradient missing");
      spec_.potential_grad(y, vg.data());
      for (int j = 0; j < d; ++j) pb[j] += what_[i] * vg[j] / n;
    }
    if (spec_.omega != EnergySpec::Omega::None) {
      // d/dD f_omega(rho/D) = -kappa f'*, with the inverse Jacobian as dD/dM
      const double rho_new = ens_.rho[i] / D[i];
      double kappa;
      if (spec_.omega == EnergySpec::Omega::Entropy)
        kappa = 1.0;
      else
        kappa = (spec_.power_alpha - 2.0) * f_omega(spec_, rho_new);
      // Minv via the Hessian copy (recomputed; d <= 4)
      const double* M = hess.empty()
                            ? nullptr
                            : hess.data() + static_cast<std::size_t>(i) * d * d;
      if (!M) throw DomainViolation("gradient path requires map Hessians");
      double id_col[4], inv_col[4];
      const double coef = -what_[i] * kappa / n;
      for (int c = 0; c < d; ++c) {
        for (int r = 0; r < d; ++r) id_col[r] = r == c ? 1.0 : 0.0;
        spd_solve_small(M, id_col, inv_col, d);
        for (int r = 0; r < d; ++r) Mbar[static_cast<std::size_t>(i) * d * d + r * d + c] = coef * inv_col[r];
      }
    }
  }
  if (spec_.kernel) {
    if (!spec_.kernel_grad) throw DomainViolation("kernel gradient missing");
    Vec kg(d);
    for (int i = 0; i < n; ++i) {
      double* pb = Psibar.data() + static_cast<std::size_t>(i) * d;
      const double* yi = Psi.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < n; ++j) {
        const double* yj = Psi.data() + static_cast<std::size_t>(j) * d;
        spec_.kernel_grad(yi, yj, kg.data());
        const double cfac = what_[i] * what_[j] / (static_cast<double>(n) * n);
        for (int k = 0; k < d; ++k) pb[k] += cfac * kg[k];
      }
    }
  }

  const int nc = n_chunks(n);
  std::vector<Vec> slots(nc, Vec(kern_.n_params(), 0.0));
#pragma omp parallel
  {
    auto& wk = kern.pooled_work();
#pragma omp for schedule(static)
    for (int c = 0; c < nc; ++c) {
      const int i0 = c * kChunk;
      const int len = std::min(kChunk, n - i0);
      kern.forward(wk, ens_.positions.data() + static_cast<std::size_t>(i0) * d, len);
      kern.backward(wk, nullptr, Psibar.data() + static_cast<std::size_t>(i0) * d,
                    Mbar.data() + static_cast<std::size_t>(i0) * d * d, slots[c].data());
    }
  }
  for (const auto& s : slots)
    for (std::size_t i = 0; i < s.size(); ++i) (*grad)[i] += s[i];
  return value;
}

double LagrangianObjective::value_and_grad(const Vec& theta, Vec* grad) const {
  return assemble(&theta, grad, nullptr, nullptr);
}

double LagrangianObjective::value_at_identity() const {
  Vec ones(ens_.size(), 1.0);
  return assemble(nullptr, nullptr, &ens_.positions, &ones);
}

double kernel_energy(const KernelFn& K, const Vec& positions, int d, const Vec* what) {
  const int n = static_cast<int>(positions.size()) / d;
  Vec row(n, 0.0);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const double* xi = positions.data() + static_cast<std::size_t>(i) * d;
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      const double* xj = positions.data() + static_cast<std::size_t>(j) * d;
      const double wij = what ? (*what)[i] * (*what)[j] : 1.0;
      s += wij * K(xi, xj);
    }
    row[i] = s;
  }
  double total = 0.0;
  for (double r : row) total += r;
  return total / (2.0 * static_cast<double>(n) * n);
}

// ---------------------------------------------------------------------------
// one-shot wrappers
// ---------------------------------------------------------------------------

double evnn_objective(const EnergySpec& spec, const Network& theta, const Network& theta_n,
                      double tau, const DissipationSpec& eta, const SampleSet& samples) {
  EulerianObjective obj(spec, eta, theta.spec, samples, tau, TimeScheme::ImplicitEuler);
  obj.set_reference(theta_n.params.values);
  return obj.value_and_grad(theta.params.values, nullptr);
}

double evnn_objective_bdf2(const EnergySpec& spec, const Network& theta, const Network& theta_nm1,
                           const Network& theta_nm2, double tau, double eta_const,
                           const SampleSet& samples) {
  EulerianObjective obj(spec, DissipationSpec{DissipationSpec::Kind::Constant, eta_const},
                        theta.spec, samples, tau, TimeScheme::BDF2);
  obj.set_reference_bdf2(theta_nm1.params.values, theta_nm2.params.values);
  return obj.value_and_grad(theta.params.values, nullptr);
}

double evnn_objective_cn(const EnergySpec& spec, const Network& theta, const Network& theta_nm1,
                         double tau, double eta_const, const SampleSet& samples) {
  EulerianObjective obj(spec, DissipationSpec{DissipationSpec::Kind::Constant, eta_const},
                        theta.spec, samples, tau, TimeScheme::CrankNicolson);
  obj.set_reference(theta_nm1.params.values);
  return obj.value_and_grad(theta.params.values, nullptr);
}

double lagrangian_objective(const EnergySpec& spec, const Network& map, const ParticleEnsemble& ens,
                            double tau, const DissipationSpec& eta) {
  const auto* ic = std::get_if<ICNNSpec>(&map.spec);
  if (!ic) throw DomainViolation("lagrangian_objective fast path expects an ICNN map");
  LagrangianObjective obj(spec, eta, *ic, ens, tau);
  return obj.value_and_grad(map.params.values, nullptr);
}

}  // namespace evnn
