#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "evnn/kernels.hpp"
#include "evnn/network.hpp"
#include "evnn/sampling.hpp"

namespace evnn {

using SpaceFn = std::function<double(const double*)>;
using SpaceGradFn = std::function<void(const double*, double*)>;
using KernelFn = std::function<double(const double*, const double*)>;
using KernelGradFn = std::function<void(const double*, const double*, double*)>;  // grad in 1st arg

// Declarative free energy.  Eulerian terms act on a scalar field u(x);
// Lagrangian terms (omega / potential / kernel) act on a transported density.
struct EnergySpec {
  // Eulerian terms
  bool dirichlet = false;            // 1/2 int |grad u|^2
  SpaceFn source;                    // - int f u
  double boundary_lambda = 0.0;      // lambda int_bdry (u - g)^2
  SpaceFn boundary_target;           // g (null = 0)
  double meanzero_lambda = 0.0;      // lambda (int u)^2
  double gl_inv_eps2 = 0.0;          // int 1/(4 eps^2) (u^2-1)^2, stores 1/eps^2
  double vol_penalty_W = 0.0;        // W (int u - A)^2
  double vol_penalty_A = 0.0;

  // Lagrangian terms
  enum class Omega { None, Entropy, Power } omega = Omega::None;
  double power_alpha = 0.0;  // Power: alpha/((alpha-1)(alpha-2)) rho^(alpha-1), alpha > 2
  SpaceFn potential;         // V
  SpaceGradFn potential_grad;
  KernelFn kernel;  // symmetric K(x,y)
  KernelGradFn kernel_grad;

  void validate() const;
};

struct DissipationSpec {
  enum class Kind { Constant, Rho } kind = Kind::Constant;
  double c = 1.0;
  double at(double rho_or_phi) const { return kind == Kind::Constant ? c : rho_or_phi; }
};

enum class TimeScheme { ImplicitEuler, BDF2, CrankNicolson };

// f_omega(rho) = omega(rho)/rho and its derivative factor in D, used by the
// particle objective.
double omega_density(const EnergySpec& spec, double rho);     // omega(rho)
double f_omega(const EnergySpec& spec, double rho);           // omega(rho)/rho

// ---------------------------------------------------------------------------
// Field evaluation: a network through the fused kernel, or an analytic field.
// ---------------------------------------------------------------------------

class FieldEval {
 public:
  virtual ~FieldEval() = default;
  virtual int dim() const = 0;
  // any of phi/grad/lap may be null; X row-major n x d
  virtual void eval(const double* X, int n, double* phi, double* grad, double* lap) const = 0;
};

class NetworkField final : public FieldEval {
 public:
  NetworkField(const Network& net, bool with_lap);
  int dim() const override { return kern_.dim(); }
  void eval(const double* X, int n, double* phi, double* grad, double* lap) const override;

 private:
  Vec theta_;
  ScalarNetKernel kern_;
};

class AnalyticField final : public FieldEval {
 public:
  AnalyticField(int d, SpaceFn value, SpaceGradFn grad = nullptr, SpaceFn lap = nullptr);
  int dim() const override { return d_; }
  void eval(const double* X, int n, double* phi, double* grad, double* lap) const override;

 private:
  int d_;
  SpaceFn value_, lap_;
  SpaceGradFn grad_;
};

// Quadrature estimate of the free energy of a field over a sample set.
double free_energy(const EnergySpec& spec, const FieldEval& field, const SampleSet& samples);
double free_energy(const EnergySpec& spec, const Network& net, const SampleSet& samples);

// ---------------------------------------------------------------------------
// Eulerian objective: movement term + free energy, with parameter gradients
// through the fused kernels.  OpenMP over chunks, chunk-ordered reductions.
// ---------------------------------------------------------------------------

class EulerianObjective {
 public:
  EulerianObjective(EnergySpec spec, DissipationSpec eta, NetworkSpec net_spec, SampleSet samples,
                    double tau, TimeScheme scheme = TimeScheme::ImplicitEuler);

  void set_samples(SampleSet samples);

  // Implicit Euler: reference state phi^n (also used as the CN reference).
  void set_reference(const Vec& theta_n);
  // BDF2 with two history states.
  void set_reference_bdf2(const Vec& theta_nm1, const Vec& theta_nm2);

  // Full objective; grad resized/filled when non-null.
  double value_and_grad(const Vec& theta, Vec* grad) const;
  // Free energy alone (no movement / CN terms), same quadrature and order.
  double free_energy_of(const Vec& theta) const;

  double tau() const { return tau_; }
  TimeScheme scheme() const { return scheme_; }
  const SampleSet& samples() const { return samples_; }
  int n_params() const { return kern_.n_params(); }

 private:
  EnergySpec spec_;
  DissipationSpec eta_;
  NetworkSpec net_spec_;
  SampleSet samples_;
  double tau_;
  TimeScheme scheme_;
  ScalarNetKernel kern_;

  Vec f_interior_;  // source values at interior points
  Vec g_boundary_;  // boundary targets
  Vec phi_a_, eta_a_;  // phi^{n} (or phi^{n-1}) and eta at it
  Vec phi_b_;          // BDF2 second history state
  Vec cn_grad_;        // grad F at the CN reference
  Vec cn_theta_;
  bool have_ref_ = false;
};

// Strong-form (PINN) and mean-form variational (DRM) baseline losses.
class PinnObjective {
 public:
  // residual of -lap(u) = f with Dirichlet data g
  PinnObjective(SpaceFn f, SpaceFn g, double lambda, NetworkSpec net_spec, SampleSet samples);
  void set_samples(SampleSet samples);
  double value_and_grad(const Vec& theta, Vec* grad) const;
  int n_params() const { return kern_.n_params(); }

 private:
  SpaceFn f_, g_;
  double lambda_;
  NetworkSpec net_spec_;
  SampleSet samples_;
  ScalarNetKernel kern_;
  Vec f_interior_, g_boundary_;
};

double pinn_loss(const SpaceFn& f, const SpaceFn& g, double lambda, const Network& net,
                 const SampleSet& samples);
double pinn_loss(const SpaceFn& f, const SpaceFn& g, double lambda, const FieldEval& field,
                 const SampleSet& samples);

// DRM: mean-form energy loss (1/N) sum W(u, grad u) + (lambda/Nb) sum (u-g)^2.
class DrmObjective {
 public:
  DrmObjective(EnergySpec spec, NetworkSpec net_spec, SampleSet samples);
  void set_samples(SampleSet samples);
  double value_and_grad(const Vec& theta, Vec* grad) const;
  int n_params() const { return inner_.n_params(); }

 private:
  EulerianObjective inner_;  // with mean-form weights baked into the sample set
  static SampleSet mean_weighted(SampleSet s);
};

// ---------------------------------------------------------------------------
// Lagrangian (particle) objective for transport maps.
// ---------------------------------------------------------------------------

struct LagrangianEval {
  double value = 0.0;
  bool admissible = true;  // false when some det(grad Psi) <= 0
};

class LagrangianObjective {
 public:
  LagrangianObjective(EnergySpec spec, DissipationSpec eta, ICNNSpec map_spec,
                      const ParticleEnsemble& ensemble, double tau);

  // Objective J(Psi); +inf when the map candidate is not admissible.
  double value_and_grad(const Vec& theta, Vec* grad) const;

  // Exact value at the identity map (movement 0, det = 1): the current
  // particle free-energy estimate, summed in the same order as the general
  // path.
  double value_at_identity() const;

  // Map images and Jacobian determinants at the particles.
  void map_and_dets(const Vec& theta, Vec& images, Vec& dets) const;

  int n_params() const { return kern_.n_params(); }
  const IcnnKernel& kernel() const { return kern_; }

 private:
  double assemble(const Vec* theta, Vec* grad, const Vec* images, const Vec* dets) const;

  EnergySpec spec_;
  DissipationSpec eta_;
  ICNNSpec map_spec_;
  const ParticleEnsemble& ens_;
  double tau_;
  IcnnKernel kern_;
  Vec what_;  // N * weight_i (importance factors)
  Vec ci_;    // eta(rho_i)/rho_i
};

// O(N^2) symmetric interaction sum: 1/(2 N^2) sum_ij w_i w_j K(x_i, x_j).
double kernel_energy(const KernelFn& K, const Vec& positions, int d, const Vec* what = nullptr);

// One-shot forms of the per-step objectives (tests and small callers).
double evnn_objective(const EnergySpec& spec, const Network& theta, const Network& theta_n,
                      double tau, const DissipationSpec& eta, const SampleSet& samples);
double evnn_objective_bdf2(const EnergySpec& spec, const Network& theta, const Network& theta_nm1,
                           const Network& theta_nm2, double tau, double eta_const,
                           const SampleSet& samples);
double evnn_objective_cn(const EnergySpec& spec, const Network& theta, const Network& theta_nm1,
                         double tau, double eta_const, const SampleSet& samples);
double lagrangian_objective(const EnergySpec& spec, const Network& map, const ParticleEnsemble& ens,
                            double tau, const DissipationSpec& eta);

}  // namespace evnn
