#pragma once

#include <optional>
#include <vector>

#include "evnn/energy.hpp"
#include "evnn/optimizer.hpp"

namespace evnn {

// Ordered per-step transport maps; the composed flow is
// Psi_n o ... o Psi_1 applied left to right in chain order.
struct FlowMapChain {
  std::vector<Network> maps;
  int size() const { return static_cast<int>(maps.size()); }
};

struct LagStepReport {
  double energy_before = 0.0;  // particle estimate at identity
  double energy_after = 0.0;
  double objective_opt = 0.0;
  int inner_iters = 0;
  StopReason stop = StopReason::MaxIters;
  bool accepted = false;
  double min_det = 1.0, max_det = 1.0;
  double wall_seconds = 0.0;
};

// Fresh ICNN pre-trained so its gradient map is close to the identity on a
// Gaussian reference sample (fit of values and gradients of |x|^2/2).
Network init_identity_map(const ICNNSpec& spec, std::uint64_t seed, const OptimizerConfig& cfg,
                          double sample_scale = 1.5, int n_reference = 4096,
                          double target_rmse = 1e-3);

// x_i <- Psi(x_i), rho_i <- rho_i / det(grad Psi(x_i)); weights untouched.
void pushforward_density(ParticleEnsemble& ens, const Network& map);

// Solve grad f(y) = x by damped Newton on the strictly convex potential.
Vec invert_map(const Network& icnn, std::span<const double> x, double tol = 1e-8,
               int max_iters = 100);

// Batched inversion; Y holds the solutions (row-major n x d).
void invert_map_batch(const Network& icnn, const Vec& X, int n, Vec& Y, double tol = 1e-8,
                      int max_iters = 100);

// rho0( (Phi^n)^{-1}(x) ) / prod_k det grad Psi_k along the forward orbit.
double density_at(const FlowMapChain& chain, const SpaceFn& rho0, std::span<const double> x);
// Batched over query points (row-major n x d).
Vec density_at_batch(const FlowMapChain& chain, const SpaceFn& rho0, const Vec& X, int n);

class LagrangianSolver {
 public:
  LagrangianSolver(EnergySpec spec, DissipationSpec eta, ICNNSpec map_spec,
                   ParticleEnsemble initial, double tau, OptimizerConfig inner,
                   std::uint64_t seed);

  LagStepReport step();

  const ParticleEnsemble& ensemble() const { return ens_; }
  const FlowMapChain& chain() const { return chain_; }
  int step_index() const { return n_; }
  double time() const { return n_ * tau_; }
  double current_energy_estimate() const;

  // round-trip inversion residual on a particle subset (invariant check)
  double max_roundtrip_error(const Network& map, int n_probe = 16) const;

 private:
  EnergySpec spec_;
  DissipationSpec eta_;
  ICNNSpec map_spec_;
  ParticleEnsemble ens_;
  double tau_;
  OptimizerConfig inner_;
  Network identity_start_;
  FlowMapChain chain_;
  int n_ = 0;
};

}  // namespace evnn
