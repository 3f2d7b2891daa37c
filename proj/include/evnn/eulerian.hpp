#pragma once

#include <functional>
#include <optional>

#include "evnn/energy.hpp"
#include "evnn/optimizer.hpp"

namespace evnn {

struct StepReport {
  double energy_before = 0.0;
  double energy_after = 0.0;
  double objective_opt = 0.0;
  int inner_iters = 0;
  StopReason stop = StopReason::MaxIters;
  bool accepted = false;
  double wall_seconds = 0.0;
};

struct TraceRow {
  int step = 0;
  double time = 0.0;
  double free_energy = 0.0;
  double objective = 0.0;
  int inner_iters = 0;
  bool accepted = false;
  double monitor_energy = 0.0;  // held-out grid (resampled runs); 0 if unused
};

// Least-squares fit of a scalar network to a target function on a sample set.
// Returns the fitted network and writes the final RMSE.
Network fit_initial(Network net, const SpaceFn& target, const SampleSet& samples,
                    const OptimizerConfig& cfg, double* rmse_out = nullptr);
double fit_rmse(const Network& net, const SpaceFn& target, const SampleSet& samples);

// Minimizing-movement time stepper for scalar fields.
class EulerianSolver {
 public:
  EulerianSolver(EnergySpec spec, DissipationSpec eta, Network init, SampleSet samples, double tau,
                 TimeScheme scheme, OptimizerConfig inner);

  // Fresh sample set per step (stochastic runs).  When set, steps are never
  // rejected and energy monotonicity is only reported on the monitor set.
  void set_resampler(std::function<SampleSet(int step)> sampler);
  void set_monitor_samples(SampleSet monitor);

  StepReport step();

  const Network& net() const { return net_; }
  int step_index() const { return n_; }
  double time() const { return n_ * tau_; }
  double tau() const { return tau_; }
  const std::vector<TraceRow>& trace() const { return trace_; }
  double current_energy();

 private:
  EnergySpec spec_;
  DissipationSpec eta_;
  Network net_;
  Network net_prev_;  // BDF2 history
  double tau_;
  TimeScheme scheme_;
  OptimizerConfig inner_;
  EulerianObjective obj_;
  std::function<SampleSet(int)> resampler_;
  std::optional<EulerianObjective> monitor_;
  int n_ = 0;
  std::vector<TraceRow> trace_;
};

}  // namespace evnn
