#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evnn/energy.hpp"
#include "evnn/network.hpp"
#include "evnn/optimizer.hpp"

namespace evnn {

// Experiment description; named presets fill every field with the benchmark
// defaults, JSON documents override them.
struct ExperimentConfig {
  int schema_version = 1;
  std::string experiment;  // poisson2d_case1 | poisson2d_case2 | poisson_hidim | heat2d |
                           // allen_cahn | fokker_planck_2d | fokker_planck_4d |
                           // mixture_sampling | pme_barenblatt | baseline_pinn | baseline_drm
  std::uint64_t seed = 1234;
  int workers = 0;  // 0 = hardware default
  std::string out_dir;

  double tau = 0.01;
  int n_steps = 0;
  std::string scheme = "implicit_euler";  // implicit_euler | bdf2 | crank_nicolson
  bool resample = false;
  int dim = 2;

  // scalar-field network (Eulerian runs)
  int net_blocks = 1;
  int net_layers_per_block = 1;
  int net_width = 20;
  std::string net_activation = "tanh";

  // transport map (Lagrangian runs)
  std::string map_kind = "icnn";  // icnn | planar
  int map_layers = 6;
  int map_width = 32;
  double map_beta = 0.1;
  std::string map_activation = "gauss_softplus";

  // sampling
  int n_interior = 2500;        // LHS draws per set
  int grid_res = 0;             // fixed training grid (when > 0)
  int boundary_per_edge = 50;
  int n_particles = 10000;
  int test_grid_res = 101;
  int n_test_samples = 40000;   // LHS test set (high-dimensional runs)

  // inner optimization
  std::string opt_kind = "lbfgs";
  int inner_max_iters = 100;
  double inner_grad_tol = 1e-9;
  double inner_param_tol = 1e-6;
  double adam_lr = 1e-3;
  int outer_iters = 200;  // high-dimensional protocol

  // energy terms
  double lambda_boundary = 500.0;
  double lambda_meanzero = 0.0;
  double gl_inv_eps2 = 0.0;
  double vol_penalty_W = 0.0;
  double vol_penalty_A = 0.0;
  std::string omega = "none";  // none | entropy | power
  double power_alpha = 4.0;
  std::string eta = "constant";  // constant | rho
  double eta_c = 1.0;

  // metrics
  bool density_grid_metrics = false;
  int density_grid_res = 301;
  double density_box_halfwidth = 3.0;

  std::vector<double> snapshot_times;

  // baseline comparison
  int trials = 10;
  double time_budget_seconds = 20.0;

  // porous medium
  double pme_alpha = 4.0;
  double pme_C0 = 0.1;
  double pme_t0 = 0.1;
  int pme_marker_count = 500;
  int pme_grid_res = 71;
};

// Presets matching the benchmark protocols.
ExperimentConfig make_preset(const std::string& experiment);

// All findings at once; empty means the configuration is runnable.
std::vector<std::string> validate_config(const ExperimentConfig& cfg);

std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

NetworkSpec scalar_net_spec(const ExperimentConfig& cfg);
ICNNSpec map_spec(const ExperimentConfig& cfg);
OptimizerConfig inner_optimizer(const ExperimentConfig& cfg);
TimeScheme scheme_from_string(const std::string& s);

}  // namespace evnn
