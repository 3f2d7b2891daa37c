#include "evnn/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace evnn {

using nlohmann::json;

TimeScheme scheme_from_string(const std::string& s) {
  if (s == "implicit_euler") return TimeScheme::ImplicitEuler;
  if (s == "bdf2") return TimeScheme::BDF2;
  if (s == "crank_nicolson") return TimeScheme::CrankNicolson;
  throw DomainViolation("unknown time scheme: " + s);
}

ExperimentConfig make_preset(const std::string& experiment) {
  ExperimentConfig c;
  c.experiment = experiment;
  c.out_dir = "runs/" + experiment;
  if (experiment == "poisson2d_case1" || experiment == "poisson2d_case2") {
    c.tau = 0.05;
    c.n_steps = 100;
    c.resample = true;
    c.net_width = 20;
    c.n_interior = 2500;
    c.boundary_per_edge = experiment == "poisson2d_case1" ? 50 : 200;
    c.test_grid_res = experiment == "poisson2d_case1" ? 101 : 201;
    c.opt_kind = "lbfgs";
    c.inner_max_iters = 50;
    c.lambda_boundary = 500.0;
  } else if (experiment == "poisson_hidim") {
    c.dim = 4;
    c.tau = 0.01;
    c.n_steps = 200;  // outer iterations
    c.resample = true;
    c.net_blocks = 3;
    c.net_layers_per_block = 2;
    c.net_width = 60;
    c.n_interior = 10000;
    c.boundary_per_edge = 0;
    c.opt_kind = "adam";
    c.inner_max_iters = 200;
    c.inner_param_tol = 1e-6;
    c.adam_lr = 1e-3;
    c.lambda_boundary = 0.0;
    c.lambda_meanzero = 0.5;
    c.n_test_samples = 40000;
  } else if (experiment == "heat2d") {
    c.tau = 0.01;
    c.n_steps = 60;
    c.net_width = 20;
    c.grid_res = 301;
    c.boundary_per_edge = 1000;
    c.opt_kind = "lbfgs";
    c.inner_max_iters = 100;
    c.lambda_boundary = 500.0;
    c.snapshot_times = {0.01, 0.2, 0.4, 0.6};
    c.test_grid_res = 101;
  } else if (experiment == "allen_cahn") {
    c.tau = 0.005;
    c.n_steps = 60;
    c.net_blocks = 1;
    c.net_layers_per_block = 2;
    c.net_width = 20;
    c.grid_res = 301;
    c.boundary_per_edge = 1000;
    c.opt_kind = "lbfgs";
    c.inner_max_iters = 100;
    c.lambda_boundary = 500.0;
    c.gl_inv_eps2 = 100.0;
    c.vol_penalty_W = 1000.0;
    c.vol_penalty_A = -(4.0 - M_PI * 0.25) + M_PI * 0.25;
    c.snapshot_times = {0.0, 0.05, 0.1, 0.3};
  } else if (experiment == "fokker_planck_2d" || experiment == "fokker_planck_4d") {
    c.dim = experiment == "fokker_planck_2d" ? 2 : 4;
    c.tau = 0.01;
    c.n_steps = 100;
    c.n_particles = 10000;
    c.map_layers = 6;
    c.map_width = 32;
    c.opt_kind = "lbfgs";
    c.inner_max_iters = 50;
    c.inner_param_tol = 1e-6;
    c.omega = "entropy";
    c.eta = "rho";
    c.snapshot_times = {0.0, 0.1, 0.5, 1.0};
    c.density_grid_metrics = c.dim == 2;
    c.density_grid_res = 301;
    c.density_box_halfwidth = 3.0;
  } else if (experiment == "mixture_sampling") {
    c.dim = 2;
    c.tau = 0.05;
    c.n_steps = 60;
    c.n_particles = 10000;
    c.map_layers = 6;
    c.map_width = 32;
    c.opt_kind = "lbfgs";
    c.inner_max_iters = 50;
    c.inner_param_tol = 1e-6;
    c.omega = "entropy";
    c.eta = "rho";
    c.snapshot_times = {0.0, 0.5, 1.5, 3.0};
  } else if (experiment == "pme_barenblatt") {
    c.dim = 2;
    c.tau = 0.005;
    c.n_steps = 100;
    c.map_layers = 6;
    c.map_width = 32;
    c.opt_kind = "lbfgs";
    c.inner_max_iters = 50;
    c.inner_param_tol = 1e-6;
    c.omega = "power";
    c.power_alpha = 4.0;
    c.eta = "constant";
    c.eta_c = 1.0;
    c.snapshot_times = {0.0, 0.05, 0.25, 0.5};
    c.pme_alpha = 4.0;
    c.pme_C0 = 0.1;
    c.pme_t0 = 0.1;
  } else if (experiment == "baseline_pinn" || experiment == "baseline_drm") {
    c.tau = 0.0;  // no time stepping
    c.n_steps = 2000;  // optimizer iterations
    c.resample = true;
    c.net_width = 20;
    c.n_interior = 2500;
    c.boundary_per_edge = 50;
    c.opt_kind = "adam";
    c.lambda_boundary = 500.0;
    c.test_grid_res = 101;
  } else {
    throw DomainViolation("unknown experiment: " + experiment);
  }
  return c;
}

std::vector<std::string> validate_config(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  const bool timeless = cfg.experiment == "baseline_pinn" || cfg.experiment == "baseline_drm";
  if (cfg.tau <= 0.0 && !timeless) out.push_back("tau must be positive");
  if (cfg.n_steps < 0) out.push_back("n_steps must be nonnegative");
  if (cfg.scheme != "implicit_euler" && cfg.scheme != "bdf2" && cfg.scheme != "crank_nicolson")
    out.push_back("unknown scheme: " + cfg.scheme);
  if (cfg.scheme == "bdf2" && cfg.n_steps < 2) out.push_back("bdf2 needs at least 2 steps");
  if (cfg.net_width <= 0 || cfg.net_blocks <= 0 || cfg.net_layers_per_block <= 0)
    out.push_back("network sizes must be positive");
  if (cfg.inner_max_iters <= 0) out.push_back("inner_max_iters must be positive");
  if (cfg.opt_kind != "lbfgs" && cfg.opt_kind != "adam" && cfg.opt_kind != "gd-bb")
    out.push_back("unknown optimizer: " + cfg.opt_kind);
  if (cfg.map_kind != "icnn" && cfg.map_kind != "planar")
    out.push_back("unknown map kind: " + cfg.map_kind);
  if (cfg.density_grid_metrics && cfg.map_kind != "icnn")
    out.push_back("density evaluation by map inversion requires a convex-potential (icnn) map");
  if (cfg.experiment == "pme_barenblatt") {
    if (cfg.eta != "constant" || cfg.eta_c != 1.0)
      out.push_back("porous-medium runs require a unit constant dissipation rate");
    if (cfg.omega != "power") out.push_back("porous-medium runs require the power internal energy");
    if (!(cfg.power_alpha > 2.0)) out.push_back("power internal energy needs alpha > 2");
  }
  if (cfg.omega == "power" && !(cfg.power_alpha > 2.0))
    out.push_back("power internal energy needs alpha > 2");
  if (cfg.experiment == "poisson_hidim" && cfg.dim < 1) out.push_back("dim must be positive");
  if (cfg.n_particles <= 0 &&
      (cfg.experiment.rfind("fokker", 0) == 0 || cfg.experiment == "mixture_sampling"))
    out.push_back("particle count must be positive");
  return out;
}

#define CFG_FIELDS(X)                                                                         \
  X(schema_version) X(experiment) X(seed) X(workers) X(out_dir) X(tau) X(n_steps) X(scheme)  \
  X(resample) X(dim) X(net_blocks) X(net_layers_per_block) X(net_width) X(net_activation)    \
  X(map_kind) X(map_layers) X(map_width) X(map_beta) X(map_activation) X(n_interior)         \
  X(grid_res) X(boundary_per_edge) X(n_particles) X(test_grid_res) X(n_test_samples)         \
  X(opt_kind) X(inner_max_iters) X(inner_grad_tol) X(inner_param_tol) X(adam_lr)             \
  X(outer_iters) X(lambda_boundary) X(lambda_meanzero) X(gl_inv_eps2) X(vol_penalty_W)       \
  X(vol_penalty_A) X(omega) X(power_alpha) X(eta) X(eta_c) X(density_grid_metrics)           \
  X(density_grid_res) X(density_box_halfwidth) X(snapshot_times) X(trials)                   \
  X(time_budget_seconds) X(pme_alpha) X(pme_C0) X(pme_t0) X(pme_marker_count) X(pme_grid_res)

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
#define X(name) j[#name] = cfg.name;
  CFG_FIELDS(X)
#undef X
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig cfg =
      j.contains("experiment") ? make_preset(j.at("experiment").get<std::string>()) : ExperimentConfig{};
#define X(name) if (j.contains(#name)) j.at(#name).get_to(cfg.name);
  CFG_FIELDS(X)
#undef X
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str());
}

NetworkSpec scalar_net_spec(const ExperimentConfig& cfg) {
  ResNetSpec spec;
  spec.input_dim = cfg.dim;
  spec.blocks = cfg.net_blocks;
  spec.layers_per_block = cfg.net_layers_per_block;
  spec.width = cfg.net_width;
  spec.inner_width = cfg.net_width;
  spec.act = activation_from_string(cfg.net_activation);
  return spec;
}

ICNNSpec map_spec(const ExperimentConfig& cfg) {
  ICNNSpec spec;
  spec.input_dim = cfg.dim;
  spec.layers = cfg.map_layers;
  spec.width = cfg.map_width;
  spec.act = activation_from_string(cfg.map_activation);
  spec.beta = cfg.map_beta;
  return spec;
}

OptimizerConfig inner_optimizer(const ExperimentConfig& cfg) {
  OptimizerConfig opt;
  opt.kind = opt_kind_from_string(cfg.opt_kind);
  opt.max_iters = cfg.inner_max_iters;
  opt.grad_tol = cfg.inner_grad_tol;
  opt.param_change_tol = cfg.inner_param_tol;
  opt.lr = cfg.adam_lr;
  return opt;
}

}  // namespace evnn
