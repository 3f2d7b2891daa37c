#include "evnn/runner.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "evnn/oracles.hpp"

namespace evnn {

namespace {

namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

// accumulating stopwatch; metric evaluation and file I/O run while paused
class StopWatch {
 public:
  void start() { t0_ = clock_type::now(); }
  void stop() { total_ += std::chrono::duration<double>(clock_type::now() - t0_).count(); }
  double seconds() const { return total_; }

 private:
  clock_type::time_point t0_;
  double total_ = 0.0;
};

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream f(path);
  f.precision(17);
  f << "step,time,free_energy,objective,inner_iters,accepted,monitor_energy\n";
  for (const auto& r : trace)
    f << r.step << ',' << r.time << ',' << r.free_energy << ',' << r.objective << ','
      << r.inner_iters << ',' << (r.accepted ? 1 : 0) << ',' << r.monitor_energy << "\n";
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream f(path);
  f.precision(17);
  f << "time,l2,relative_l2,oracle\n";
  for (const auto& r : rows)
    f << r.time << ',' << r.l2 << ',' << r.relative_l2 << ',' << r.oracle << "\n";
}

void write_field_csv(const std::string& path, const SampleSet& grid, const Vec& values) {
  std::ofstream f(path);
  f.precision(17);
  for (int j = 0; j < grid.d; ++j) f << "x" << (j + 1) << ',';
  f << "value\n";
  for (int i = 0; i < grid.n_interior(); ++i) {
    const double* p = grid.interior_point(i);
    for (int j = 0; j < grid.d; ++j) f << p[j] << ',';
    f << values[i] << "\n";
  }
}

void write_ensemble_csv(const std::string& path, const ParticleEnsemble& ens) {
  std::ofstream f(path);
  f.precision(17);
  for (int j = 0; j < ens.d; ++j) f << "x" << (j + 1) << ',';
  f << "rho,weight\n";
  for (int i = 0; i < ens.size(); ++i) {
    for (int j = 0; j < ens.d; ++j) f << ens.positions[static_cast<std::size_t>(i) * ens.d + j] << ',';
    f << ens.rho[i] << ',' << ens.weights[i] << "\n";
  }
}

Vec eval_field(const Network& net, const SampleSet& grid) {
  NetworkField f(net, false);
  Vec out(grid.n_interior());
  f.eval(grid.interior.data(), grid.n_interior(), out.data(), nullptr, nullptr);
  return out;
}

int snapshot_step(double t, double tau) { return static_cast<int>(std::lround(t / tau)); }

// ---------------------------------------------------------------------------
// Poisson equilibrium runs (cases 1 and 2) and the heat / Allen-Cahn flows
// ---------------------------------------------------------------------------

struct PoissonCase {
  DomainDescriptor box;
  SpaceFn f, exact;
  bool disk_filter = false;
};

PoissonCase poisson_case(int which) {
  if (which == 1)
    return {DomainDescriptor::box({0.0, -M_PI_2}, {M_PI, M_PI_2}), poisson_case1_f,
            poisson_case1_exact, false};
  return {DomainDescriptor::box({-1.0, -1.0}, {1.0, 1.0}), poisson_case2_f, poisson_case2_exact,
          true};
}

SampleSet poisson_samples(const PoissonCase& pc, const ExperimentConfig& cfg, std::uint64_t tag) {
  SampleSet s;
  if (pc.disk_filter) {
    s = filtered_box_samples(
        cfg.n_interior, pc.box,
        [](const double* p) { return p[0] * p[0] + p[1] * p[1] < 1.0; }, tag);
    double wb;
    auto disk = DomainDescriptor::disk({0.0, 0.0}, 1.0);
    s.boundary = boundary_samples(disk, cfg.boundary_per_edge, mix_seed(tag, 0xb),
                                  BoundaryMode::UniformRandom, wb);
    s.boundary_weight = wb;
  } else {
    s = latin_hypercube(cfg.n_interior, pc.box, tag);
    double wb;
    s.boundary = boundary_samples(pc.box, cfg.boundary_per_edge, mix_seed(tag, 0xb),
                                  BoundaryMode::UniformRandom, wb);
    s.boundary_weight = wb;
  }
  return s;
}

SampleSet poisson_test_grid(const PoissonCase& pc, int res) {
  auto grid = uniform_grid({res, res}, pc.box);
  if (!pc.disk_filter) return grid;
  SampleSet out;
  out.d = 2;
  for (int i = 0; i < grid.n_interior(); ++i) {
    const double* p = grid.interior_point(i);
    if (p[0] * p[0] + p[1] * p[1] < 1.0) out.interior.insert(out.interior.end(), p, p + 2);
  }
  out.interior_weight = grid.interior_weight;
  return out;
}

RunSummary run_poisson(const ExperimentConfig& cfg) {
  const PoissonCase pc = poisson_case(cfg.experiment == "poisson2d_case1" ? 1 : 2);
  RunSummary sum;
  sum.experiment = cfg.experiment;
  sum.out_dir = cfg.out_dir;

  EnergySpec spec;
  spec.dirichlet = true;
  spec.source = pc.f;
  spec.boundary_lambda = cfg.lambda_boundary;

  Network net = build_network(scalar_net_spec(cfg), cfg.seed);
  auto test_grid = poisson_test_grid(pc, cfg.test_grid_res);
  Vec ref(test_grid.n_interior());
  for (int i = 0; i < test_grid.n_interior(); ++i) ref[i] = pc.exact(test_grid.interior_point(i));

  StopWatch watch;
  watch.start();
  EulerianSolver solver(spec, DissipationSpec{}, net, poisson_samples(pc, cfg, cfg.seed), cfg.tau,
                        scheme_from_string(cfg.scheme), inner_optimizer(cfg));
  if (cfg.resample)
    solver.set_resampler([&pc, &cfg](int step) {
      return poisson_samples(pc, cfg, mix_seed(cfg.seed, 1000 + step));
    });
  for (int n = 0; n < cfg.n_steps; ++n) {
    auto rep = solver.step();
    if (!rep.accepted) ++sum.rejected_steps;
    watch.stop();
    auto pred = eval_field(solver.net(), test_grid);
    sum.metrics.push_back({solver.time(), l2_error(pred, ref), relative_l2_error(pred, ref),
                           cfg.experiment + "_exact"});
    watch.start();
  }
  watch.stop();
  sum.train_seconds = watch.seconds();
  sum.trace = solver.trace();
  sum.final_relative_l2 = sum.metrics.empty() ? 0.0 : sum.metrics.back().relative_l2;

  ensure_dir(cfg.out_dir);
  write_text(cfg.out_dir + "/config.json", config_to_json(cfg));
  write_trace_csv(cfg.out_dir + "/energy_trace.csv", sum.trace);
  write_metrics_csv(cfg.out_dir + "/metrics.csv", sum.metrics);
  save_network(solver.net(), cfg.out_dir + "/checkpoint_final.json");
  write_field_csv(cfg.out_dir + "/solution_final.csv", test_grid, eval_field(solver.net(), test_grid));
  return sum;
}

RunSummary run_heat(const ExperimentConfig& cfg) {
  RunSummary sum;
  sum.experiment = cfg.experiment;
  sum.out_dir = cfg.out_dir;
  ensure_dir(cfg.out_dir);

  auto box = DomainDescriptor::box({0.0, 0.0}, {2.0, 2.0});
  auto samples = uniform_grid({cfg.grid_res, cfg.grid_res}, box);
  double wb;
  samples.boundary =
      boundary_samples(box, cfg.boundary_per_edge, cfg.seed, BoundaryMode::Equispaced, wb);
  samples.boundary_weight = wb;

  EnergySpec spec;
  spec.dirichlet = true;
  spec.boundary_lambda = cfg.lambda_boundary;

  auto ic = [](const double* x) { return std::sin(M_PI_2 * x[0]) * std::sin(M_PI_2 * x[1]); };

  StopWatch watch;
  watch.start();
  Network net = build_network(scalar_net_spec(cfg), cfg.seed);
  OptimizerConfig fit_cfg = inner_optimizer(cfg);
  fit_cfg.kind = OptKind::LBFGS;
  fit_cfg.max_iters = 400;
  fit_cfg.param_change_tol = 1e-8;
  net = fit_initial(net, ic, samples, fit_cfg, &sum.fit_rmse);
  EulerianSolver solver(spec, DissipationSpec{}, net, samples, cfg.tau,
                        scheme_from_string(cfg.scheme), inner_optimizer(cfg));
  watch.stop();

  // oracles prepared up front
  std::vector<int> snap_steps;
  for (double t : cfg.snapshot_times) snap_steps.push_back(snapshot_step(t, cfg.tau));
  auto fdm = fdm_heat_solve(cfg.test_grid_res, 2.0, cfg.tau, cfg.n_steps, ic, snap_steps);
  const auto& tgrid = fdm.grid;

  save_network(solver.net(), cfg.out_dir + "/checkpoint_step0.json");
  double prev_energy = solver.current_energy();
  sum.energy_monotone = true;
  for (int n = 1; n <= cfg.n_steps; ++n) {
    watch.start();
    auto rep = solver.step();
    watch.stop();
    if (!rep.accepted) ++sum.rejected_steps;
    if (rep.accepted && rep.energy_after > prev_energy) sum.energy_monotone = false;
    if (rep.accepted) prev_energy = rep.energy_after;
    auto it = std::find(snap_steps.begin(), snap_steps.end(), n);
    if (it != snap_steps.end()) {
      const double t = n * cfg.tau;
      auto pred = eval_field(solver.net(), tgrid);
      Vec exact(tgrid.n_interior());
      for (int i = 0; i < tgrid.n_interior(); ++i) exact[i] = heat_exact(tgrid.interior_point(i), t);
      sum.metrics.push_back({t, l2_error(pred, exact), relative_l2_error(pred, exact), "heat_exact"});
      const std::size_t k = static_cast<std::size_t>(it - snap_steps.begin());
      if (k < fdm.fields.size()) {
        sum.metrics.push_back(
            {t, l2_error(pred, fdm.fields[k]), relative_l2_error(pred, fdm.fields[k]), "heat_fdm"});
      }
      char name[64];
      std::snprintf(name, sizeof(name), "/solution_t%.3f.csv", t);
      write_field_csv(cfg.out_dir + name, tgrid, pred);
      std::snprintf(name, sizeof(name), "/checkpoint_step%d.json", n);
      save_network(solver.net(), cfg.out_dir + name);
    }
  }
  sum.trace = solver.trace();
  sum.train_seconds = watch.seconds();
  for (const auto& r : sum.metrics)
    if (r.oracle == "heat_exact") sum.final_relative_l2 = r.relative_l2;

  write_text(cfg.out_dir + "/config.json", config_to_json(cfg));
  write_trace_csv(cfg.out_dir + "/energy_trace.csv", sum.trace);
  write_metrics_csv(cfg.out_dir + "/metrics.csv", sum.metrics);
  {
    std::ofstream f(cfg.out_dir + "/fdm_energy_trace.csv");
    f.precision(17);
    f << "step,energy\n";
    for (std::size_t s = 0; s < fdm.energy_trace.size(); ++s)
      f << (s + 1) << ',' << fdm.energy_trace[s] << "\n";
  }
  return sum;
}

RunSummary run_allen_cahn(const ExperimentConfig& cfg) {
  RunSummary sum;
  sum.experiment = cfg.experiment;
  sum.out_dir = cfg.out_dir;
  ensure_dir(cfg.out_dir);

  auto box = DomainDescriptor::box({-1.0, -1.0}, {1.0, 1.0});
  auto samples = uniform_grid({cfg.grid_res, cfg.grid_res}, box);
  double wb;
  samples.boundary =
      boundary_samples(box, cfg.boundary_per_edge, cfg.seed, BoundaryMode::Equispaced, wb);
  samples.boundary_weight = wb;

  EnergySpec spec;
  spec.dirichlet = true;
  spec.gl_inv_eps2 = cfg.gl_inv_eps2;
  spec.vol_penalty_W = cfg.vol_penalty_W;
  spec.vol_penalty_A = cfg.vol_penalty_A;
  spec.boundary_lambda = cfg.lambda_boundary;
  spec.boundary_target = [](const double*) { return -1.0; };

  auto ic = [](const double* x) {
    return -std::tanh(10.0 * (std::sqrt(4.0 * x[0] * x[0] + x[1] * x[1]) - 0.5));
  };

  StopWatch watch;
  watch.start();
  Network net = build_network(scalar_net_spec(cfg), cfg.seed);
  OptimizerConfig fit_cfg = inner_optimizer(cfg);
  fit_cfg.kind = OptKind::LBFGS;
  fit_cfg.max_iters = 800;
  fit_cfg.param_change_tol = 1e-8;
  net = fit_initial(net, ic, samples, fit_cfg, &sum.fit_rmse);
  EulerianSolver solver(spec, DissipationSpec{}, net, samples, cfg.tau,
                        scheme_from_string(cfg.scheme), inner_optimizer(cfg));
  watch.stop();

  std::vector<int> snap_steps;
  for (double t : cfg.snapshot_times) snap_steps.push_back(snapshot_step(t, cfg.tau));
  auto volume_of = [&samples](const Network& n) {
    Vec v = eval_field(n, samples);
    double s = 0.0;
    for (double x : v) s += x;
    return s * samples.interior_weight;
  };

  double prev_energy = solver.current_energy();
  for (int n = 0; n <= cfg.n_steps; ++n) {
    if (n > 0) {
      watch.start();
      auto rep = solver.step();
      watch.stop();
      if (!rep.accepted) ++sum.rejected_steps;
      if (rep.accepted && rep.energy_after > prev_energy) sum.energy_monotone = false;
      if (rep.accepted) prev_energy = rep.energy_after;
    }
    if (std::find(snap_steps.begin(), snap_steps.end(), n) != snap_steps.end()) {
      const double t = n * cfg.tau;
      const double vol = volume_of(solver.net());
      sum.volume_error = std::abs(vol - cfg.vol_penalty_A);
      sum.metrics.push_back({t, sum.volume_error, 0.0, "volume_constraint"});
      char name[64];
      std::snprintf(name, sizeof(name), "/solution_t%.3f.csv", t);
      write_field_csv(cfg.out_dir + name, samples, eval_field(solver.net(), samples));
      std::snprintf(name, sizeof(name), "/checkpoint_step%d.json", n);
      save_network(solver.net(), cfg.out_dir + name);
    }
  }
  sum.trace = solver.trace();
  sum.train_seconds = watch.seconds();
  write_text(cfg.out_dir + "/config.json", config_to_json(cfg));
  write_trace_csv(cfg.out_dir + "/energy_trace.csv", sum.trace);
  write_metrics_csv(cfg.out_dir + "/metrics.csv", sum.metrics);
  return sum;
}

RunSummary run_hidim(const ExperimentConfig& cfg) {
  RunSummary sum;
  sum.experiment = cfg.experiment;
  sum.out_dir = cfg.out_dir;
  ensure_dir(cfg.out_dir);
  const int d = cfg.dim;
  Vec lo(d, -1.0), hi(d, 1.0);
  auto box = DomainDescriptor::box(lo, hi);

  EnergySpec spec;
  spec.dirichlet = true;
  spec.source = [d](const double* x) { return hidim_poisson_f(x, d); };
  spec.meanzero_lambda = cfg.lambda_meanzero;

  auto nspec = scalar_net_spec(cfg);
  Network net = build_network(nspec, cfg.seed);
  EulerianObjective obj(spec, DissipationSpec{}, nspec, latin_hypercube(cfg.n_interior, box, cfg.seed),
                        cfg.tau, TimeScheme::ImplicitEuler);

  auto test = latin_hypercube(cfg.n_test_samples, box, mix_seed(cfg.seed, 0x7e57));
  Vec ref(test.n_interior());
  for (int i = 0; i < test.n_interior(); ++i) ref[i] = hidim_poisson_exact(test.interior_point(i), d);
  auto test_error = [&](const Vec& theta) {
    Network probe{nspec, make_layout(nspec)};
    probe.params.values = theta;
    auto pred = eval_field(probe, test);
    return relative_l2_error(pred, ref);
  };

  OptimizerConfig inner = inner_optimizer(cfg);
  StopWatch watch;
  Vec theta = net.params.values;
  long batch_counter = 0;
  for (int outer = 0; outer < cfg.n_steps; ++outer) {
    watch.start();
    const Vec theta_n = theta;
    auto objective = [&](const Vec& x, Vec* g) {
      // fresh sample set for every optimizer evaluation
      obj.set_samples(latin_hypercube(cfg.n_interior, box, mix_seed(cfg.seed, 77000 + batch_counter)));
      ++batch_counter;
      obj.set_reference(theta_n);
      return obj.value_and_grad(x, g);
    };
    auto res = minimize(objective, theta, inner);
    theta = std::move(res.x);
    watch.stop();
    TraceRow row;
    row.step = outer + 1;
    row.time = (outer + 1) * cfg.tau;
    row.objective = res.f;
    row.inner_iters = res.iters;
    row.accepted = true;
    sum.trace.push_back(row);
    // parameter-change early stop across outer iterations
    double dn = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double dd = theta[i] - theta_n[i];
      dn += dd * dd;
    }
    if ((outer + 1) % 20 == 0 || outer + 1 == cfg.n_steps) {
      sum.metrics.push_back({(outer + 1) * cfg.tau, 0.0, test_error(theta), "hidim_exact"});
    }
    if (std::sqrt(dn) < 1e-6) break;
  }
  sum.train_seconds = watch.seconds();
  sum.final_relative_l2 = sum.metrics.empty() ? 1.0 : sum.metrics.back().relative_l2;

  net.params.values = theta;
  write_text(cfg.out_dir + "/config.json", config_to_json(cfg));
  write_trace_csv(cfg.out_dir + "/energy_trace.csv", sum.trace);
  write_metrics_csv(cfg.out_dir + "/metrics.csv", sum.metrics);
  save_network(net, cfg.out_dir + "/checkpoint_final.json");
  return sum;
}

// ---------------------------------------------------------------------------
// Lagrangian runs
// ---------------------------------------------------------------------------

struct LagrangianSetup {
  EnergySpec spec;
  DissipationSpec eta;
  ParticleEnsemble initial;
  SpaceFn rho0;
};

RunSummary run_lagrangian(const ExperimentConfig& cfg, const LagrangianSetup& setup) {
  RunSummary sum;
  sum.experiment = cfg.experiment;
  sum.out_dir = cfg.out_dir;
  ensure_dir(cfg.out_dir);
  ensure_dir(cfg.out_dir + "/chain");

  const int d = cfg.dim;
  StopWatch watch;
  watch.start();
  LagrangianSolver solver(setup.spec, setup.eta, map_spec(cfg), setup.initial, cfg.tau,
                          inner_optimizer(cfg), cfg.seed);
  watch.stop();

  // porous-medium boundary markers ride along outside the objective
  Vec markers;
  IcnnKernel marker_kern(map_spec(cfg));
  if (cfg.experiment == "pme_barenblatt") {
    const double xi0 = barenblatt_support_radius(cfg.pme_t0, cfg.pme_alpha, cfg.pme_C0, 2);
    markers = boundary_samples(DomainDescriptor::disk({0.0, 0.0}, xi0), cfg.pme_marker_count, 0,
                               BoundaryMode::Equispaced);
  }

  auto fp = cfg.dim == 2 ? FokkerPlanckGauss::benchmark2d() : FokkerPlanckGauss::benchmark4d();
  std::vector<int> snap_steps;
  for (double t : cfg.snapshot_times) snap_steps.push_back(snapshot_step(t, cfg.tau));

  auto emit_snapshot = [&](int step) {
    const double t = step * cfg.tau;
    char name[64];
    std::snprintf(name, sizeof(name), "/ensemble_t%.3f.csv", t);
    write_ensemble_csv(cfg.out_dir + name, solver.ensemble());
    if (cfg.experiment.rfind("fokker_planck", 0) == 0 && step > 0) {
      if (cfg.density_grid_metrics && d == 2) {
        const double h = cfg.density_box_halfwidth;
        auto grid = uniform_grid({cfg.density_grid_res, cfg.density_grid_res},
                                 DomainDescriptor::box({-h, -h}, {h, h}));
        Vec pred = density_at_batch(solver.chain(), setup.rho0, grid.interior, grid.n_interior());
        Vec exact(grid.n_interior());
        for (int i = 0; i < grid.n_interior(); ++i)
          exact[i] = fp.density(grid.interior_point(i), t);
        sum.metrics.push_back(
            {t, l2_error(pred, exact), relative_l2_error(pred, exact), "fokker_planck_gauss"});
        std::snprintf(name, sizeof(name), "/density_t%.3f.csv", t);
        write_field_csv(cfg.out_dir + name, grid, pred);
      } else {
        // carried densities at the particles
        const auto& ens = solver.ensemble();
        Vec exact(ens.size());
        for (int i = 0; i < ens.size(); ++i)
          exact[i] = fp.density(ens.positions.data() + static_cast<std::size_t>(i) * d, t);
        sum.metrics.push_back({t, l2_error(ens.rho, exact), relative_l2_error(ens.rho, exact),
                               "fokker_planck_gauss_particles"});
      }
    }
    if (cfg.experiment == "pme_barenblatt" && step >= 0) {
      const double tref = t + cfg.pme_t0;
      const auto& ens = solver.ensemble();
      const double xi = barenblatt_support_radius(tref, cfg.pme_alpha, cfg.pme_C0, 2);
      Vec pred, exact;
      for (int i = 0; i < ens.size(); ++i) {
        const double* x = ens.positions.data() + static_cast<std::size_t>(i) * 2;
        if (std::hypot(x[0], x[1]) <= 0.9 * xi) {
          pred.push_back(ens.rho[i]);
          exact.push_back(barenblatt(x, tref, cfg.pme_alpha, cfg.pme_C0, 2));
        }
      }
      if (!pred.empty())
        sum.metrics.push_back({t, l2_error(pred, exact), relative_l2_error(pred, exact),
                               "barenblatt"});
      if (!markers.empty()) {
        double mean_r = 0.0;
        for (int i = 0; i < cfg.pme_marker_count; ++i)
          mean_r += std::hypot(markers[2 * i], markers[2 * i + 1]);
        mean_r /= cfg.pme_marker_count;
        sum.marker_mean_radius = mean_r;
        sum.metrics.push_back({t, mean_r, mean_r / xi - 1.0, "support_radius"});
        std::snprintf(name, sizeof(name), "/markers_t%.3f.csv", t);
        export_points_csv(cfg.out_dir + name, markers, 2);
      }
    }
  };

  if (std::find(snap_steps.begin(), snap_steps.end(), 0) != snap_steps.end()) emit_snapshot(0);

  sum.min_det = 1e300;
  double prev_energy = solver.current_energy_estimate();
  for (int n = 1; n <= cfg.n_steps; ++n) {
    watch.start();
    auto rep = solver.step();
    watch.stop();
    if (!rep.accepted) ++sum.rejected_steps;
    if (rep.accepted) {
      if (rep.energy_after > prev_energy) sum.energy_monotone = false;
      prev_energy = rep.energy_after;
      sum.min_det = std::min(sum.min_det, rep.min_det);
      // advect the markers with the accepted map
      if (!markers.empty()) {
        marker_kern.bind(solver.chain().maps.back().params.data());
        Vec moved(markers.size());
        marker_kern.eval_all(markers.data(), cfg.pme_marker_count, nullptr, moved.data(), nullptr);
        markers = std::move(moved);
      }
      // round-trip inversion residual on a particle subset
      const double rt = solver.max_roundtrip_error(solver.chain().maps.back(), 8);
      sum.max_roundtrip_residual = std::max(sum.max_roundtrip_residual, rt);
      char name[64];
      std::snprintf(name, sizeof(name), "/chain/step_%04d.json", n);
      save_network(solver.chain().maps.back(), cfg.out_dir + name);
    }
    TraceRow row;
    row.step = n;
    row.time = n * cfg.tau;
    row.free_energy = rep.energy_after;
    row.objective = rep.objective_opt;
    row.inner_iters = rep.inner_iters;
    row.accepted = rep.accepted;
    sum.trace.push_back(row);
    if (std::find(snap_steps.begin(), snap_steps.end(), n) != snap_steps.end()) emit_snapshot(n);
  }
  sum.train_seconds = watch.seconds();

  const auto& ens = solver.ensemble();
  double mass = 0.0;
  sum.min_density = 1e300;
  for (int i = 0; i < ens.size(); ++i) {
    mass += ens.weights[i];
    sum.min_density = std::min(sum.min_density, ens.rho[i]);
  }
  sum.mass_error = std::abs(mass - 1.0);

  if (cfg.experiment == "mixture_sampling") {
    const auto means = mixture_means();
    double near = 0.0;
    for (int i = 0; i < ens.size(); ++i) {
      const double* x = ens.positions.data() + 2 * static_cast<std::size_t>(i);
      double best = 1e300;
      for (const auto& m : means)
        best = std::min(best, std::hypot(x[0] - m[0], x[1] - m[1]));
      if (best <= 1.5) near += ens.weights[i];
    }
    sum.weight_near_means = near / mass;
  }
  for (const auto& r : sum.metrics)
    if (r.oracle != "support_radius" && r.oracle != "volume_constraint")
      sum.final_relative_l2 = r.relative_l2;

  write_text(cfg.out_dir + "/config.json", config_to_json(cfg));
  write_trace_csv(cfg.out_dir + "/energy_trace.csv", sum.trace);
  write_metrics_csv(cfg.out_dir + "/metrics.csv", sum.metrics);
  return sum;
}

LagrangianSetup fokker_planck_setup(const ExperimentConfig& cfg) {
  LagrangianSetup setup;
  const int d = cfg.dim;
  auto fp = d == 2 ? FokkerPlanckGauss::benchmark2d() : FokkerPlanckGauss::benchmark4d();
  setup.spec.omega = EnergySpec::Omega::Entropy;
  setup.spec.potential = [fp](const double* x) { return fp.potential(x); };
  setup.spec.potential_grad = [fp](const double* x, double* g) { fp.potential_grad(x, g); };
  setup.eta = DissipationSpec{DissipationSpec::Kind::Rho};
  Vec mean(d, 0.0);
  std::vector<Vec> cov(d, Vec(d, 0.0));
  for (int j = 0; j < d; ++j) cov[j][j] = 1.0;
  setup.initial = gaussian_draw(cfg.n_particles, mean, cov, cfg.seed);
  setup.rho0 = [d](const double* x) {
    double q = 0.0;
    for (int j = 0; j < d; ++j) q += x[j] * x[j];
    return std::exp(-0.5 * q) / std::pow(2.0 * M_PI, d / 2.0);
  };
  return setup;
}

LagrangianSetup mixture_setup(const ExperimentConfig& cfg) {
  LagrangianSetup setup;
  setup.spec.omega = EnergySpec::Omega::Entropy;
  setup.spec.potential = [](const double* x) { return mixture_potential(x); };
  setup.spec.potential_grad = [](const double* x, double* g) { mixture_potential_grad(x, g); };
  setup.eta = DissipationSpec{DissipationSpec::Kind::Rho};
  Vec mean(2, 0.0);
  std::vector<Vec> cov = {{1.0, 0.0}, {0.0, 1.0}};
  setup.initial = gaussian_draw(cfg.n_particles, mean, cov, cfg.seed);
  setup.rho0 = [](const double* x) {
    return std::exp(-0.5 * (x[0] * x[0] + x[1] * x[1])) / (2.0 * M_PI);
  };
  return setup;
}

LagrangianSetup pme_setup(const ExperimentConfig& cfg) {
  LagrangianSetup setup;
  setup.spec.omega = EnergySpec::Omega::Power;
  setup.spec.power_alpha = cfg.pme_alpha;
  setup.eta = DissipationSpec{DissipationSpec::Kind::Constant, cfg.eta_c};
  const double t0 = cfg.pme_t0;
  const double a = cfg.pme_alpha, C0 = cfg.pme_C0;
  const double xi0 = barenblatt_support_radius(t0, a, C0, 2);
  ParticleEnsemble ens;
  ens.d = 2;
  const int res = cfg.pme_grid_res;
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j) {
      const double x[2] = {-xi0 + 2.0 * xi0 * i / (res - 1), -xi0 + 2.0 * xi0 * j / (res - 1)};
      const double rho = barenblatt(x, t0, a, C0, 2);
      if (rho > 1e-10) {
        ens.positions.insert(ens.positions.end(), x, x + 2);
        ens.rho.push_back(rho);
      }
    }
  const int n = static_cast<int>(ens.rho.size());
  // importance factors rho_i / mu_i for a uniform initial layout normalize to
  // rho_i / sum rho
  double total = 0.0;
  for (double r : ens.rho) total += r;
  ens.weights.resize(n);
  for (int i = 0; i < n; ++i) ens.weights[i] = ens.rho[i] / total;
  setup.initial = std::move(ens);
  setup.rho0 = [t0, a, C0](const double* x) { return barenblatt(x, t0, a, C0, 2); };
  return setup;
}

// ---------------------------------------------------------------------------
// baselines
// ---------------------------------------------------------------------------

struct ErrorProbe {
  SampleSet grid;
  Vec ref;
  const NetworkSpec* nspec;
  double operator()(const Vec& theta) const {
    Network probe{*nspec, make_layout(*nspec)};
    probe.params.values = theta;
    auto pred = eval_field(probe, grid);
    return relative_l2_error(pred, ref);
  }
};

std::vector<BaselinePoint> run_evnn_trial(const ExperimentConfig& cfg, const PoissonCase& pc,
                                          std::uint64_t seed, const ErrorProbe& probe) {
  EnergySpec spec;
  spec.dirichlet = true;
  spec.source = pc.f;
  spec.boundary_lambda = cfg.lambda_boundary;
  Network net = build_network(scalar_net_spec(cfg), seed);
  EulerianSolver solver(spec, DissipationSpec{}, net, poisson_samples(pc, cfg, seed), cfg.tau,
                        TimeScheme::ImplicitEuler, inner_optimizer(cfg));
  solver.set_resampler(
      [&pc, &cfg, seed](int step) { return poisson_samples(pc, cfg, mix_seed(seed, 1 + step)); });
  std::vector<BaselinePoint> curve;
  StopWatch watch;
  for (int n = 0; n < cfg.n_steps; ++n) {
    watch.start();
    solver.step();
    watch.stop();
    curve.push_back({watch.seconds(), probe(solver.net().params.values)});
    if (watch.seconds() > cfg.time_budget_seconds) break;
  }
  return curve;
}

std::vector<BaselinePoint> run_adam_baseline(const ExperimentConfig& cfg, const PoissonCase& pc,
                                             std::uint64_t seed, bool pinn,
                                             const ErrorProbe& probe) {
  Network net = build_network(scalar_net_spec(cfg), seed);
  long batch = 0;
  auto fresh = [&]() { return poisson_samples(pc, cfg, mix_seed(seed, 50000 + batch++)); };

  EnergySpec drm_spec;
  drm_spec.dirichlet = true;
  drm_spec.source = pc.f;
  drm_spec.boundary_lambda = cfg.lambda_boundary;
  PinnObjective pinn_obj(pc.f, nullptr, cfg.lambda_boundary, scalar_net_spec(cfg), fresh());
  DrmObjective drm_obj(drm_spec, scalar_net_spec(cfg), fresh());

  OptimizerConfig adam;
  adam.kind = OptKind::Adam;
  adam.lr = cfg.adam_lr;
  adam.max_iters = cfg.n_steps;
  adam.param_change_tol = 1e-14;
  adam.grad_tol = 1e-14;

  std::vector<BaselinePoint> curve;
  StopWatch watch;
  const int stride = 25;
  watch.start();
  auto objective = [&](const Vec& x, Vec* g) {
    if (pinn) {
      pinn_obj.set_samples(fresh());
      return pinn_obj.value_and_grad(x, g);
    }
    drm_obj.set_samples(fresh());
    return drm_obj.value_and_grad(x, g);
  };
  auto cb = [&](int it, const Vec& x, double) {
    if (it % stride != 0) return watch.seconds() <= cfg.time_budget_seconds;
    watch.stop();
    curve.push_back({watch.seconds(), probe(x)});
    watch.start();
    return watch.seconds() <= cfg.time_budget_seconds;
  };
  Vec theta = net.params.values;
  auto res = minimize(objective, theta, adam, nullptr, cb);
  watch.stop();
  curve.push_back({watch.seconds(), probe(res.x)});
  return curve;
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& cfg) {
  auto violations = validate_config(cfg);
  if (!violations.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& v : violations) msg += "\n  - " + v;
    throw DomainViolation(msg);
  }
  if (cfg.workers > 0) omp_set_num_threads(cfg.workers);

  if (cfg.experiment == "poisson2d_case1" || cfg.experiment == "poisson2d_case2")
    return run_poisson(cfg);
  if (cfg.experiment == "poisson_hidim") return run_hidim(cfg);
  if (cfg.experiment == "heat2d") return run_heat(cfg);
  if (cfg.experiment == "allen_cahn") return run_allen_cahn(cfg);
  if (cfg.experiment == "fokker_planck_2d" || cfg.experiment == "fokker_planck_4d")
    return run_lagrangian(cfg, fokker_planck_setup(cfg));
  if (cfg.experiment == "mixture_sampling") return run_lagrangian(cfg, mixture_setup(cfg));
  if (cfg.experiment == "pme_barenblatt") return run_lagrangian(cfg, pme_setup(cfg));
  if (cfg.experiment == "baseline_pinn" || cfg.experiment == "baseline_drm") {
    // single-method training with an error curve
    RunSummary sum;
    sum.experiment = cfg.experiment;
    sum.out_dir = cfg.out_dir;
    ensure_dir(cfg.out_dir);
    const PoissonCase pc = poisson_case(1);
    auto grid = poisson_test_grid(pc, cfg.test_grid_res);
    ErrorProbe probe{grid, {}, nullptr};
    auto nspec = scalar_net_spec(cfg);
    probe.nspec = &nspec;
    probe.ref.resize(grid.n_interior());
    for (int i = 0; i < grid.n_interior(); ++i) probe.ref[i] = pc.exact(grid.interior_point(i));
    auto curve = run_adam_baseline(cfg, pc, cfg.seed, cfg.experiment == "baseline_pinn", probe);
    std::ofstream f(cfg.out_dir + "/metrics.csv");
    f.precision(17);
    f << "time,l2,relative_l2,oracle\n";
    for (const auto& p : curve)
      f << p.seconds << ",0," << p.relative_l2 << ",poisson_case1_exact\n";
    sum.final_relative_l2 = curve.empty() ? 1.0 : curve.back().relative_l2;
    sum.train_seconds = curve.empty() ? 0.0 : curve.back().seconds;
    write_text(cfg.out_dir + "/config.json", config_to_json(cfg));
    return sum;
  }
  throw DomainViolation("unknown experiment: " + cfg.experiment);
}

BaselineSummary compare_baselines(const ExperimentConfig& cfg) {
  if (cfg.workers > 0) omp_set_num_threads(cfg.workers);
  const PoissonCase pc = poisson_case(cfg.experiment == "poisson2d_case2" ? 2 : 1);
  BaselineSummary out;
  out.out_dir = cfg.out_dir;
  out.methods = {"evnn", "pinn", "drm"};
  out.curves.assign(3, {});

  auto grid = poisson_test_grid(pc, cfg.test_grid_res);
  auto nspec = scalar_net_spec(cfg);
  ErrorProbe probe{grid, {}, &nspec};
  probe.ref.resize(grid.n_interior());
  for (int i = 0; i < grid.n_interior(); ++i) probe.ref[i] = pc.exact(grid.interior_point(i));

  for (int trial = 0; trial < cfg.trials; ++trial) {
    const std::uint64_t s = mix_seed(cfg.seed, trial);
    out.curves[0].push_back(run_evnn_trial(cfg, pc, s, probe));
    out.curves[1].push_back(run_adam_baseline(cfg, pc, s, true, probe));
    out.curves[2].push_back(run_adam_baseline(cfg, pc, s, false, probe));
  }

  // common final wall-time point across every curve
  double tmin = 1e300;
  for (const auto& m : out.curves)
    for (const auto& c : m)
      if (!c.empty()) tmin = std::min(tmin, c.back().seconds);
  out.common_final_time = tmin;
  out.mean_final.assign(3, 0.0);
  out.stderr_final.assign(3, 0.0);
  for (int m = 0; m < 3; ++m) {
    Vec vals;
    for (const auto& c : out.curves[m]) {
      double best = c.empty() ? 1.0 : c.front().relative_l2;
      for (const auto& p : c)
        if (p.seconds <= tmin) best = p.relative_l2;
      vals.push_back(best);
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    out.mean_final[m] = mean;
    out.stderr_final[m] = vals.size() > 1 ? std::sqrt(var / (vals.size() - 1.0) / vals.size()) : 0.0;
  }

  ensure_dir(cfg.out_dir);
  write_text(cfg.out_dir + "/config.json", config_to_json(cfg));
  std::ofstream f(cfg.out_dir + "/baselines.csv");
  f.precision(17);
  f << "method,trial,time,relative_l2\n";
  for (int m = 0; m < 3; ++m)
    for (std::size_t t = 0; t < out.curves[m].size(); ++t)
      for (const auto& p : out.curves[m][t])
        f << out.methods[m] << ',' << t << ',' << p.seconds << ',' << p.relative_l2 << "\n";
  std::ofstream g(cfg.out_dir + "/baselines_summary.csv");
  g.precision(17);
  g << "method,common_final_time,mean_relative_l2,stderr\n";
  for (int m = 0; m < 3; ++m)
    g << out.methods[m] << ',' << out.common_final_time << ',' << out.mean_final[m] << ','
      << out.stderr_final[m] << "\n";
  return out;
}

}  // namespace evnn
