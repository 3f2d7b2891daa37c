#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "evnn/runner.hpp"

using namespace evnn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_heat(const std::string& out) {
  auto cfg = make_preset("heat2d");
  cfg.grid_res = 41;
  cfg.boundary_per_edge = 60;
  cfg.n_steps = 5;
  cfg.inner_max_iters = 20;
  cfg.snapshot_times = {0.02, 0.05};
  cfg.test_grid_res = 21;
  cfg.out_dir = out;
  cfg.workers = 1;
  return cfg;
}

}  // namespace

TEST_CASE("heat run emits the advertised artifacts") {
  auto cfg = tiny_heat("/tmp/evnn_test_runs/heat_a");
  auto sum = run_experiment(cfg);
  CHECK(sum.trace.size() == 5);
  CHECK(sum.rejected_steps == 0);
  CHECK(sum.energy_monotone);
  for (const char* f : {"config.json", "energy_trace.csv", "metrics.csv", "fdm_energy_trace.csv",
                        "checkpoint_step0.json", "solution_t0.020.csv"})
    CHECK(fs::exists(fs::path(cfg.out_dir) / f));
  // metrics carry both oracle tags
  bool saw_exact = false, saw_fdm = false;
  for (const auto& m : sum.metrics) {
    saw_exact |= m.oracle == "heat_exact";
    saw_fdm |= m.oracle == "heat_fdm";
  }
  CHECK(saw_exact);
  CHECK(saw_fdm);
}

TEST_CASE("single-worker reruns are bit-identical") {
  auto a = tiny_heat("/tmp/evnn_test_runs/heat_b1");
  auto b = tiny_heat("/tmp/evnn_test_runs/heat_b2");
  (void)run_experiment(a);
  (void)run_experiment(b);
  CHECK(slurp(a.out_dir + "/energy_trace.csv") == slurp(b.out_dir + "/energy_trace.csv"));
  CHECK(slurp(a.out_dir + "/metrics.csv") == slurp(b.out_dir + "/metrics.csv"));
  CHECK(slurp(a.out_dir + "/checkpoint_step0.json") == slurp(b.out_dir + "/checkpoint_step0.json"));
}

TEST_CASE("invalid config raises with the full violation list") {
  auto cfg = tiny_heat("/tmp/evnn_test_runs/heat_bad");
  cfg.tau = -0.5;
  try {
    (void)run_experiment(cfg);
    FAIL("expected a validation error");
  } catch (const DomainViolation& e) {
    CHECK(std::string(e.what()).find("tau") != std::string::npos);
  }
}

TEST_CASE("lagrangian run emits ensembles, chain checkpoints and invariants") {
  auto cfg = make_preset("fokker_planck_2d");
  cfg.n_particles = 300;
  cfg.n_steps = 3;
  cfg.inner_max_iters = 20;
  cfg.snapshot_times = {0.01, 0.03};
  cfg.density_grid_metrics = true;
  cfg.density_grid_res = 41;
  cfg.out_dir = "/tmp/evnn_test_runs/fp_small";
  cfg.workers = 1;
  auto sum = run_experiment(cfg);
  CHECK(sum.rejected_steps == 0);
  CHECK(sum.energy_monotone);
  CHECK(sum.mass_error < 1e-12);
  CHECK(sum.min_det > 0.0);
  CHECK(sum.min_density > 0.0);
  CHECK(sum.max_roundtrip_residual < 1e-6);
  CHECK(fs::exists(fs::path(cfg.out_dir) / "ensemble_t0.010.csv"));
  CHECK(fs::exists(fs::path(cfg.out_dir) / "chain/step_0001.json"));
  bool saw_density_metric = false;
  for (const auto& m : sum.metrics) saw_density_metric |= m.oracle == "fokker_planck_gauss";
  CHECK(saw_density_metric);
}
