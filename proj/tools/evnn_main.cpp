#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <fstream>
#include <random>

#include "evnn/autodiff.hpp"
#include "evnn/oracles.hpp"
#include "evnn/runner.hpp"

using namespace evnn;

namespace {

int cmd_run(const std::string& config_path, long seed, int workers, const std::string& out) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (workers > 0) cfg.workers = workers;
    if (!out.empty()) cfg.out_dir = out;
    auto violations = validate_config(cfg);
    if (!violations.empty()) {
      std::fprintf(stderr, "configuration errors:\n");
      for (const auto& v : violations) std::fprintf(stderr, "  - %s\n", v.c_str());
      return 2;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  try {
    auto sum = run_experiment(cfg);
    std::printf("experiment       %s\n", sum.experiment.c_str());
    std::printf("artifacts        %s\n", sum.out_dir.c_str());
    std::printf("train seconds    %.2f\n", sum.train_seconds);
    if (sum.fit_rmse > 0) std::printf("initial fit rmse %.3e\n", sum.fit_rmse);
    std::printf("rejected steps   %d\n", sum.rejected_steps);
    for (const auto& m : sum.metrics)
      std::printf("metric t=%-8.3g l2=%-12.5g rel_l2=%-12.5g  [%s]\n", m.time, m.l2,
                  m.relative_l2, m.oracle.c_str());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "run failed: %s\n", e.what());
    return 3;
  }
}

int cmd_compare(const std::string& config_path) {
  try {
    auto cfg = load_config(config_path);
    auto violations = validate_config(cfg);
    if (!violations.empty()) {
      for (const auto& v : violations) std::fprintf(stderr, "  - %s\n", v.c_str());
      return 2;
    }
    auto sum = compare_baselines(cfg);
    std::printf("common final time %.2fs over %d trials\n", sum.common_final_time,
                static_cast<int>(sum.curves[0].size()));
    for (std::size_t m = 0; m < sum.methods.size(); ++m)
      std::printf("%-6s mean rel l2 %.5g (stderr %.2g)\n", sum.methods[m].c_str(),
                  sum.mean_final[m], sum.stderr_final[m]);
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "compare failed: %s\n", e.what());
    return 3;
  }
}

int cmd_selftest() {
  bool ok = true;
  auto results = oracle_self_tests();
  for (const auto& r : results) {
    std::printf("%-22s residual %-12.3e tol %-8.1e %s\n", r.name.c_str(), r.worst_residual,
                r.tolerance, r.pass ? "ok" : "FAIL");
    ok = ok && r.pass;
  }
  // gradient spot checks against central differences
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    ResNetSpec spec{2, 1, 1, 8, 8, ActivationKind::Tanh};
    Network net = build_network(spec, 100 + trial);
    Vec x = {u(rng), u(rng)};
    auto g = grad_input(net, x);
    const double h = 1e-5;
    for (int j = 0; j < 2; ++j) {
      Vec xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      const double fd = (eval_scalar(net, xp) - eval_scalar(net, xm)) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - g[j]) / std::max(1e-8, std::abs(fd)));
    }
  }
  std::printf("%-22s residual %-12.3e tol %-8.1e %s\n", "gradient_checks", worst, 1e-5,
              worst <= 1e-5 ? "ok" : "FAIL");
  ok = ok && worst <= 1e-5;
  return ok ? 0 : 3;
}

int cmd_preset(const std::string& name, const std::string& out) {
  try {
    auto cfg = make_preset(name);
    const std::string text = config_to_json(cfg);
    if (out.empty()) {
      std::printf("%s\n", text.c_str());
    } else {
      std::ofstream f(out);
      f << text;
    }
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"energy-law driven neural solvers for gradient flows and diffusions"};
  app.require_subcommand(1);

  std::string config_path, out_dir, preset_name;
  long seed = -1;
  int workers = 0;

  auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
  run->add_option("config", config_path, "config file")->required();
  run->add_option("--seed", seed, "override the seed");
  run->add_option("--workers", workers, "worker thread count");
  run->add_option("--out", out_dir, "output directory");

  auto* cmp = app.add_subcommand("compare-baselines", "error-vs-time comparison across methods");
  cmp->add_option("config", config_path, "config file")->required();

  app.add_subcommand("selftest", "oracle self-tests and gradient checks");

  auto* pre = app.add_subcommand("preset", "print a named experiment preset");
  pre->add_option("name", preset_name, "experiment name")->required();
  pre->add_option("--out", out_dir, "write to a file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  if (app.got_subcommand("run")) return cmd_run(config_path, seed, workers, out_dir);
  if (app.got_subcommand("compare-baselines")) return cmd_compare(config_path);
  if (app.got_subcommand("selftest")) return cmd_selftest();
  if (app.got_subcommand("preset")) return cmd_preset(preset_name, out_dir);
  return 2;
}
