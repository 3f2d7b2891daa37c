#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "evnn/config.hpp"

using namespace evnn;

TEST_CASE("presets validate cleanly") {
  for (const char* name :
       {"poisson2d_case1", "poisson2d_case2", "poisson_hidim", "heat2d", "allen_cahn",
        "fokker_planck_2d", "fokker_planck_4d", "mixture_sampling", "pme_barenblatt",
        "baseline_pinn", "baseline_drm"}) {
    auto cfg = make_preset(name);
    INFO(name);
    CHECK(validate_config(cfg).empty());
  }
  CHECK_THROWS(make_preset("no_such_experiment"));
}

TEST_CASE("violations are collected, not thrown") {
  auto cfg = make_preset("heat2d");
  cfg.tau = -1.0;
  cfg.scheme = "bdf2";
  cfg.n_steps = 1;
  cfg.opt_kind = "what";
  auto v = validate_config(cfg);
  REQUIRE(v.size() >= 3);
}

TEST_CASE("density metrics with a planar map are rejected") {
  auto cfg = make_preset("fokker_planck_2d");
  cfg.map_kind = "planar";
  auto v = validate_config(cfg);
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("convex-potential") != std::string::npos);
}

TEST_CASE("porous-medium constraints") {
  auto cfg = make_preset("pme_barenblatt");
  cfg.eta = "rho";
  auto v = validate_config(cfg);
  CHECK(!v.empty());
  cfg = make_preset("pme_barenblatt");
  cfg.omega = "entropy";
  CHECK(!validate_config(cfg).empty());
}

TEST_CASE("config JSON round trip preserves fields") {
  auto cfg = make_preset("fokker_planck_4d");
  cfg.seed = 987654321;
  cfg.inner_max_iters = 42;
  cfg.snapshot_times = {0.1, 0.25};
  auto text = config_to_json(cfg);
  auto back = config_from_json(text);
  CHECK(back.experiment == cfg.experiment);
  CHECK(back.seed == cfg.seed);
  CHECK(back.inner_max_iters == 42);
  CHECK(back.snapshot_times == cfg.snapshot_times);
  CHECK(back.dim == 4);
}

TEST_CASE("JSON overrides apply on top of the named preset") {
  auto cfg = config_from_json(R"({"experiment":"heat2d","tau":0.002,"n_steps":300})");
  CHECK(cfg.tau == 0.002);
  CHECK(cfg.n_steps == 300);
  CHECK(cfg.grid_res == 301);          // preset default preserved
  CHECK(cfg.lambda_boundary == 500.0);
}

TEST_CASE("benchmark parameter counts") {
  auto heat = make_preset("heat2d");
  CHECK(param_count(scalar_net_spec(heat)) == 501);
  auto ac = make_preset("allen_cahn");
  CHECK(param_count(scalar_net_spec(ac)) == 921);
}
