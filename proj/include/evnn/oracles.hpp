#pragma once

#include <string>
#include <vector>

#include "evnn/energy.hpp"
#include "evnn/sampling.hpp"

namespace evnn {

// l2 error (1/N sum |e|^2)^(1/2) and relative l2 (sum|e|^2 / sum|ref|^2)^(1/2).
double l2_error(const Vec& pred, const Vec& ref);
double relative_l2_error(const Vec& pred, const Vec& ref);

// --- closed-form reference solutions --------------------------------------

// u(x, t) = e^{-pi^2 t / 2} sin(pi x1 / 2) sin(pi x2 / 2) on (0,2)^2
double heat_exact(const double* x, double t);

// case 1: Omega = (0,pi) x (-pi/2, pi/2), u = sin x cos y, f = 2 sin x cos y
double poisson_case1_exact(const double* x);
double poisson_case1_f(const double* x);

// case 2: unit disk, u = sin(pi/2 (1 - |x|))
double poisson_case2_exact(const double* x);
double poisson_case2_f(const double* x);

// Neumann problem on (-1,1)^d: u = sum_k cos(pi x_k), f = pi^2 sum_k cos(pi x_k)
double hidim_poisson_exact(const double* x, int d);
double hidim_poisson_f(const double* x, int d);

// Ornstein-Uhlenbeck benchmark: Gaussian with drifting mean/covariance.
struct FokkerPlanckGauss {
  int d = 2;
  Vec mu_target;
  std::vector<Vec> sigma_target;

  static FokkerPlanckGauss benchmark2d();
  static FokkerPlanckGauss benchmark4d();

  Vec mean_at(double t) const;
  std::vector<Vec> cov_at(double t) const;
  double density(const double* x, double t) const;
  double potential(const double* x) const;            // 1/2 (x-mu)' Sigma^{-1} (x-mu)
  void potential_grad(const double* x, double* g) const;
};

// Compactly supported self-similar solution of rho_t = lap(rho^alpha).
double barenblatt(const double* x, double t, double alpha, double C0, int d);
double barenblatt_support_radius(double t, double alpha, double C0, int d);

// Eight-component Gaussian mixture target and the matching potential.
double mixture_density(const double* x);
double mixture_potential(const double* x);
void mixture_potential_grad(const double* x, double* g);
std::vector<Vec> mixture_means();

// --- finite-difference heat oracle -----------------------------------------

struct FdmHeatResult {
  std::vector<Vec> fields;  // one per requested snapshot step, res*res values
  std::vector<double> snapshot_times;
  Vec energy_trace;  // discrete Dirichlet energy after each step
  SampleSet grid;
};

// Implicit Euler with the 5-point Laplacian on a res x res grid over
// (0, L)^2, homogeneous Dirichlet data, direct sparse Cholesky per run.
FdmHeatResult fdm_heat_solve(int res, double L, double tau, int n_steps, const SpaceFn& ic,
                             const std::vector<int>& snapshot_steps);

// --- self-tests -------------------------------------------------------------

struct SelfTestResult {
  std::string name;
  double worst_residual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// PDE residuals of every closed-form evaluator via high-order finite
// differences at random interior points, plus mass checks.
std::vector<SelfTestResult> oracle_self_tests(std::uint64_t seed = 1234);

}  // namespace evnn
