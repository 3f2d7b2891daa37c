#pragma once

#include <functional>
#include <string>

#include "evnn/common.hpp"

namespace evnn {

// Scalar objective over a flat parameter vector.  When grad is non-null the
// implementation must fill it.  A trial point outside the admissible region
// may report +inf; line searches back off from such points.
using Objective = std::function<double(const Vec& x, Vec* grad)>;

// Applied to the iterate after every accepted step (e.g. weight projection).
using PostStepHook = std::function<void(Vec& x)>;

// Called after every accepted iteration; wall-clock spent inside the callback
// is the caller's business.  Return false to stop the run early.
using IterCallback = std::function<bool(int iter, const Vec& x, double f)>;

enum class OptKind { Adam, LBFGS, GDBB };
enum class StopReason { GradTol, ParamTol, MaxIters, LineSearchFail };

std::string to_string(OptKind k);
std::string to_string(StopReason r);
OptKind opt_kind_from_string(const std::string& s);

struct OptimizerConfig {
  OptKind kind = OptKind::LBFGS;
  int max_iters = 200;
  double grad_tol = 1e-9;
  double param_change_tol = 1e-6;
  // Adam
  double lr = 1e-3;
  double lr_final = 0.0;  // > 0: geometric decay from lr to lr_final over max_iters
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // L-BFGS
  int history = 10;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  int max_line_search = 40;
  // Barzilai-Borwein
  double bb_fallback_step = 1e-3;

  void validate() const;
};

struct OptimizeResult {
  Vec x;
  double f = 0.0;
  double f_initial = 0.0;
  int iters = 0;
  long n_evals = 0;
  StopReason reason = StopReason::MaxIters;
};

// BB1 step length s.s / s.y with a fallback when the denominator is at or
// below 1e-16 (covers both orthogonal and negative-curvature pairs).
double bb_step(const Vec& s, const Vec& y, double fallback);

OptimizeResult minimize(const Objective& obj, Vec x0, const OptimizerConfig& cfg,
                        const PostStepHook& hook = nullptr, const IterCallback& cb = nullptr);

}  // namespace evnn
