#include "evnn/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace evnn {

std::string to_string(OptKind k) {
  switch (k) {
    case OptKind::Adam: return "adam";
    case OptKind::LBFGS: return "lbfgs";
    case OptKind::GDBB: return "gd-bb";
  }
  return "lbfgs";
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::GradTol: return "grad_tol";
    case StopReason::ParamTol: return "param_tol";
    case StopReason::MaxIters: return "max_iters";
    case StopReason::LineSearchFail: return "line_search_fail";
  }
  return "max_iters";
}

OptKind opt_kind_from_string(const std::string& s) {
  if (s == "adam") return OptKind::Adam;
  if (s == "lbfgs") return OptKind::LBFGS;
  if (s == "gd-bb" || s == "gdbb") return OptKind::GDBB;
  throw DomainViolation("unknown optimizer kind: " + s);
}

void OptimizerConfig::validate() const {
  if (max_iters < 0) throw DomainViolation("max_iters must be nonnegative");
  if (grad_tol <= 0 || param_change_tol <= 0) throw DomainViolation("tolerances must be positive");
  if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1))
    throw DomainViolation("Adam betas must lie in (0,1)");
  if (lr <= 0) throw DomainViolation("learning rate must be positive");
  if (history <= 0) throw DomainViolation("L-BFGS history must be positive");
}

double bb_step(const Vec& s, const Vec& y, double fallback) {
  double ss = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    ss += s[i] * s[i];
    sy += s[i] * y[i];
  }
  if (sy <= 1e-16) return fallback;
  return ss / sy;
}

namespace {

double norm2(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Eval {
  const Objective& obj;
  long count = 0;
  double operator()(const Vec& x, Vec* g) {
    ++count;
    double f = obj(x, g);
    return f;
  }
};

OptimizeResult run_adam(Eval& ev, Vec x, const OptimizerConfig& cfg, const PostStepHook& hook,
                        const IterCallback& cb) {
  OptimizeResult res;
  const std::size_t n = x.size();
  Vec g(n), m(n, 0.0), v(n, 0.0);
  double f = ev(x, &g);
  if (!std::isfinite(f)) throw DomainViolation("objective not finite at the starting point");
  res.f_initial = f;
  double b1t = 1.0, b2t = 1.0;
  const double decay = (cfg.lr_final > 0.0 && cfg.max_iters > 1)
                           ? std::pow(cfg.lr_final / cfg.lr, 1.0 / (cfg.max_iters - 1))
                           : 1.0;
  double lr = cfg.lr;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    double gn = norm2(g);
    if (gn < cfg.grad_tol) {
      res.x = std::move(x);
      res.f = f;
      res.iters = it - 1;
      res.n_evals = ev.count;
      res.reason = StopReason::GradTol;
      return res;
    }
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    double dn2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mh = m[i] / (1.0 - b1t);
      const double vh = v[i] / (1.0 - b2t);
      const double d = lr * mh / (std::sqrt(vh) + cfg.eps);
      x[i] -= d;
      dn2 += d * d;
    }
    lr *= decay;
    if (hook) hook(x);
    f = ev(x, &g);
    if (cb && !cb(it, x, f)) {
      res.x = std::move(x);
      res.f = f;
      res.iters = it;
      res.n_evals = ev.count;
      res.reason = StopReason::MaxIters;
      return res;
    }
    if (std::sqrt(dn2) < cfg.param_change_tol) {
      res.x = std::move(x);
      res.f = f;
      res.iters = it;
      res.n_evals = ev.count;
      res.reason = StopReason::ParamTol;
      return res;
    }
  }
  res.x = std::move(x);
  res.f = f;
  res.iters = cfg.max_iters;
  res.n_evals = ev.count;
  res.reason = StopReason::MaxIters;
  return res;
}

// Strong Wolfe line search (bracket + zoom with bisection); non-finite trial
// values are treated as "too far".  Returns the accepted step or 0 on
// failure; on success x/f/g hold the accepted point.
double wolfe_search(Eval& ev, const Vec& x0, double f0, const Vec& g0, const Vec& dir,
                    double alpha_init, const OptimizerConfig& cfg, Vec& x, double& f, Vec& g) {
  const double d0 = dot(g0, dir);
  if (d0 >= 0.0) return 0.0;  // not a descent direction
  const std::size_t n = x0.size();
  auto phi = [&](double alpha, double& dphi) {
    for (std::size_t i = 0; i < n; ++i) x[i] = x0[i] + alpha * dir[i];
    double fa;
    try {
      fa = ev(x, &g);
    } catch (const NonFiniteValue&) {
      dphi = 0.0;
      return std::numeric_limits<double>::infinity();
    } catch (const PositiveDefiniteViolation&) {
      dphi = 0.0;
      return std::numeric_limits<double>::infinity();
    } catch (const DomainViolation&) {
      dphi = 0.0;
      return std::numeric_limits<double>::infinity();
    }
    dphi = dot(g, dir);
    return fa;
  };

  double lo = 0.0, f_lo = f0, d_lo = d0;
  double hi = -1.0, f_hi = 0.0;  // hi < 0 means "no upper bracket yet"
  double alpha = alpha_init;
  double f_prev = f0, a_prev = 0.0, d_prev = d0;
  double best_alpha = 0.0, best_f = f0;
  const double c1 = cfg.wolfe_c1, c2 = cfg.wolfe_c2;

  for (int it = 0; it < cfg.max_line_search; ++it) {
    double dphi;
    const double fa = phi(alpha, dphi);
    const bool finite = std::isfinite(fa);
    if (finite && fa < best_f) {
      best_f = fa;
      best_alpha = alpha;
    }
    if (hi < 0.0) {  // bracketing phase
      if (!finite || fa > f0 + c1 * alpha * d0 || (it > 0 && fa >= f_prev)) {
        lo = a_prev;
        f_lo = f_prev;
        d_lo = d_prev;
        hi = alpha;
        f_hi = fa;
      } else if (std::abs(dphi) <= -c2 * d0) {
        f = fa;
        return alpha;
      } else if (dphi >= 0.0) {
        lo = alpha;
        f_lo = fa;
        d_lo = dphi;
        hi = a_prev;
        f_hi = f_prev;
      } else {
        a_prev = alpha;
        f_prev = fa;
        d_prev = dphi;
        alpha *= 2.0;
        continue;
      }
    } else {  // zoom phase
      if (finite && fa <= f0 + c1 * alpha * d0 && fa < f_lo) {
        if (std::abs(dphi) <= -c2 * d0) {
          f = fa;
          return alpha;
        }
        if (dphi * (hi - lo) >= 0.0) {
          hi = lo;
          f_hi = f_lo;
        }
        lo = alpha;
        f_lo = fa;
        d_lo = dphi;
      } else {
        hi = alpha;
        f_hi = fa;
      }
    }
    alpha = 0.5 * (lo + hi);
    if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
  }
  // no Wolfe point found; fall back to the best plain decrease seen
  if (best_alpha > 0.0 && best_f < f0) {
    double dphi;
    const double fa = phi(best_alpha, dphi);
    if (std::isfinite(fa) && fa < f0) {
      f = fa;
      return best_alpha;
    }
  }
  return 0.0;
}

OptimizeResult run_lbfgs(Eval& ev, Vec x, const OptimizerConfig& cfg, const PostStepHook& hook,
                         const IterCallback& cb) {
  OptimizeResult res;
  const std::size_t n = x.size();
  if (hook) hook(x);
  Vec g(n);
  double f = ev(x, &g);
  if (!std::isfinite(f)) throw DomainViolation("objective not finite at the starting point");
  res.f_initial = f;

  std::deque<Vec> S, Y;
  std::deque<double> rho;
  Vec dir(n), x_new(n), g_new(n), q(n);
  Vec alpha_buf(cfg.history);

  for (int it = 1; it <= cfg.max_iters; ++it) {
    const double gn = norm2(g);
    if (gn < cfg.grad_tol) {
      res.reason = StopReason::GradTol;
      res.iters = it - 1;
      res.x = std::move(x);
      res.f = f;
      res.n_evals = ev.count;
      return res;
    }
    // two-loop recursion
    q = g;
    const int mdepth = static_cast<int>(S.size());
    for (int i = mdepth - 1; i >= 0; --i) {
      alpha_buf[i] = rho[i] * dot(S[i], q);
      for (std::size_t k = 0; k < n; ++k) q[k] -= alpha_buf[i] * Y[i][k];
    }
    double gamma = 1.0;
    if (mdepth > 0) gamma = dot(S.back(), Y.back()) / dot(Y.back(), Y.back());
    for (std::size_t k = 0; k < n; ++k) q[k] *= gamma;
    for (int i = 0; i < mdepth; ++i) {
      const double beta = rho[i] * dot(Y[i], q);
      for (std::size_t k = 0; k < n; ++k) q[k] += (alpha_buf[i] - beta) * S[i][k];
    }
    for (std::size_t k = 0; k < n; ++k) dir[k] = -q[k];

    const double alpha_init = mdepth == 0 ? std::min(1.0, 1.0 / std::max(gn, 1e-12)) : 1.0;
    double f_new = f;
    double step = wolfe_search(ev, x, f, g, dir, alpha_init, cfg, x_new, f_new, g_new);
    if (step == 0.0 && mdepth > 0) {
      // curvature memory gone stale (e.g. after projections): restart with
      // plain steepest descent before giving up
      S.clear();
      Y.clear();
      rho.clear();
      for (std::size_t k = 0; k < n; ++k) dir[k] = -g[k];
      step = wolfe_search(ev, x, f, g, dir, std::min(1.0, 1.0 / std::max(gn, 1e-12)), cfg, x_new,
                          f_new, g_new);
    }
    if (step == 0.0) {
      res.reason = StopReason::LineSearchFail;
      res.iters = it - 1;
      res.x = std::move(x);
      res.f = f;
      res.n_evals = ev.count;
      return res;
    }

    if (hook) {
      Vec x_proj = x_new;
      hook(x_proj);
      bool moved = false;
      for (std::size_t k = 0; k < n; ++k)
        if (x_proj[k] != x_new[k]) {
          moved = true;
          break;
        }
      if (moved) {
        // keep the projected point only while it still decreases f; back off
        // toward the previous iterate otherwise
        double f_proj = ev(x_proj, &g_new);
        double shrink = 1.0;
        int tries = 0;
        while (!(std::isfinite(f_proj) && f_proj <= f) && tries++ < 30) {
          shrink *= 0.5;
          for (std::size_t k = 0; k < n; ++k) x_proj[k] = x[k] + shrink * (x_new[k] - x[k]);
          hook(x_proj);
          f_proj = ev(x_proj, &g_new);
        }
        if (!(std::isfinite(f_proj) && f_proj <= f)) {
          // the shrunk displacement is pinned against the constraints; take a
          // projected-gradient step instead
          double t = 1.0 / std::max(gn, 1e-12);
          bool ok = false;
          for (int pg = 0; pg < 40; ++pg) {
            for (std::size_t k = 0; k < n; ++k) x_proj[k] = x[k] - t * g[k];
            hook(x_proj);
            f_proj = ev(x_proj, &g_new);
            double moved2 = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
              const double dk = x_proj[k] - x[k];
              moved2 += dk * dk;
            }
            if (std::isfinite(f_proj) && f_proj < f && moved2 > 0.0) {
              ok = true;
              break;
            }
            t *= 0.5;
          }
          if (!ok) {
            res.reason = StopReason::LineSearchFail;
            res.iters = it - 1;
            res.x = std::move(x);
            res.f = f;
            res.n_evals = ev.count;
            return res;
          }
          S.clear();
          Y.clear();
          rho.clear();
        }
        x_new = std::move(x_proj);
        f_new = f_proj;
      }
    }

    Vec s(n), yv(n);
    double dn2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      s[k] = x_new[k] - x[k];
      yv[k] = g_new[k] - g[k];
      dn2 += s[k] * s[k];
    }
    const double sy = dot(s, yv);
    if (sy > 1e-12 * norm2(s) * norm2(yv)) {
      S.push_back(std::move(s));
      Y.push_back(std::move(yv));
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > cfg.history) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    x = x_new;
    f = f_new;
    g = g_new;
    if (cb && !cb(it, x, f)) {
      res.reason = StopReason::MaxIters;
      res.iters = it;
      res.x = std::move(x);
      res.f = f;
      res.n_evals = ev.count;
      return res;
    }
    if (std::sqrt(dn2) < cfg.param_change_tol) {
      res.reason = StopReason::ParamTol;
      res.iters = it;
      res.x = std::move(x);
      res.f = f;
      res.n_evals = ev.count;
      return res;
    }
  }
  res.reason = StopReason::MaxIters;
  res.iters = cfg.max_iters;
  res.x = std::move(x);
  res.f = f;
  res.n_evals = ev.count;
  return res;
}

OptimizeResult run_gdbb(Eval& ev, Vec x, const OptimizerConfig& cfg, const PostStepHook& hook,
                        const IterCallback& cb) {
  OptimizeResult res;
  const std::size_t n = x.size();
  if (hook) hook(x);
  Vec g(n), g_prev(n), x_prev(n), trial(n), g_trial(n);
  double f = ev(x, &g);
  if (!std::isfinite(f)) throw DomainViolation("objective not finite at the starting point");
  res.f_initial = f;
  double step = cfg.bb_fallback_step;
  bool have_prev = false;

  for (int it = 1; it <= cfg.max_iters; ++it) {
    const double gn = norm2(g);
    if (gn < cfg.grad_tol) {
      res.reason = StopReason::GradTol;
      res.iters = it - 1;
      break;
    }
    if (have_prev) {
      Vec s(n), yv(n);
      for (std::size_t k = 0; k < n; ++k) {
        s[k] = x[k] - x_prev[k];
        yv[k] = g[k] - g_prev[k];
      }
      step = bb_step(s, yv, cfg.bb_fallback_step);
    }
    // monotone safeguard: halve the BB step until the objective decreases
    double shrink = 1.0;
    double f_trial = std::numeric_limits<double>::infinity();
    int tries = 0;
    while (tries++ < 40) {
      for (std::size_t k = 0; k < n; ++k) trial[k] = x[k] - shrink * step * g[k];
      if (hook) hook(trial);
      try {
        f_trial = ev(trial, &g_trial);
      } catch (const PositiveDefiniteViolation&) {
        f_trial = std::numeric_limits<double>::infinity();
      } catch (const DomainViolation&) {
        f_trial = std::numeric_limits<double>::infinity();
      }
      if (std::isfinite(f_trial) && f_trial <= f) break;
      shrink *= 0.5;
    }
    if (!(std::isfinite(f_trial) && f_trial <= f)) {
      res.reason = StopReason::LineSearchFail;
      res.iters = it - 1;
      break;
    }
    x_prev = x;
    g_prev = g;
    double dn2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double d = trial[k] - x[k];
      dn2 += d * d;
    }
    x = trial;
    f = f_trial;
    g = g_trial;
    have_prev = true;
    if (cb && !cb(it, x, f)) {
      res.reason = StopReason::MaxIters;
      res.iters = it;
      break;
    }
    if (std::sqrt(dn2) < cfg.param_change_tol) {
      res.reason = StopReason::ParamTol;
      res.iters = it;
      break;
    }
    if (it == cfg.max_iters) {
      res.reason = StopReason::MaxIters;
      res.iters = it;
    }
  }
  res.x = std::move(x);
  res.f = f;
  res.n_evals = ev.count;
  return res;
}

}  // namespace

OptimizeResult minimize(const Objective& obj, Vec x0, const OptimizerConfig& cfg,
                        const PostStepHook& hook, const IterCallback& cb) {
  cfg.validate();
  Eval ev{obj};
  switch (cfg.kind) {
    case OptKind::Adam: return run_adam(ev, std::move(x0), cfg, hook, cb);
    case OptKind::LBFGS: return run_lbfgs(ev, std::move(x0), cfg, hook, cb);
    case OptKind::GDBB: return run_gdbb(ev, std::move(x0), cfg, hook, cb);
  }
  throw DomainViolation("unknown optimizer kind");
}

}  // namespace evnn
