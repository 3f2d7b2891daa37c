#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "evnn/common.hpp"

namespace evnn::testing {

// Central finite differences of a scalar function of a flat vector.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Componentwise relative error with a floor tied to the gradient scale, so
// near-zero components do not dominate.
inline double max_rel_err(const Vec& a, const Vec& b) {
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    scale = std::max(scale, std::max(std::abs(a[i]), std::abs(b[i])));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-3 * std::max(scale, 1e-8)});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline Vec random_vec(int n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace evnn::testing
