#pragma once

#include <cmath>
#include <string>

#include "evnn/common.hpp"
#include "evnn/dual.hpp"

namespace evnn {

enum class ActivationKind { Tanh, ReLU, Sigmoid, Softplus, GaussSoftplus, Identity };

std::string to_string(ActivationKind k);
ActivationKind activation_from_string(const std::string& s);

// True for activations admissible inside an input-convex network.
inline bool convex_nondecreasing(ActivationKind k) {
  return k == ActivationKind::ReLU || k == ActivationKind::Softplus ||
         k == ActivationKind::GaussSoftplus;
}

namespace act {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kSqrt2OverPi = 0.7978845608028653559;  // sqrt(2/pi)

// Value together with the derivatives the kernels need.  sigma3 is only
// consumed by the second-derivative channel.
struct Derivs {
  double f, d1, d2, d3;
};

inline double gauss_softplus(double x) {
  // x*(1 + erf(x/sqrt(2))) + sqrt(2/pi)*exp(-x^2/2); smooth convex ramp.
  return x + x * std::erf(x * kInvSqrt2) + kSqrt2OverPi * std::exp(-0.5 * x * x);
}

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

template <typename S>
inline S eval(ActivationKind k, S x) {
  using std::tanh;
  using std::exp;
  using std::erf;
  using std::log;
  switch (k) {
    case ActivationKind::Tanh: return tanh(x);
    case ActivationKind::ReLU: return value_of(x) > 0.0 ? x : S(0.0);
    case ActivationKind::Sigmoid: return S(1.0) / (S(1.0) + exp(S(-2.0) * x));
    case ActivationKind::Softplus: return value_of(x) > 30.0 ? x : log(S(1.0) + exp(x));
    case ActivationKind::GaussSoftplus:
      return x + x * erf(x * S(kInvSqrt2)) + S(kSqrt2OverPi) * exp(S(-0.5) * x * x);
    case ActivationKind::Identity: return x;
  }
  return x;
}

// First derivative in generic scalar arithmetic (Dual-capable); the tape's
// reverse sweep uses this.
template <typename S>
inline S deriv1(ActivationKind k, S x) {
  using std::tanh;
  using std::exp;
  using std::erf;
  switch (k) {
    case ActivationKind::Tanh: {
      S t = tanh(x);
      return S(1.0) - t * t;
    }
    case ActivationKind::ReLU: return S(value_of(x) > 0.0 ? 1.0 : 0.0);
    case ActivationKind::Sigmoid: {
      S s = S(1.0) / (S(1.0) + exp(S(-2.0) * x));
      return S(2.0) * s * (S(1.0) - s);
    }
    case ActivationKind::Softplus: return S(1.0) / (S(1.0) + exp(-x));
    case ActivationKind::GaussSoftplus: return S(1.0) + erf(x * S(kInvSqrt2));
    case ActivationKind::Identity: return S(1.0);
  }
  return S(1.0);
}

inline Derivs derivs(ActivationKind k, double x) {
  switch (k) {
    case ActivationKind::Tanh: {
      double t = std::tanh(x);
      double s = 1.0 - t * t;
      return {t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)};
    }
    case ActivationKind::ReLU: {
      double h = x > 0.0 ? 1.0 : 0.0;
      return {x > 0.0 ? x : 0.0, h, 0.0, 0.0};
    }
    case ActivationKind::Sigmoid: {
      double s = 1.0 / (1.0 + std::exp(-2.0 * x));
      double d1 = 2.0 * s * (1.0 - s);
      double d2 = 2.0 * d1 * (1.0 - 2.0 * s);
      double d3 = 2.0 * (d2 * (1.0 - 2.0 * s) - 2.0 * d1 * d1);
      return {s, d1, d2, d3};
    }
    case ActivationKind::Softplus: {
      double s = 1.0 / (1.0 + std::exp(-x));
      double d2 = s * (1.0 - s);
      return {softplus(x), s, d2, d2 * (1.0 - 2.0 * s)};
    }
    case ActivationKind::GaussSoftplus: {
      double g = std::exp(-0.5 * x * x);
      double d1 = 1.0 + std::erf(x * kInvSqrt2);
      double d2 = kSqrt2OverPi * g;
      return {x * d1 + kSqrt2OverPi * g, d1, d2, -x * d2};
    }
    case ActivationKind::Identity: return {x, 1.0, 0.0, 0.0};
  }
  return {x, 1.0, 0.0, 0.0};
}

}  // namespace act
}  // namespace evnn
