#pragma once

#include <cmath>

namespace evnn {

// First-order dual number.  Running the reverse sweep of a tape instantiated
// with Dual scalars yields directional derivatives of the gradient, which is
// how second input derivatives are computed (forward-over-reverse).
struct Dual {
  double v = 0.0;  // value
  double d = 0.0;  // tangent

  Dual() = default;
  Dual(double value) : v(value) {}
  Dual(double value, double tangent) : v(value), d(tangent) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
  double inv = 1.0 / b.v;
  double val = a.v * inv;
  return {val, (a.d - val * b.d) * inv};
}
inline Dual& operator+=(Dual& a, Dual b) { a = a + b; return a; }
inline Dual& operator-=(Dual& a, Dual b) { a = a - b; return a; }
inline Dual& operator*=(Dual& a, Dual b) { a = a * b; return a; }

inline bool operator==(Dual a, Dual b) { return a.v == b.v && a.d == b.d; }

inline Dual tanh(Dual a) {
  double t = std::tanh(a.v);
  return {t, (1.0 - t * t) * a.d};
}
inline Dual exp(Dual a) {
  double e = std::exp(a.v);
  return {e, e * a.d};
}
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual sqrt(Dual a) {
  double s = std::sqrt(a.v);
  return {s, 0.5 * a.d / s};
}
inline Dual pow(Dual a, double p) {
  double f = std::pow(a.v, p);
  return {f, p * std::pow(a.v, p - 1.0) * a.d};
}
inline Dual erf(Dual a) {
  constexpr double two_over_sqrt_pi = 1.1283791670955126;
  return {std::erf(a.v), two_over_sqrt_pi * std::exp(-a.v * a.v) * a.d};
}

inline double value_of(double x) { return x; }
inline double value_of(Dual x) { return x.v; }

}  // namespace evnn
