#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "evnn/activation.hpp"
#include "evnn/common.hpp"
#include "evnn/dual.hpp"

namespace evnn {

// One evaluation trace of a scalar computation.  Nodes are appended in
// evaluation order, so the vector itself is a valid topological order and a
// single reverse sweep visits every node exactly once.
//
// The scalar type is a template parameter: Tape<double> is the workhorse,
// Tape<Dual> runs the same forward+reverse program in dual arithmetic, which
// yields directional derivatives of gradients (second derivatives).
enum class Op : std::uint8_t {
  Const, Leaf, Add, Sub, Mul, Div, Neg, Scale, Shift,
  Act, Exp, Log, PowC, Sqrt, Erf, LogDetSPD,
};

template <typename S>
class Tape;

template <typename S>
struct TVar {
  Tape<S>* tape = nullptr;
  std::int32_t id = -1;
};

template <typename S>
class Tape {
 public:
  struct Node {
    Op op;
    std::int32_t a = -1;
    std::int32_t b = -1;
    double aux = 0.0;  // scale/shift constant, pow exponent, activation kind, logdet dim
  };

  void clear() {
    nodes_.clear();
    vals_.clear();
    extra_.clear();
  }

  std::size_t size() const { return nodes_.size(); }
  S value(std::int32_t id) const { return vals_[id]; }

  TVar<S> leaf(S v) { return {this, push(Op::Leaf, -1, -1, 0.0, v)}; }
  TVar<S> constant(S v) { return {this, push(Op::Const, -1, -1, 0.0, v)}; }

  TVar<S> add(TVar<S> x, TVar<S> y) { return {this, push(Op::Add, x.id, y.id, 0.0, vals_[x.id] + vals_[y.id])}; }
  TVar<S> sub(TVar<S> x, TVar<S> y) { return {this, push(Op::Sub, x.id, y.id, 0.0, vals_[x.id] - vals_[y.id])}; }
  TVar<S> mul(TVar<S> x, TVar<S> y) { return {this, push(Op::Mul, x.id, y.id, 0.0, vals_[x.id] * vals_[y.id])}; }
  TVar<S> div(TVar<S> x, TVar<S> y) { return {this, push(Op::Div, x.id, y.id, 0.0, vals_[x.id] / vals_[y.id])}; }
  TVar<S> neg(TVar<S> x) { return {this, push(Op::Neg, x.id, -1, 0.0, -vals_[x.id])}; }
  TVar<S> scale(TVar<S> x, double c) { return {this, push(Op::Scale, x.id, -1, c, vals_[x.id] * S(c))}; }
  TVar<S> shift(TVar<S> x, double c) { return {this, push(Op::Shift, x.id, -1, c, vals_[x.id] + S(c))}; }

  TVar<S> activation(ActivationKind k, TVar<S> x) {
    return {this, push(Op::Act, x.id, -1, static_cast<double>(static_cast<int>(k)), act::eval<S>(k, vals_[x.id]))};
  }
  TVar<S> exp_(TVar<S> x) {
    using std::exp;
    return {this, push(Op::Exp, x.id, -1, 0.0, exp(vals_[x.id]))};
  }
  TVar<S> log_(TVar<S> x) {
    using std::log;
    if (value_of(vals_[x.id]) <= 0.0) throw DomainViolation("log of non-positive value");
    return {this, push(Op::Log, x.id, -1, 0.0, log(vals_[x.id]))};
  }
  TVar<S> pow_(TVar<S> x, double p) {
    using std::pow;
    return {this, push(Op::PowC, x.id, -1, p, pow(vals_[x.id], p))};
  }
  TVar<S> sqrt_(TVar<S> x) {
    using std::sqrt;
    return {this, push(Op::Sqrt, x.id, -1, 0.0, sqrt(vals_[x.id]))};
  }
  TVar<S> erf_(TVar<S> x) {
    using std::erf;
    return {this, push(Op::Erf, x.id, -1, 0.0, erf(vals_[x.id]))};
  }

  // log det of a symmetric positive definite m x m matrix given entry-wise.
  // The entries are symmetrized first, so the reverse sweep (which
  // distributes w * inv(M) to all m^2 entries) is consistent with the value.
  TVar<S> logdet_spd(std::span<const TVar<S>> entries, int m) {
    std::int32_t off = static_cast<std::int32_t>(extra_.size());
    for (auto& e : entries) extra_.push_back(e.id);
    S mat[16];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        mat[i * m + j] =
            S(0.5) * (vals_[extra_[off + i * m + j]] + vals_[extra_[off + j * m + i]]);
    S chol[16];
    cholesky(mat, chol, m);
    S ld = S(0.0);
    using std::log;
    for (int i = 0; i < m; ++i) ld += log(chol[i * m + i]);
    ld = S(2.0) * ld;
    return {this, push(Op::LogDetSPD, off, -1, static_cast<double>(m), ld)};
  }

  // Reverse sweep from `root`; returns the adjoints of the requested nodes.
  std::vector<S> gradient(std::int32_t root, std::span<const std::int32_t> wrt) const {
    std::vector<S> adj(nodes_.size(), S(0.0));
    adj[root] = S(1.0);
    for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0; --i) {
      const Node& n = nodes_[i];
      const S w = adj[i];
      if (is_zero(w)) continue;
      switch (n.op) {
        case Op::Const:
        case Op::Leaf: break;
        case Op::Add: adj[n.a] += w; adj[n.b] += w; break;
        case Op::Sub: adj[n.a] += w; adj[n.b] -= w; break;
        case Op::Mul: adj[n.a] += w * vals_[n.b]; adj[n.b] += w * vals_[n.a]; break;
        case Op::Div: {
          S inv_b = S(1.0) / vals_[n.b];
          adj[n.a] += w * inv_b;
          adj[n.b] -= w * vals_[i] * inv_b;
          break;
        }
        case Op::Neg: adj[n.a] -= w; break;
        case Op::Scale: adj[n.a] += w * S(n.aux); break;
        case Op::Shift: adj[n.a] += w; break;
        case Op::Act:
          adj[n.a] += w * act::deriv1<S>(static_cast<ActivationKind>(static_cast<int>(n.aux)), vals_[n.a]);
          break;
        case Op::Exp: adj[n.a] += w * vals_[i]; break;
        case Op::Log: adj[n.a] += w / vals_[n.a]; break;
        case Op::PowC: {
          using std::pow;
          adj[n.a] += w * S(n.aux) * pow(vals_[n.a], n.aux - 1.0);
          break;
        }
        case Op::Sqrt: adj[n.a] += w * S(0.5) / vals_[i]; break;
        case Op::Erf: {
          using std::exp;
          constexpr double two_over_sqrt_pi = 1.1283791670955126;
          adj[n.a] += w * S(two_over_sqrt_pi) * exp(-vals_[n.a] * vals_[n.a]);
          break;
        }
        case Op::LogDetSPD: {
          int m = static_cast<int>(n.aux);
          S mat[16], chol[16], inv[16];
          for (int k = 0; k < m * m; ++k) mat[k] = vals_[extra_[n.a + k]];
          cholesky(mat, chol, m);
          spd_inverse(chol, inv, m);
          for (int k = 0; k < m * m; ++k) adj[extra_[n.a + k]] += w * inv[k];
          break;
        }
      }
    }
    std::vector<S> out(wrt.size());
    for (std::size_t k = 0; k < wrt.size(); ++k) out[k] = adj[wrt[k]];
    return out;
  }

 private:
  static bool is_zero(double w) { return w == 0.0; }
  static bool is_zero(Dual w) { return w.v == 0.0 && w.d == 0.0; }

  std::int32_t push(Op op, std::int32_t a, std::int32_t b, double aux, S val) {
    if (!std::isfinite(value_of(val))) throw NonFiniteValue(static_cast<long>(nodes_.size()));
    nodes_.push_back(Node{op, a, b, aux});
    vals_.push_back(val);
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }

  static void cholesky(const S* mat, S* chol, int m) {
    using std::sqrt;
    for (int i = 0; i < m * m; ++i) chol[i] = S(0.0);
    for (int j = 0; j < m; ++j) {
      S sum = mat[j * m + j];
      for (int k = 0; k < j; ++k) sum -= chol[j * m + k] * chol[j * m + k];
      if (value_of(sum) <= 0.0) throw PositiveDefiniteViolation();
      chol[j * m + j] = sqrt(sum);
      for (int i = j + 1; i < m; ++i) {
        S s = mat[i * m + j];
        for (int k = 0; k < j; ++k) s -= chol[i * m + k] * chol[j * m + k];
        chol[i * m + j] = s / chol[j * m + j];
      }
    }
  }

  // inv = (L L^T)^{-1} via forward/back substitution on the identity.
  static void spd_inverse(const S* chol, S* inv, int m) {
    S col[4];
    for (int c = 0; c < m; ++c) {
      // solve L y = e_c
      for (int i = 0; i < m; ++i) {
        S s = (i == c) ? S(1.0) : S(0.0);
        for (int k = 0; k < i; ++k) s -= chol[i * m + k] * col[k];
        col[i] = s / chol[i * m + i];
      }
      // solve L^T x = y
      for (int i = m - 1; i >= 0; --i) {
        S s = col[i];
        for (int k = i + 1; k < m; ++k) s -= chol[k * m + i] * col[k];
        col[i] = s / chol[i * m + i];
      }
      for (int i = 0; i < m; ++i) inv[i * m + c] = col[i];
    }
  }

  std::vector<Node> nodes_;
  std::vector<S> vals_;
  std::vector<std::int32_t> extra_;
};

// Convenience operators so closures read like plain arithmetic.
template <typename S> TVar<S> operator+(TVar<S> x, TVar<S> y) { return x.tape->add(x, y); }
template <typename S> TVar<S> operator-(TVar<S> x, TVar<S> y) { return x.tape->sub(x, y); }
template <typename S> TVar<S> operator*(TVar<S> x, TVar<S> y) { return x.tape->mul(x, y); }
template <typename S> TVar<S> operator/(TVar<S> x, TVar<S> y) { return x.tape->div(x, y); }
template <typename S> TVar<S> operator-(TVar<S> x) { return x.tape->neg(x); }
template <typename S> TVar<S> operator*(double c, TVar<S> x) { return x.tape->scale(x, c); }
template <typename S> TVar<S> operator*(TVar<S> x, double c) { return x.tape->scale(x, c); }
template <typename S> TVar<S> operator+(TVar<S> x, double c) { return x.tape->shift(x, c); }
template <typename S> TVar<S> operator+(double c, TVar<S> x) { return x.tape->shift(x, c); }
template <typename S> TVar<S> operator-(TVar<S> x, double c) { return x.tape->shift(x, -c); }

struct GradReport {
  double value = 0.0;
  Vec grad;
};

}  // namespace evnn
