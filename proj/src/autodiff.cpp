#include "evnn/autodiff.hpp"

#include <cmath>

namespace evnn {

namespace {

// Activation derivatives as tape expressions, so that parameter gradients of
// the input-gradient channel fall out of the ordinary reverse sweep.
template <typename S>
TVar<S> act_d1(Tape<S>& t, ActivationKind k, TVar<S> u) {
  switch (k) {
    case ActivationKind::Tanh: {
      auto th = t.activation(ActivationKind::Tanh, u);
      return 1.0 + t.neg(th * th);
    }
    case ActivationKind::ReLU:
      return t.constant(S(value_of(t.value(u.id)) > 0.0 ? 1.0 : 0.0));
    case ActivationKind::Sigmoid: {
      auto s = t.activation(ActivationKind::Sigmoid, u);
      return 2.0 * (s * (1.0 + t.neg(s)));
    }
    case ActivationKind::Softplus: {
      auto e = t.exp_(t.neg(u));
      return t.div(t.constant(S(1.0)), e + 1.0);
    }
    case ActivationKind::GaussSoftplus:
      return 1.0 + t.erf_(t.scale(u, act::kInvSqrt2));
    case ActivationKind::Identity:
      return t.constant(S(1.0));
  }
  return t.constant(S(1.0));
}

template <typename S>
TVar<S> act_d2(Tape<S>& t, ActivationKind k, TVar<S> u) {
  switch (k) {
    case ActivationKind::Tanh: {
      auto th = t.activation(ActivationKind::Tanh, u);
      auto s = 1.0 + t.neg(th * th);
      return t.scale(th * s, -2.0);
    }
    case ActivationKind::ReLU:
      return t.constant(S(0.0));
    case ActivationKind::Sigmoid: {
      auto s = t.activation(ActivationKind::Sigmoid, u);
      auto d1 = 2.0 * (s * (1.0 + t.neg(s)));
      return 2.0 * (d1 * (1.0 + t.neg(t.scale(s, 2.0))));
    }
    case ActivationKind::Softplus: {
      auto e = t.exp_(t.neg(u));
      auto s = t.div(t.constant(S(1.0)), e + 1.0);
      return s * (1.0 + t.neg(s));
    }
    case ActivationKind::GaussSoftplus:
      return t.scale(t.exp_(t.scale(u * u, -0.5)), act::kSqrt2OverPi);
    case ActivationKind::Identity:
      return t.constant(S(0.0));
  }
  return t.constant(S(0.0));
}

template <typename S>
struct TView {
  const ParamVector& layout;
  std::span<const TVar<S>> theta;
  TVar<S> operator()(const std::string& name, int r, int c) const {
    const auto& e = layout.entry(name);
    return theta[e.offset + r * e.cols + c];
  }
  TVar<S> operator()(const std::string& name, int i) const {
    const auto& e = layout.entry(name);
    return theta[e.offset + i];
  }
};

// Generic value-only forward with both parameters and inputs taped.
template <typename S>
TVar<S> value_forward(Tape<S>& t, const NetworkSpec& spec, const ParamVector& layout,
                      std::span<const TVar<S>> theta, std::span<const TVar<S>> x) {
  TView<S> P{layout, theta};
  const int d = input_dim(spec);
  if (const auto* m = std::get_if<MLPSpec>(&spec)) {
    std::vector<TVar<S>> z(x.begin(), x.end()), nz;
    int in = d;
    for (std::size_t l = 0; l < m->hidden.size(); ++l) {
      const std::string W = "W" + std::to_string(l + 1), B = "b" + std::to_string(l + 1);
      nz.clear();
      for (int r = 0; r < m->hidden[l]; ++r) {
        TVar<S> s = P(B, r);
        for (int c = 0; c < in; ++c) s = s + P(W, r, c) * z[c];
        nz.push_back(t.activation(m->act, s));
      }
      z = nz;
      in = m->hidden[l];
    }
    TVar<S> y = P("b_out", 0);
    for (int c = 0; c < in; ++c) y = y + P("w_out", 0, c) * z[c];
    return y;
  }
  if (const auto* r = std::get_if<ResNetSpec>(&spec)) {
    const int N = r->width;
    std::vector<TVar<S>> z, h, nh;
    for (int i = 0; i < N; ++i) {
      TVar<S> s = P("V", i, 0) * x[0];
      for (int c = 1; c < d; ++c) s = s + P("V", i, c) * x[c];
      z.push_back(s);
    }
    for (int k = 1; k <= r->blocks; ++k) {
      h = z;
      int in = N;
      for (int l = 1; l <= r->layers_per_block; ++l) {
        const std::string W = "W" + std::to_string(k) + "_" + std::to_string(l);
        const std::string B = "b" + std::to_string(k) + "_" + std::to_string(l);
        nh.clear();
        for (int rr = 0; rr < r->inner_width; ++rr) {
          TVar<S> s = P(B, rr);
          for (int c = 0; c < in; ++c) s = s + P(W, rr, c) * h[c];
          nh.push_back(t.activation(r->act, s));
        }
        h = nh;
        in = r->inner_width;
      }
      const std::string A = "alpha" + std::to_string(k);
      for (int i = 0; i < N; ++i)
        z[i] = t.activation(r->skip_act, P(A, i) * h[i] + z[i]);
    }
    TVar<S> y = P("gamma0", 0);
    for (int c = 0; c < N; ++c) y = y + P("gamma", 0, c) * z[c];
    return y;
  }
  if (const auto* c = std::get_if<ICNNSpec>(&spec)) {
    const int wdt = c->width;
    std::vector<TVar<S>> z, nz;
    for (int rr = 0; rr < wdt; ++rr) {
      TVar<S> s = P("b0", rr);
      for (int j = 0; j < d; ++j) s = s + P("A0", rr, j) * x[j];
      z.push_back(t.activation(c->act, s));
    }
    for (int l = 1; l < c->layers; ++l) {
      const std::string W = "W" + std::to_string(l), A = "A" + std::to_string(l),
                        B = "b" + std::to_string(l);
      nz.clear();
      for (int rr = 0; rr < wdt; ++rr) {
        TVar<S> s = P(B, rr);
        for (int cc = 0; cc < wdt; ++cc) s = s + P(W, rr, cc) * z[cc];
        for (int j = 0; j < d; ++j) s = s + P(A, rr, j) * x[j];
        nz.push_back(t.activation(c->act, s));
      }
      z = nz;
    }
    TVar<S> y = P("b_out", 0);
    for (int cc = 0; cc < wdt; ++cc) y = y + P("w_out", 0, cc) * z[cc];
    for (int j = 0; j < d; ++j) y = y + P("a_out", 0, j) * x[j];
    for (int j = 0; j < d; ++j) y = y + t.scale(x[j] * x[j], 0.5 * c->beta);
    return y;
  }
  throw DimensionMismatch("taped value: network output is not scalar");
}

}  // namespace

template <typename S>
TVar<S> tape_net_value(Tape<S>& tape, const NetworkSpec& spec, std::span<const TVar<S>> theta,
                       std::span<const double> x) {
  ParamVector layout = make_layout(spec);
  std::vector<TVar<S>> xt;
  for (double xi : x) xt.push_back(tape.constant(S(xi)));
  return value_forward(tape, spec, layout, theta, std::span<const TVar<S>>(xt));
}

template <typename S>
TVar<S> tape_net_value_at(Tape<S>& tape, const Network& net, std::span<const TVar<S>> x) {
  std::vector<TVar<S>> th;
  th.reserve(net.params.values.size());
  for (double v : net.params.values) th.push_back(tape.constant(S(v)));
  return value_forward(tape, net.spec, net.params, std::span<const TVar<S>>(th), x);
}

template <typename S>
TapedChannels<S> tape_net_channels(Tape<S>& tape, const NetworkSpec& spec,
                                   std::span<const TVar<S>> theta, std::span<const double> x,
                                   bool need_hess) {
  ParamVector layout = make_layout(spec);
  TView<S> P{layout, theta};
  const int d = input_dim(spec);
  auto& t = tape;

  // channel state: z (m), G (m x d), H (m x d*d row-major)
  std::vector<TVar<S>> z;
  std::vector<std::vector<TVar<S>>> G, H;
  auto zero = [&t]() { return t.constant(S(0.0)); };
  auto one = [&t]() { return t.constant(S(1.0)); };

  auto apply_act = [&](ActivationKind k, std::vector<TVar<S>>& u, std::vector<std::vector<TVar<S>>>& gu,
                       std::vector<std::vector<TVar<S>>>& hu) {
    const int m = static_cast<int>(u.size());
    for (int r = 0; r < m; ++r) {
      auto d1 = act_d1(t, k, u[r]);
      if (need_hess) {
        auto d2 = act_d2(t, k, u[r]);
        for (int a = 0; a < d; ++a)
          for (int b = 0; b < d; ++b)
            hu[r][a * d + b] = d1 * hu[r][a * d + b] + d2 * (gu[r][a] * gu[r][b]);
      }
      for (int j = 0; j < d; ++j) gu[r][j] = d1 * gu[r][j];
      u[r] = t.activation(k, u[r]);
    }
  };

  if (const auto* m = std::get_if<MLPSpec>(&spec)) {
    const int m0 = m->input_dim;
    z.clear();
    G.assign(m0, std::vector<TVar<S>>(d));
    H.assign(m0, std::vector<TVar<S>>(d * d));
    for (int r = 0; r < m0; ++r) {
      z.push_back(t.constant(S(x[r])));
      for (int j = 0; j < d; ++j) G[r][j] = r == j ? one() : zero();
      for (int s = 0; s < d * d; ++s) H[r][s] = zero();
    }
    int in = m0;
    for (std::size_t l = 0; l < m->hidden.size(); ++l) {
      const std::string W = "W" + std::to_string(l + 1), B = "b" + std::to_string(l + 1);
      const int mo = m->hidden[l];
      std::vector<TVar<S>> u(mo);
      std::vector<std::vector<TVar<S>>> gu(mo, std::vector<TVar<S>>(d)),
          hu(mo, std::vector<TVar<S>>(d * d));
      for (int r = 0; r < mo; ++r) {
        u[r] = P(B, r);
        for (int c = 0; c < in; ++c) u[r] = u[r] + P(W, r, c) * z[c];
        for (int j = 0; j < d; ++j) {
          gu[r][j] = P(W, r, 0) * G[0][j];
          for (int c = 1; c < in; ++c) gu[r][j] = gu[r][j] + P(W, r, c) * G[c][j];
        }
        if (need_hess)
          for (int s = 0; s < d * d; ++s) {
            hu[r][s] = P(W, r, 0) * H[0][s];
            for (int c = 1; c < in; ++c) hu[r][s] = hu[r][s] + P(W, r, c) * H[c][s];
          }
      }
      apply_act(m->act, u, gu, hu);
      z = u;
      G = gu;
      H = hu;
      in = mo;
    }
    TapedChannels<S> out;
    out.value = P("b_out", 0);
    out.grad.assign(d, zero());
    if (need_hess) out.hess.assign(d * d, zero());
    for (int c = 0; c < in; ++c) {
      auto wv = P("w_out", 0, c);
      out.value = out.value + wv * z[c];
      for (int j = 0; j < d; ++j) out.grad[j] = out.grad[j] + wv * G[c][j];
      if (need_hess)
        for (int s = 0; s < d * d; ++s) out.hess[s] = out.hess[s] + wv * H[c][s];
    }
    return out;
  }

  if (const auto* rn = std::get_if<ResNetSpec>(&spec)) {
    const int N = rn->width;
    z.assign(N, zero());
    G.assign(N, std::vector<TVar<S>>(d));
    H.assign(N, std::vector<TVar<S>>(d * d));
    for (int r = 0; r < N; ++r) {
      z[r] = P("V", r, 0) * t.constant(S(x[0]));
      for (int c = 1; c < d; ++c) z[r] = z[r] + P("V", r, c) * t.constant(S(x[c]));
      for (int j = 0; j < d; ++j) G[r][j] = P("V", r, j);
      for (int s = 0; s < d * d; ++s) H[r][s] = zero();
    }
    for (int k = 1; k <= rn->blocks; ++k) {
      auto zh = z;
      auto Gh = G;
      auto Hh = H;
      int in = N;
      for (int l = 1; l <= rn->layers_per_block; ++l) {
        const std::string W = "W" + std::to_string(k) + "_" + std::to_string(l);
        const std::string B = "b" + std::to_string(k) + "_" + std::to_string(l);
        const int mo = rn->inner_width;
        std::vector<TVar<S>> u(mo);
        std::vector<std::vector<TVar<S>>> gu(mo, std::vector<TVar<S>>(d)),
            hu(mo, std::vector<TVar<S>>(d * d));
        for (int r = 0; r < mo; ++r) {
          u[r] = P(B, r);
          for (int c = 0; c < in; ++c) u[r] = u[r] + P(W, r, c) * zh[c];
          for (int j = 0; j < d; ++j) {
            gu[r][j] = P(W, r, 0) * Gh[0][j];
            for (int c = 1; c < in; ++c) gu[r][j] = gu[r][j] + P(W, r, c) * Gh[c][j];
          }
          if (need_hess)
            for (int s = 0; s < d * d; ++s) {
              hu[r][s] = P(W, r, 0) * Hh[0][s];
              for (int c = 1; c < in; ++c) hu[r][s] = hu[r][s] + P(W, r, c) * Hh[c][s];
            }
        }
        apply_act(rn->act, u, gu, hu);
        zh = u;
        Gh = gu;
        Hh = hu;
        in = mo;
      }
      const std::string A = "alpha" + std::to_string(k);
      std::vector<TVar<S>> p(N);
      std::vector<std::vector<TVar<S>>> gp(N, std::vector<TVar<S>>(d)),
          hp(N, std::vector<TVar<S>>(d * d));
      for (int r = 0; r < N; ++r) {
        p[r] = P(A, r) * zh[r] + z[r];
        for (int j = 0; j < d; ++j) gp[r][j] = P(A, r) * Gh[r][j] + G[r][j];
        if (need_hess)
          for (int s = 0; s < d * d; ++s) hp[r][s] = P(A, r) * Hh[r][s] + H[r][s];
      }
      if (rn->skip_act != ActivationKind::Identity) apply_act(rn->skip_act, p, gp, hp);
      z = p;
      G = gp;
      H = hp;
    }
    TapedChannels<S> out;
    out.value = P("gamma0", 0);
    out.grad.assign(d, zero());
    if (need_hess) out.hess.assign(d * d, zero());
    for (int c = 0; c < N; ++c) {
      auto wv = P("gamma", 0, c);
      out.value = out.value + wv * z[c];
      for (int j = 0; j < d; ++j) out.grad[j] = out.grad[j] + wv * G[c][j];
      if (need_hess)
        for (int s = 0; s < d * d; ++s) out.hess[s] = out.hess[s] + wv * H[c][s];
    }
    return out;
  }

  if (const auto* ic = std::get_if<ICNNSpec>(&spec)) {
    const int wdt = ic->width;
    std::vector<TVar<S>> u(wdt);
    std::vector<std::vector<TVar<S>>> gu(wdt, std::vector<TVar<S>>(d)),
        hu(wdt, std::vector<TVar<S>>(d * d));
    for (int r = 0; r < wdt; ++r) {
      u[r] = P("b0", r);
      for (int j = 0; j < d; ++j) u[r] = u[r] + P("A0", r, j) * t.constant(S(x[j]));
      for (int j = 0; j < d; ++j) gu[r][j] = P("A0", r, j);
      for (int s = 0; s < d * d; ++s) hu[r][s] = zero();
    }
    apply_act(ic->act, u, gu, hu);
    z = u;
    G = gu;
    H = hu;
    for (int l = 1; l < ic->layers; ++l) {
      const std::string W = "W" + std::to_string(l), A = "A" + std::to_string(l),
                        B = "b" + std::to_string(l);
      std::vector<TVar<S>> un(wdt);
      std::vector<std::vector<TVar<S>>> gn(wdt, std::vector<TVar<S>>(d)),
          hn(wdt, std::vector<TVar<S>>(d * d));
      for (int r = 0; r < wdt; ++r) {
        un[r] = P(B, r);
        for (int c = 0; c < wdt; ++c) un[r] = un[r] + P(W, r, c) * z[c];
        for (int j = 0; j < d; ++j) un[r] = un[r] + P(A, r, j) * t.constant(S(x[j]));
        for (int j = 0; j < d; ++j) {
          gn[r][j] = P(A, r, j);
          for (int c = 0; c < wdt; ++c) gn[r][j] = gn[r][j] + P(W, r, c) * G[c][j];
        }
        if (need_hess)
          for (int s = 0; s < d * d; ++s) {
            hn[r][s] = P(W, r, 0) * H[0][s];
            for (int c = 1; c < wdt; ++c) hn[r][s] = hn[r][s] + P(W, r, c) * H[c][s];
          }
      }
      apply_act(ic->act, un, gn, hn);
      z = un;
      G = gn;
      H = hn;
    }
    TapedChannels<S> out;
    out.value = P("b_out", 0);
    out.grad.assign(d, zero());
    if (need_hess) out.hess.assign(d * d, zero());
    for (int c = 0; c < wdt; ++c) {
      auto wv = P("w_out", 0, c);
      out.value = out.value + wv * z[c];
      for (int j = 0; j < d; ++j) out.grad[j] = out.grad[j] + wv * G[c][j];
      if (need_hess)
        for (int s = 0; s < d * d; ++s) out.hess[s] = out.hess[s] + wv * H[c][s];
    }
    for (int j = 0; j < d; ++j) {
      auto xj = t.constant(S(x[j]));
      out.value = out.value + P("a_out", 0, j) * xj + t.scale(xj * xj, 0.5 * ic->beta);
      out.grad[j] = out.grad[j] + P("a_out", 0, j) + t.constant(S(ic->beta * x[j]));
      if (need_hess) out.hess[j * d + j] = out.hess[j * d + j] + ic->beta;
    }
    return out;
  }

  throw DimensionMismatch("tape_net_channels: unsupported network kind");
}

template <typename S>
TapedFlow<S> tape_planar_apply(Tape<S>& tape, const PlanarFlowSpec& spec,
                               std::span<const TVar<S>> theta, std::span<const double> x) {
  ParamVector layout = make_layout(spec);
  TView<S> P{layout, theta};
  auto& t = tape;
  const int d = spec.input_dim;
  TapedFlow<S> out;
  for (int j = 0; j < d; ++j) out.y.push_back(t.constant(S(x[j])));
  out.logdet = t.constant(S(0.0));
  for (int k = 0; k < spec.layers; ++k) {
    const std::string W = "w" + std::to_string(k), U = "u" + std::to_string(k),
                      B = "b" + std::to_string(k);
    auto wu = P(W, 0) * P(U, 0);
    auto ww = P(W, 0) * P(W, 0);
    for (int j = 1; j < d; ++j) {
      wu = wu + P(W, j) * P(U, j);
      ww = ww + P(W, j) * P(W, j);
    }
    // corr = relu(-0.99 - w.u)/|w|^2; keeps uh.w >= -0.99
    std::vector<TVar<S>> uh(d);
    if (value_of(t.value(ww.id)) > 0.0) {
      auto def = t.activation(ActivationKind::ReLU, t.neg(wu) - 0.99);
      auto corr = t.div(def, ww);
      for (int j = 0; j < d; ++j) uh[j] = P(U, j) + corr * P(W, j);
    } else {
      for (int j = 0; j < d; ++j) uh[j] = P(U, j);
    }
    auto s = P(B, 0);
    for (int j = 0; j < d; ++j) s = s + P(W, j) * out.y[j];
    auto th = t.activation(ActivationKind::Tanh, s);
    auto hp = 1.0 + t.neg(th * th);
    auto uw = uh[0] * P(W, 0);
    for (int j = 1; j < d; ++j) uw = uw + uh[j] * P(W, j);
    auto jac = 1.0 + hp * uw;
    out.logdet = out.logdet + t.log_(jac);
    for (int j = 0; j < d; ++j) out.y[j] = out.y[j] + uh[j] * th;
  }
  return out;
}

GradReport grad_params(const Network& net, const ScalarClosure<double>& loss) {
  Tape<double> tape;
  std::vector<TVar<double>> theta;
  std::vector<std::int32_t> ids;
  theta.reserve(net.params.values.size());
  for (double v : net.params.values) {
    theta.push_back(tape.leaf(v));
    ids.push_back(theta.back().id);
  }
  TVar<double> root = loss(tape, theta);
  GradReport rep;
  rep.value = tape.value(root.id);
  rep.grad = tape.gradient(root.id, ids);
  return rep;
}

Vec grad_input(const Network& net, std::span<const double> x) {
  if (static_cast<int>(x.size()) != input_dim(net.spec))
    throw DimensionMismatch("grad_input: point dimension mismatch");
  Tape<double> tape;
  std::vector<TVar<double>> xt;
  std::vector<std::int32_t> ids;
  for (double xi : x) {
    xt.push_back(tape.leaf(xi));
    ids.push_back(xt.back().id);
  }
  auto y = tape_net_value_at<double>(tape, net, xt);
  return tape.gradient(y.id, ids);
}

Vec hessian_input(const Network& net, std::span<const double> x) {
  const int d = input_dim(net.spec);
  if (static_cast<int>(x.size()) != d)
    throw DimensionMismatch("hessian_input: point dimension mismatch");
  Vec H(d * d, 0.0);
  for (int j = 0; j < d; ++j) {
    Tape<Dual> tape;
    std::vector<TVar<Dual>> xt;
    std::vector<std::int32_t> ids;
    for (int k = 0; k < d; ++k) {
      xt.push_back(tape.leaf(Dual(x[k], k == j ? 1.0 : 0.0)));
      ids.push_back(xt.back().id);
    }
    auto y = tape_net_value_at<Dual>(tape, net, xt);
    auto g = tape.gradient(y.id, ids);
    for (int k = 0; k < d; ++k) H[j * d + k] = g[k].d;
  }
  // symmetrize
  for (int j = 0; j < d; ++j)
    for (int k = j + 1; k < d; ++k) {
      double v = 0.5 * (H[j * d + k] + H[k * d + j]);
      H[j * d + k] = v;
      H[k * d + j] = v;
    }
  for (auto v : H)
    if (!std::isfinite(v)) throw NonFiniteValue(-1, "non-finite Hessian entry");
  return H;
}

// explicit instantiations
template TVar<double> tape_net_value<double>(Tape<double>&, const NetworkSpec&,
                                             std::span<const TVar<double>>,
                                             std::span<const double>);
template TVar<Dual> tape_net_value<Dual>(Tape<Dual>&, const NetworkSpec&,
                                         std::span<const TVar<Dual>>, std::span<const double>);
template TVar<double> tape_net_value_at<double>(Tape<double>&, const Network&,
                                                std::span<const TVar<double>>);
template TVar<Dual> tape_net_value_at<Dual>(Tape<Dual>&, const Network&,
                                            std::span<const TVar<Dual>>);
template TapedChannels<double> tape_net_channels<double>(Tape<double>&, const NetworkSpec&,
                                                         std::span<const TVar<double>>,
                                                         std::span<const double>, bool);
template TapedChannels<Dual> tape_net_channels<Dual>(Tape<Dual>&, const NetworkSpec&,
                                                     std::span<const TVar<Dual>>,
                                                     std::span<const double>, bool);
template TapedFlow<double> tape_planar_apply<double>(Tape<double>&, const PlanarFlowSpec&,
                                                     std::span<const TVar<double>>,
                                                     std::span<const double>);
template TapedFlow<Dual> tape_planar_apply<Dual>(Tape<Dual>&, const PlanarFlowSpec&,
                                                 std::span<const TVar<Dual>>,
                                                 std::span<const double>);

}  // namespace evnn
