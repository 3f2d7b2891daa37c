#include "evnn/network.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <span>
#include <sstream>

#include <json.hpp>

namespace evnn {

using nlohmann::json;

std::string to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::Sigmoid: return "sigmoid";
    case ActivationKind::Softplus: return "softplus";
    case ActivationKind::GaussSoftplus: return "gauss_softplus";
    case ActivationKind::Identity: return "identity";
  }
  return "tanh";
}

ActivationKind activation_from_string(const std::string& s) {
  if (s == "tanh") return ActivationKind::Tanh;
  if (s == "relu") return ActivationKind::ReLU;
  if (s == "sigmoid") return ActivationKind::Sigmoid;
  if (s == "softplus") return ActivationKind::Softplus;
  if (s == "gauss_softplus") return ActivationKind::GaussSoftplus;
  if (s == "identity") return ActivationKind::Identity;
  throw DomainViolation("unknown activation: " + s);
}

const LayoutEntry& ParamVector::entry(const std::string& name) const {
  for (const auto& e : layout)
    if (e.name == name) return e;
  throw DomainViolation("no layout entry named " + name);
}

int input_dim(const NetworkSpec& spec) {
  return std::visit([](const auto& s) { return s.input_dim; }, spec);
}

bool is_scalar_output(const NetworkSpec& spec) {
  return !std::holds_alternative<PlanarFlowSpec>(spec);
}

namespace {

void add_entry(ParamVector& pv, const std::string& name, int rows, int cols) {
  int off = pv.size();
  pv.layout.push_back({name, off, rows, cols});
  pv.values.resize(off + rows * cols, 0.0);
}

void check_spec(const NetworkSpec& spec) {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if (s.input_dim <= 0) throw DomainViolation("input_dim must be positive");
        if constexpr (std::is_same_v<T, MLPSpec>) {
          if (s.hidden.empty()) throw DomainViolation("MLP needs at least one hidden layer");
          for (int h : s.hidden)
            if (h <= 0) throw DomainViolation("zero-width layer rejected");
        } else if constexpr (std::is_same_v<T, ResNetSpec>) {
          if (s.blocks <= 0 || s.layers_per_block <= 0 || s.width <= 0 || s.inner_width <= 0)
            throw DomainViolation("zero-width layer rejected");
          if (s.inner_width != s.width)
            throw DomainViolation("ResNet inner width must match state width");
        } else if constexpr (std::is_same_v<T, ICNNSpec>) {
          if (s.layers <= 0 || s.width <= 0) throw DomainViolation("zero-width layer rejected");
          if (s.beta < 0.0) throw DomainViolation("ICNN beta must be nonnegative");
          if (!convex_nondecreasing(s.act))
            throw DomainViolation("ICNN activation must be convex and nondecreasing");
        } else if constexpr (std::is_same_v<T, PlanarFlowSpec>) {
          if (s.layers <= 0) throw DomainViolation("planar flow needs at least one layer");
        }
      },
      spec);
}

// Read-only row-major view into the flat parameter array.
struct MatView {
  const double* p;
  int rows, cols;
  double operator()(int r, int c) const { return p[r * cols + c]; }
  double operator[](int i) const { return p[i]; }
};

MatView view(const ParamVector& pv, const std::string& name) {
  const auto& e = pv.entry(name);
  return {pv.data() + e.offset, e.rows, e.cols};
}

}  // namespace

ParamVector make_layout(const NetworkSpec& spec) {
  check_spec(spec);
  ParamVector pv;
  if (const auto* m = std::get_if<MLPSpec>(&spec)) {
    int in = m->input_dim;
    for (std::size_t l = 0; l < m->hidden.size(); ++l) {
      add_entry(pv, "W" + std::to_string(l + 1), m->hidden[l], in);
      add_entry(pv, "b" + std::to_string(l + 1), m->hidden[l], 1);
      in = m->hidden[l];
    }
    add_entry(pv, "w_out", 1, in);
    add_entry(pv, "b_out", 1, 1);
  } else if (const auto* r = std::get_if<ResNetSpec>(&spec)) {
    add_entry(pv, "V", r->width, r->input_dim);
    for (int k = 1; k <= r->blocks; ++k) {
      int in = r->width;
      for (int l = 1; l <= r->layers_per_block; ++l) {
        add_entry(pv, "W" + std::to_string(k) + "_" + std::to_string(l), r->inner_width, in);
        add_entry(pv, "b" + std::to_string(k) + "_" + std::to_string(l), r->inner_width, 1);
        in = r->inner_width;
      }
      add_entry(pv, "alpha" + std::to_string(k), r->width, 1);
    }
    add_entry(pv, "gamma", 1, r->width);
    add_entry(pv, "gamma0", 1, 1);
  } else if (const auto* c = std::get_if<ICNNSpec>(&spec)) {
    add_entry(pv, "A0", c->width, c->input_dim);
    add_entry(pv, "b0", c->width, 1);
    for (int l = 1; l < c->layers; ++l) {
      add_entry(pv, "W" + std::to_string(l), c->width, c->width);
      add_entry(pv, "A" + std::to_string(l), c->width, c->input_dim);
      add_entry(pv, "b" + std::to_string(l), c->width, 1);
    }
    add_entry(pv, "w_out", 1, c->width);
    add_entry(pv, "a_out", 1, c->input_dim);
    add_entry(pv, "b_out", 1, 1);
  } else if (const auto* p = std::get_if<PlanarFlowSpec>(&spec)) {
    for (int k = 0; k < p->layers; ++k) {
      add_entry(pv, "w" + std::to_string(k), p->input_dim, 1);
      add_entry(pv, "u" + std::to_string(k), p->input_dim, 1);
      add_entry(pv, "b" + std::to_string(k), 1, 1);
    }
  }
  return pv;
}

int param_count(const NetworkSpec& spec) { return make_layout(spec).size(); }

Network build_network(const NetworkSpec& spec, std::uint64_t seed) {
  Network net{spec, make_layout(spec)};
  std::mt19937_64 rng(seed);
  auto xavier = [&rng](double* dst, int n, int fan_in, int fan_out, bool abs) {
    double lim = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-lim, lim);
    for (int i = 0; i < n; ++i) {
      double v = u(rng);
      dst[i] = abs ? std::abs(v) : v;
    }
  };
  double* v = net.params.values.data();
  const bool icnn = std::holds_alternative<ICNNSpec>(net.spec);
  for (const auto& e : net.params.layout) {
    if (e.name.rfind("alpha", 0) == 0) {
      for (int i = 0; i < e.size(); ++i) v[e.offset + i] = 1.0;
      continue;
    }
    if (e.name[0] == 'b' || e.name.rfind("gamma0", 0) == 0) continue;  // biases zero
    bool nonneg = icnn && (e.name[0] == 'W' || e.name == "w_out");
    int fan_in = e.cols == 1 ? e.rows : e.cols;
    int fan_out = e.cols == 1 ? 1 : e.rows;
    xavier(v + e.offset, e.size(), fan_in, fan_out, nonneg);
  }
  return net;
}

namespace {

void affine(const MatView& W, const MatView& b, const double* in, double* out) {
  for (int r = 0; r < W.rows; ++r) {
    double s = b.p ? b[r] : 0.0;
    for (int c = 0; c < W.cols; ++c) s += W(r, c) * in[c];
    out[r] = s;
  }
}

}  // namespace

double eval_scalar(const Network& net, std::span<const double> x) {
  if (static_cast<int>(x.size()) != input_dim(net.spec))
    throw DimensionMismatch("eval_scalar: point dimension mismatch");
  const auto& pv = net.params;
  if (const auto* m = std::get_if<MLPSpec>(&net.spec)) {
    std::vector<double> cur(x.begin(), x.end()), nxt;
    for (std::size_t l = 0; l < m->hidden.size(); ++l) {
      auto W = view(pv, "W" + std::to_string(l + 1));
      auto b = view(pv, "b" + std::to_string(l + 1));
      nxt.resize(W.rows);
      affine(W, b, cur.data(), nxt.data());
      for (double& t : nxt) t = act::derivs(m->act, t).f;
      cur = nxt;
    }
    auto w = view(pv, "w_out");
    double y = view(pv, "b_out")[0];
    for (int c = 0; c < w.cols; ++c) y += w[c] * cur[c];
    return y;
  }
  if (const auto* r = std::get_if<ResNetSpec>(&net.spec)) {
    std::vector<double> z(r->width), h, nxt;
    affine(view(pv, "V"), MatView{nullptr, r->width, 1}, x.data(), z.data());
    for (int k = 1; k <= r->blocks; ++k) {
      h = z;
      for (int l = 1; l <= r->layers_per_block; ++l) {
        auto W = view(pv, "W" + std::to_string(k) + "_" + std::to_string(l));
        auto b = view(pv, "b" + std::to_string(k) + "_" + std::to_string(l));
        nxt.resize(W.rows);
        affine(W, b, h.data(), nxt.data());
        for (double& t : nxt) t = act::derivs(r->act, t).f;
        h = nxt;
      }
      auto alpha = view(pv, "alpha" + std::to_string(k));
      for (int i = 0; i < r->width; ++i)
        z[i] = act::derivs(r->skip_act, alpha[i] * h[i] + z[i]).f;
    }
    auto g = view(pv, "gamma");
    double y = view(pv, "gamma0")[0];
    for (int c = 0; c < g.cols; ++c) y += g[c] * z[c];
    return y;
  }
  if (const auto* c = std::get_if<ICNNSpec>(&net.spec)) {
    std::vector<double> z(c->width), nxt(c->width);
    {
      auto A0 = view(pv, "A0");
      auto b0 = view(pv, "b0");
      affine(A0, b0, x.data(), z.data());
      for (double& t : z) t = act::derivs(c->act, t).f;
    }
    for (int l = 1; l < c->layers; ++l) {
      auto W = view(pv, "W" + std::to_string(l));
      auto A = view(pv, "A" + std::to_string(l));
      auto b = view(pv, "b" + std::to_string(l));
      for (int rr = 0; rr < c->width; ++rr) {
        double s = b[rr];
        for (int cc = 0; cc < c->width; ++cc) s += W(rr, cc) * z[cc];
        for (int cc = 0; cc < c->input_dim; ++cc) s += A(rr, cc) * x[cc];
        nxt[rr] = act::derivs(c->act, s).f;
      }
      z = nxt;
    }
    auto w = view(pv, "w_out");
    auto a = view(pv, "a_out");
    double y = view(pv, "b_out")[0];
    for (int cc = 0; cc < w.cols; ++cc) y += w[cc] * z[cc];
    double x2 = 0.0;
    for (int j = 0; j < c->input_dim; ++j) {
      y += a[j] * x[j];
      x2 += x[j] * x[j];
    }
    return y + 0.5 * c->beta * x2;
  }
  throw DimensionMismatch("eval_scalar: network output is not scalar");
}

int project_icnn_weights(Network& net) {
  const auto* c = std::get_if<ICNNSpec>(&net.spec);
  if (!c) throw DomainViolation("project_icnn_weights: not an ICNN");
  int changed = 0;
  double* v = net.params.values.data();
  for (const auto& e : net.params.layout) {
    if (e.name[0] != 'W' && e.name != "w_out") continue;
    for (int i = 0; i < e.size(); ++i) {
      if (v[e.offset + i] < 0.0) {
        v[e.offset + i] = 0.0;
        ++changed;
      }
    }
  }
  return changed;
}

std::vector<std::pair<int, int>> icnn_nonneg_ranges(const ICNNSpec& spec) {
  ParamVector pv = make_layout(spec);
  std::vector<std::pair<int, int>> out;
  for (const auto& e : pv.layout)
    if (e.name[0] == 'W' || e.name == "w_out") out.emplace_back(e.offset, e.size());
  return out;
}

bool icnn_weights_nonnegative(const Network& net) {
  const auto* c = std::get_if<ICNNSpec>(&net.spec);
  if (!c) return false;
  const double* v = net.params.data();
  for (const auto& e : net.params.layout) {
    if (e.name[0] != 'W' && e.name != "w_out") continue;
    for (int i = 0; i < e.size(); ++i)
      if (v[e.offset + i] < 0.0) return false;
  }
  return true;
}

void planar_apply(const Network& net, std::span<const double> x, std::span<double> y,
                  double& logdet) {
  const auto* p = std::get_if<PlanarFlowSpec>(&net.spec);
  if (!p) throw DomainViolation("planar_apply: not a planar flow");
  const int d = p->input_dim;
  if (static_cast<int>(x.size()) != d || static_cast<int>(y.size()) != d)
    throw DimensionMismatch("planar_apply: point dimension mismatch");
  const auto& pv = net.params;
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> uh(d);
  logdet = 0.0;
  for (int k = 0; k < p->layers; ++k) {
    auto w = view(pv, "w" + std::to_string(k));
    auto u = view(pv, "u" + std::to_string(k));
    double b = view(pv, "b" + std::to_string(k))[0];
    double wu = 0.0, ww = 0.0;
    for (int j = 0; j < d; ++j) {
      wu += w[j] * u[j];
      ww += w[j] * w[j];
    }
    // clamp u.w away from -1 so every layer determinant stays positive
    constexpr double kMargin = -0.99;
    double corr = (wu < kMargin && ww > 0.0) ? (kMargin - wu) / ww : 0.0;
    for (int j = 0; j < d; ++j) uh[j] = u[j] + corr * w[j];
    double s = b;
    for (int j = 0; j < d; ++j) s += w[j] * cur[j];
    double t = std::tanh(s);
    double hp = 1.0 - t * t;
    double uw = wu + corr * ww;  // = uh . w
    double jac = 1.0 + hp * uw;
    if (jac <= 0.0) throw PositiveDefiniteViolation("planar layer Jacobian not positive");
    logdet += std::log(jac);
    for (int j = 0; j < d; ++j) cur[j] += uh[j] * t;
  }
  std::copy(cur.begin(), cur.end(), y.begin());
}

std::string network_to_json(const Network& net) {
  json spec;
  if (const auto* m = std::get_if<MLPSpec>(&net.spec)) {
    spec = {{"kind", "mlp"}, {"input_dim", m->input_dim}, {"hidden", m->hidden},
            {"activation", to_string(m->act)}};
  } else if (const auto* r = std::get_if<ResNetSpec>(&net.spec)) {
    spec = {{"kind", "resnet"},       {"input_dim", r->input_dim},
            {"blocks", r->blocks},    {"layers_per_block", r->layers_per_block},
            {"width", r->width},      {"inner_width", r->inner_width},
            {"activation", to_string(r->act)}, {"skip_activation", to_string(r->skip_act)}};
  } else if (const auto* c = std::get_if<ICNNSpec>(&net.spec)) {
    spec = {{"kind", "icnn"},   {"input_dim", c->input_dim}, {"layers", c->layers},
            {"width", c->width}, {"activation", to_string(c->act)}, {"beta", c->beta}};
  } else if (const auto* p = std::get_if<PlanarFlowSpec>(&net.spec)) {
    spec = {{"kind", "planar"}, {"input_dim", p->input_dim}, {"layers", p->layers}};
  }
  json doc = {{"format_version", 1}, {"spec", spec}, {"values", net.params.values}};
  return doc.dump();
}

NetworkSpec network_spec_from_json(const json& spec) {
  const std::string kind = spec.at("kind");
  if (kind == "mlp") {
    MLPSpec m;
    m.input_dim = spec.at("input_dim");
    m.hidden = spec.at("hidden").get<std::vector<int>>();
    m.act = activation_from_string(spec.at("activation"));
    return m;
  }
  if (kind == "resnet") {
    ResNetSpec r;
    r.input_dim = spec.at("input_dim");
    r.blocks = spec.at("blocks");
    r.layers_per_block = spec.at("layers_per_block");
    r.width = spec.at("width");
    r.inner_width = spec.at("inner_width");
    r.act = activation_from_string(spec.at("activation"));
    r.skip_act = activation_from_string(spec.at("skip_activation"));
    return r;
  }
  if (kind == "icnn") {
    ICNNSpec c;
    c.input_dim = spec.at("input_dim");
    c.layers = spec.at("layers");
    c.width = spec.at("width");
    c.act = activation_from_string(spec.at("activation"));
    c.beta = spec.at("beta");
    return c;
  }
  if (kind == "planar") {
    PlanarFlowSpec p;
    p.input_dim = spec.at("input_dim");
    p.layers = spec.at("layers");
    return p;
  }
  throw DomainViolation("unknown network kind: " + kind);
}

Network network_from_json(const std::string& text) {
  json doc = json::parse(text);
  Network net;
  net.spec = network_spec_from_json(doc.at("spec"));
  net.params = make_layout(net.spec);
  auto vals = doc.at("values").get<Vec>();
  if (vals.size() != net.params.values.size())
    throw DomainViolation("checkpoint value count does not match spec");
  net.params.values = std::move(vals);
  return net;
}

void save_network(const Network& net, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << network_to_json(net);
}

Network load_network(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return network_from_json(ss.str());
}

}  // namespace evnn
