#include "evnn/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "evnn/linalg.hpp"

namespace evnn {

double DomainDescriptor::box_volume() const {
  if (kind == Kind::Disk) return M_PI * radius * radius;
  double v = 1.0;
  for (std::size_t i = 0; i < lo.size(); ++i) v *= hi[i] - lo[i];
  return v;
}

void DomainDescriptor::validate() const {
  if (kind == Kind::Disk) {
    if (radius <= 0.0) throw DomainViolation("disk radius must be positive");
    if (center.size() != 2) throw DomainViolation("disk domains are two-dimensional");
    return;
  }
  if (lo.empty() || lo.size() != hi.size()) throw DomainViolation("box bounds malformed");
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (!(lo[i] < hi[i])) throw DomainViolation("box requires lo < hi in every dimension");
  if (kind == Kind::BoxMinusFilter && !filter) throw DomainViolation("filter missing");
}

DomainDescriptor DomainDescriptor::box(Vec lo, Vec hi) {
  DomainDescriptor d;
  d.kind = Kind::Box;
  d.lo = std::move(lo);
  d.hi = std::move(hi);
  d.validate();
  return d;
}

DomainDescriptor DomainDescriptor::disk(Vec center, double radius) {
  DomainDescriptor d;
  d.kind = Kind::Disk;
  d.center = std::move(center);
  d.radius = radius;
  d.validate();
  return d;
}

DomainDescriptor DomainDescriptor::box_filtered(Vec lo, Vec hi,
                                                std::function<bool(const double*)> keep) {
  DomainDescriptor d;
  d.kind = Kind::BoxMinusFilter;
  d.lo = std::move(lo);
  d.hi = std::move(hi);
  d.filter = std::move(keep);
  d.validate();
  return d;
}

void ParticleEnsemble::validate() const {
  const int n = size();
  if (static_cast<int>(rho.size()) != n || static_cast<int>(weights.size()) != n)
    throw DimensionMismatch("ensemble arrays disagree in length");
  for (double r : rho)
    if (!(r > 0.0)) throw DomainViolation("particle density must be strictly positive");
}

SampleSet latin_hypercube(int n, const DomainDescriptor& box, std::uint64_t seed) {
  box.validate();
  if (box.kind == DomainDescriptor::Kind::Disk)
    throw DomainViolation("latin_hypercube needs a box domain");
  if (n <= 0) throw DomainViolation("sample count must be positive");
  const int d = box.dim();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SampleSet out;
  out.d = d;
  out.seed = seed;
  out.interior.assign(static_cast<std::size_t>(n) * d, 0.0);
  std::vector<int> perm(n);
  for (int j = 0; j < d; ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < n; ++i) {
      const double t = (perm[i] + u(rng)) / n;
      out.interior[static_cast<std::size_t>(i) * d + j] = box.lo[j] + t * (box.hi[j] - box.lo[j]);
    }
  }
  out.interior_weight = box.box_volume() / n;
  return out;
}

SampleSet uniform_grid(const std::vector<int>& res, const DomainDescriptor& box) {
  box.validate();
  if (box.kind == DomainDescriptor::Kind::Disk)
    throw DomainViolation("uniform_grid needs a box domain");
  const int d = box.dim();
  if (static_cast<int>(res.size()) != d) throw DimensionMismatch("resolution list length");
  long total = 1;
  for (int j = 0; j < d; ++j) {
    if (res[j] < 2) throw DomainViolation("grid needs at least 2 points per dimension");
    total *= res[j];
  }
  SampleSet out;
  out.d = d;
  out.interior.assign(static_cast<std::size_t>(total) * d, 0.0);
  std::vector<int> idx(d, 0);
  for (long i = 0; i < total; ++i) {
    for (int j = 0; j < d; ++j)
      out.interior[static_cast<std::size_t>(i) * d + j] =
          box.lo[j] + idx[j] * (box.hi[j] - box.lo[j]) / (res[j] - 1);
    for (int j = d - 1; j >= 0; --j) {
      if (++idx[j] < res[j]) break;
      idx[j] = 0;
    }
  }
  // per-point share of the box volume; keeps the quadrature mass exact
  out.interior_weight = box.box_volume() / static_cast<double>(total);
  return out;
}

Vec boundary_samples(const DomainDescriptor& domain, int n_per_component, std::uint64_t seed,
                     BoundaryMode mode) {
  double w;
  return boundary_samples(domain, n_per_component, seed, mode, w);
}

Vec boundary_samples(const DomainDescriptor& domain, int n_per_component, std::uint64_t seed,
                     BoundaryMode mode, double& weight) {
  domain.validate();
  std::mt19937_64 rng(mix_seed(seed, 0x0b0b));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec pts;
  if (domain.kind == DomainDescriptor::Kind::Disk) {
    pts.reserve(2 * n_per_component);
    for (int i = 0; i < n_per_component; ++i) {
      const double theta = mode == BoundaryMode::Equispaced
                               ? 2.0 * M_PI * i / n_per_component
                               : 2.0 * M_PI * u(rng);
      pts.push_back(domain.center[0] + domain.radius * std::cos(theta));
      pts.push_back(domain.center[1] + domain.radius * std::sin(theta));
    }
    weight = 2.0 * M_PI * domain.radius / n_per_component;
    return pts;
  }
  if (domain.dim() != 2) throw DomainViolation("box boundary sampling implemented for 2-D");
  const double lx = domain.hi[0] - domain.lo[0];
  const double ly = domain.hi[1] - domain.lo[1];
  // four edges, n points each, offset placement to avoid corner double counts
  auto place = [&](int i, int n, double t0, double t1, bool horizontal, double level) {
    const double t =
        mode == BoundaryMode::Equispaced ? t0 + (i + 0.5) / n * (t1 - t0) : t0 + u(rng) * (t1 - t0);
    if (horizontal) {
      pts.push_back(t);
      pts.push_back(level);
    } else {
      pts.push_back(level);
      pts.push_back(t);
    }
  };
  for (int i = 0; i < n_per_component; ++i) place(i, n_per_component, domain.lo[0], domain.hi[0], true, domain.lo[1]);
  for (int i = 0; i < n_per_component; ++i) place(i, n_per_component, domain.lo[0], domain.hi[0], true, domain.hi[1]);
  for (int i = 0; i < n_per_component; ++i) place(i, n_per_component, domain.lo[1], domain.hi[1], false, domain.lo[0]);
  for (int i = 0; i < n_per_component; ++i) place(i, n_per_component, domain.lo[1], domain.hi[1], false, domain.hi[0]);
  weight = 2.0 * (lx + ly) / (4.0 * n_per_component);
  return pts;
}

double gaussian_density(const double* x, int d, const Vec& mean, const std::vector<Vec>& cov) {
  // small d only; dense Cholesky each call is fine at benchmark sizes
  std::vector<double> m(d * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m[i * d + j] = cov[i][j];
  const double ld = logdet_spd(m.data(), d);
  Vec diff(d), sol(d);
  for (int i = 0; i < d; ++i) diff[i] = x[i] - mean[i];
  spd_solve_small(m.data(), diff.data(), sol.data(), d);
  double q = 0.0;
  for (int i = 0; i < d; ++i) q += diff[i] * sol[i];
  return std::exp(-0.5 * (q + ld + d * std::log(2.0 * M_PI)));
}

ParticleEnsemble gaussian_draw(int n, const Vec& mean, const std::vector<Vec>& cov,
                               std::uint64_t seed) {
  const int d = static_cast<int>(mean.size());
  if (n <= 0) throw DomainViolation("sample count must be positive");
  // Cholesky factor (throws if not SPD)
  std::vector<double> m(d * d), L(d * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m[i * d + j] = cov[i][j];
  (void)logdet_spd(m.data(), d);
  for (int j = 0; j < d; ++j) {
    double s = m[j * d + j];
    for (int k = 0; k < j; ++k) s -= L[j * d + k] * L[j * d + k];
    L[j * d + j] = std::sqrt(s);
    for (int i = j + 1; i < d; ++i) {
      double t = m[i * d + j];
      for (int k = 0; k < j; ++k) t -= L[i * d + k] * L[j * d + k];
      L[i * d + j] = t / L[j * d + j];
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ParticleEnsemble out;
  out.d = d;
  out.positions.assign(static_cast<std::size_t>(n) * d, 0.0);
  out.rho.assign(n, 0.0);
  out.weights.assign(n, 1.0 / n);
  Vec z(d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) z[j] = gauss(rng);
    double* xi = out.positions.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      double s = mean[j];
      for (int k = 0; k <= j; ++k) s += L[j * d + k] * z[k];
      xi[j] = s;
    }
    out.rho[i] = gaussian_density(xi, d, mean, cov);
  }
  return out;
}

SampleSet filtered_box_samples(int n, const DomainDescriptor& box,
                               const std::function<bool(const double*)>& keep,
                               std::uint64_t seed) {
  SampleSet lhs = latin_hypercube(n, box, seed);
  const int d = lhs.d;
  SampleSet out;
  out.d = d;
  out.seed = seed;
  for (int i = 0; i < n; ++i) {
    const double* p = lhs.interior_point(i);
    if (keep(p)) out.interior.insert(out.interior.end(), p, p + d);
  }
  if (out.interior.empty()) throw DomainViolation("all samples filtered out");
  out.interior_weight = box.box_volume() / n;  // each survivor represents vol/n_total
  return out;
}

void export_points_csv(const std::string& path, const Vec& points, int d, const Vec* weights) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  for (int j = 0; j < d; ++j) f << "x" << (j + 1) << (j + 1 < d || weights ? "," : "");
  if (weights) f << "weight";
  f << "\n";
  f.precision(17);
  const int n = static_cast<int>(points.size()) / d;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j)
      f << points[static_cast<std::size_t>(i) * d + j] << (j + 1 < d || weights ? "," : "");
    if (weights) f << (*weights)[i];
    f << "\n";
  }
}

}  // namespace evnn
