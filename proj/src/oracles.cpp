#include "evnn/oracles.hpp"

#include <Eigen/Sparse>
#include <cmath>
#include <random>

#include "evnn/linalg.hpp"

namespace evnn {

double l2_error(const Vec& pred, const Vec& ref) {
  if (pred.size() != ref.size()) throw DimensionMismatch("l2_error: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - ref[i];
    s += e * e;
  }
  return std::sqrt(s / std::max<std::size_t>(1, pred.size()));
}

double relative_l2_error(const Vec& pred, const Vec& ref) {
  if (pred.size() != ref.size()) throw DimensionMismatch("relative_l2_error: length mismatch");
  double se = 0.0, sr = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - ref[i];
    se += e * e;
    sr += ref[i] * ref[i];
  }
  if (sr == 0.0) throw DomainViolation("relative error undefined for a zero reference");
  return std::sqrt(se / sr);
}

double heat_exact(const double* x, double t) {
  return std::exp(-M_PI * M_PI * t / 2.0) * std::sin(M_PI_2 * x[0]) * std::sin(M_PI_2 * x[1]);
}

double poisson_case1_exact(const double* x) { return std::sin(x[0]) * std::cos(x[1]); }
double poisson_case1_f(const double* x) { return 2.0 * std::sin(x[0]) * std::cos(x[1]); }

double poisson_case2_exact(const double* x) {
  const double r = std::hypot(x[0], x[1]);
  return std::sin(M_PI_2 * (1.0 - r));
}

double poisson_case2_f(const double* x) {
  const double r = std::hypot(x[0], x[1]);
  return M_PI * M_PI / 4.0 * std::sin(M_PI_2 * (1.0 - r)) +
         M_PI / (2.0 * r) * std::cos(M_PI_2 * (1.0 - r));
}

double hidim_poisson_exact(const double* x, int d) {
  double s = 0.0;
  for (int k = 0; k < d; ++k) s += std::cos(M_PI * x[k]);
  return s;
}

double hidim_poisson_f(const double* x, int d) {
  return M_PI * M_PI * hidim_poisson_exact(x, d);
}

FokkerPlanckGauss FokkerPlanckGauss::benchmark2d() {
  FokkerPlanckGauss fp;
  fp.d = 2;
  fp.mu_target = {1.0 / 3.0, 1.0 / 3.0};
  fp.sigma_target = {{5.0 / 8.0, -3.0 / 8.0}, {-3.0 / 8.0, 5.0 / 8.0}};
  return fp;
}

FokkerPlanckGauss FokkerPlanckGauss::benchmark4d() {
  FokkerPlanckGauss fp;
  fp.d = 4;
  fp.mu_target = {1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0};
  fp.sigma_target = {{5.0 / 8.0, -3.0 / 8.0, 0.0, 0.0},
                     {-3.0 / 8.0, 5.0 / 8.0, 0.0, 0.0},
                     {0.0, 0.0, 1.0, 0.0},
                     {0.0, 0.0, 0.0, 1.0}};
  return fp;
}

Vec FokkerPlanckGauss::mean_at(double t) const {
  Vec mu(d);
  const double decay = 1.0 - std::exp(-4.0 * t);
  for (int i = 0; i < d; ++i) mu[i] = decay * mu_target[i];
  return mu;
}

std::vector<Vec> FokkerPlanckGauss::cov_at(double t) const {
  const double e8 = std::exp(-8.0 * t);
  std::vector<Vec> S(d, Vec(d, 0.0));
  S[0][0] = 5.0 / 8.0 + 3.0 / 8.0 * e8;
  S[0][1] = -3.0 / 8.0 + 3.0 / 8.0 * e8;
  S[1][0] = S[0][1];
  S[1][1] = S[0][0];
  for (int i = 2; i < d; ++i) S[i][i] = 1.0;
  return S;
}

double FokkerPlanckGauss::density(const double* x, double t) const {
  return gaussian_density(x, d, mean_at(t), cov_at(t));
}

double FokkerPlanckGauss::potential(const double* x) const {
  // Sigma_target^{-1} has the closed 2x2-block form [[5/2,3/2],[3/2,5/2]] (+ I)
  Vec diff(d);
  for (int i = 0; i < d; ++i) diff[i] = x[i] - mu_target[i];
  double q = 2.5 * (diff[0] * diff[0] + diff[1] * diff[1]) + 3.0 * diff[0] * diff[1];
  for (int i = 2; i < d; ++i) q += diff[i] * diff[i];
  return 0.5 * q;
}

void FokkerPlanckGauss::potential_grad(const double* x, double* g) const {
  Vec diff(d);
  for (int i = 0; i < d; ++i) diff[i] = x[i] - mu_target[i];
  g[0] = 2.5 * diff[0] + 1.5 * diff[1];
  g[1] = 1.5 * diff[0] + 2.5 * diff[1];
  for (int i = 2; i < d; ++i) g[i] = diff[i];
}

double barenblatt(const double* x, double t, double alpha, double C0, int d) {
  const double k = 1.0 / (alpha - 1.0 + 2.0 / d);
  double r2 = 0.0;
  for (int j = 0; j < d; ++j) r2 += x[j] * x[j];
  const double core = C0 - k * (alpha - 1.0) / (2.0 * d * alpha) * r2 / std::pow(t, 2.0 * k / d);
  if (core <= 0.0) return 0.0;
  return std::pow(t, -k) * std::pow(core, 1.0 / (alpha - 1.0));
}

double barenblatt_support_radius(double t, double alpha, double C0, int d) {
  const double k = 1.0 / (alpha - 1.0 + 2.0 / d);
  return std::sqrt(2.0 * d * alpha * C0 / (k * (alpha - 1.0))) * std::pow(t, k / d);
}

std::vector<Vec> mixture_means() {
  return {{0.0, 4.0},  {2.8, 2.8},   {4.0, 0.0},  {-2.8, 2.8},
          {-4.0, 0.0}, {-2.8, -2.8}, {0.0, -4.0}, {2.8, -2.8}};
}

namespace {
constexpr double kMixVar = 0.2;
}

double mixture_density(const double* x) {
  const auto means = mixture_means();
  double s = 0.0;
  for (const auto& m : means) {
    const double dx = x[0] - m[0], dy = x[1] - m[1];
    s += std::exp(-(dx * dx + dy * dy) / (2.0 * kMixVar));
  }
  return s / (8.0 * 2.0 * M_PI * kMixVar);
}

double mixture_potential(const double* x) {
  // -ln rho*, evaluated with a log-sum-exp for stability far from the means
  const auto means = mixture_means();
  double emax = -1e300;
  double e[8];
  for (int i = 0; i < 8; ++i) {
    const double dx = x[0] - means[i][0], dy = x[1] - means[i][1];
    e[i] = -(dx * dx + dy * dy) / (2.0 * kMixVar);
    emax = std::max(emax, e[i]);
  }
  double s = 0.0;
  for (int i = 0; i < 8; ++i) s += std::exp(e[i] - emax);
  return -(emax + std::log(s) - std::log(8.0 * 2.0 * M_PI * kMixVar));
}

void mixture_potential_grad(const double* x, double* g) {
  const auto means = mixture_means();
  double emax = -1e300;
  double e[8];
  for (int i = 0; i < 8; ++i) {
    const double dx = x[0] - means[i][0], dy = x[1] - means[i][1];
    e[i] = -(dx * dx + dy * dy) / (2.0 * kMixVar);
    emax = std::max(emax, e[i]);
  }
  double s = 0.0, gx = 0.0, gy = 0.0;
  for (int i = 0; i < 8; ++i) {
    const double w = std::exp(e[i] - emax);
    s += w;
    gx += w * (x[0] - means[i][0]) / kMixVar;
    gy += w * (x[1] - means[i][1]) / kMixVar;
  }
  g[0] = gx / s;
  g[1] = gy / s;
}

FdmHeatResult fdm_heat_solve(int res, double L, double tau, int n_steps, const SpaceFn& ic,
                             const std::vector<int>& snapshot_steps) {
  const double h = L / (res - 1);
  const int m = res - 2;  // interior unknowns per axis
  const int N = m * m;
  auto idx = [m](int i, int j) { return i * m + j; };

  // A = -discrete Laplacian on the interior; system (I + tau A) u = rhs
  Eigen::SparseMatrix<double> A(N, N);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(5) * N);
  const double ih2 = 1.0 / (h * h);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      trip.emplace_back(idx(i, j), idx(i, j), 1.0 + tau * 4.0 * ih2);
      if (i > 0) trip.emplace_back(idx(i, j), idx(i - 1, j), -tau * ih2);
      if (i < m - 1) trip.emplace_back(idx(i, j), idx(i + 1, j), -tau * ih2);
      if (j > 0) trip.emplace_back(idx(i, j), idx(i, j - 1), -tau * ih2);
      if (j < m - 1) trip.emplace_back(idx(i, j), idx(i, j + 1), -tau * ih2);
    }
  A.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  solver.compute(A);
  if (solver.info() != Eigen::Success) throw std::runtime_error("FDM factorization failed");

  Eigen::VectorXd u(N);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const double xy[2] = {(i + 1) * h, (j + 1) * h};
      u[idx(i, j)] = ic(xy);
    }

  auto full_field = [&](const Eigen::VectorXd& v) {
    Vec field(static_cast<std::size_t>(res) * res, 0.0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) field[static_cast<std::size_t>(i + 1) * res + (j + 1)] = v[idx(i, j)];
    return field;
  };
  auto energy = [&](const Eigen::VectorXd& v) {
    // 1/2 sum over staggered edges of the squared difference quotient * h^2
    double e = 0.0;
    auto at = [&](int i, int j) {
      if (i < 0 || j < 0 || i >= m || j >= m) return 0.0;
      return v[idx(i, j)];
    };
    for (int i = -1; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        const double dgx = at(i + 1, j) - at(i, j);
        e += dgx * dgx;
      }
    for (int i = 0; i < m; ++i)
      for (int j = -1; j < m; ++j) {
        const double dgy = at(i, j + 1) - at(i, j);
        e += dgy * dgy;
      }
    return 0.5 * e;  // h^2 / h^2 cancels
  };

  FdmHeatResult out;
  out.grid = uniform_grid({res, res}, DomainDescriptor::box({0.0, 0.0}, {L, L}));
  auto want = [&snapshot_steps](int s) {
    return std::find(snapshot_steps.begin(), snapshot_steps.end(), s) != snapshot_steps.end();
  };
  if (want(0)) {
    out.fields.push_back(full_field(u));
    out.snapshot_times.push_back(0.0);
  }
  for (int s = 1; s <= n_steps; ++s) {
    u = solver.solve(u);
    out.energy_trace.push_back(energy(u));
    if (want(s)) {
      out.fields.push_back(full_field(u));
      out.snapshot_times.push_back(s * tau);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// self-tests
// ---------------------------------------------------------------------------

namespace {

// fourth-order central differences
template <typename F>
double d1(F f, double h) {
  return (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h);
}
template <typename F>
double d2(F f, double h) {
  return (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h)) / (12.0 * h * h);
}

template <typename Field>
double laplacian_fd(Field u, const double* x, int d, double h) {
  Vec p(x, x + d);
  double lap = 0.0;
  for (int j = 0; j < d; ++j) {
    lap += d2(
        [&](double dh) {
          Vec q = p;
          q[j] += dh;
          return u(q.data());
        },
        h);
  }
  return lap;
}

}  // namespace

std::vector<SelfTestResult> oracle_self_tests(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<SelfTestResult> out;
  const int n_pts = 100;

  {  // heat: u_t = lap u
    SelfTestResult r{"heat_exact", 0.0, 1e-6, false};
    for (int k = 0; k < n_pts; ++k) {
      const double x[2] = {0.2 + 1.6 * u01(rng), 0.2 + 1.6 * u01(rng)};
      const double t = 0.05 + 0.95 * u01(rng);
      const double ut = d1([&](double dt) { return heat_exact(x, t + dt); }, 1e-2);
      const double lap =
          laplacian_fd([&](const double* p) { return heat_exact(p, t); }, x, 2, 1e-2);
      r.worst_residual = std::max(r.worst_residual, std::abs(ut - lap));
    }
    r.pass = r.worst_residual <= r.tolerance;
    out.push_back(r);
  }
  {  // poisson case 1: -lap u = f
    SelfTestResult r{"poisson_case1", 0.0, 1e-6, false};
    for (int k = 0; k < n_pts; ++k) {
      const double x[2] = {0.2 + (M_PI - 0.4) * u01(rng), -M_PI_2 + 0.2 + (M_PI - 0.4) * u01(rng)};
      const double lap = laplacian_fd(poisson_case1_exact, x, 2, 1e-2);
      r.worst_residual = std::max(r.worst_residual, std::abs(-lap - poisson_case1_f(x)));
    }
    r.pass = r.worst_residual <= r.tolerance;
    out.push_back(r);
  }
  {  // poisson case 2 (away from the origin)
    SelfTestResult r{"poisson_case2", 0.0, 1e-6, false};
    for (int k = 0; k < n_pts; ++k) {
      const double rad = 0.2 + 0.6 * u01(rng);
      const double th = 2.0 * M_PI * u01(rng);
      const double x[2] = {rad * std::cos(th), rad * std::sin(th)};
      const double lap = laplacian_fd(poisson_case2_exact, x, 2, 5e-3);
      r.worst_residual = std::max(r.worst_residual, std::abs(-lap - poisson_case2_f(x)));
    }
    r.pass = r.worst_residual <= r.tolerance;
    out.push_back(r);
  }
  {  // high-dimensional poisson, d = 4
    SelfTestResult r{"poisson_hidim_d4", 0.0, 1e-6, false};
    for (int k = 0; k < n_pts; ++k) {
      double x[4];
      for (auto& v : x) v = -0.8 + 1.6 * u01(rng);
      const double lap =
          laplacian_fd([&](const double* p) { return hidim_poisson_exact(p, 4); }, x, 4, 1e-2);
      r.worst_residual = std::max(r.worst_residual, std::abs(-lap - hidim_poisson_f(x, 4)));
    }
    r.pass = r.worst_residual <= r.tolerance;
    out.push_back(r);
  }
  {  // Fokker-Planck Gaussian: rho_t = lap rho + div(rho grad V)
    auto fp = FokkerPlanckGauss::benchmark2d();
    SelfTestResult r{"fokker_planck_2d", 0.0, 1e-6, false};
    for (int k = 0; k < n_pts; ++k) {
      const double x[2] = {-1.5 + 3.0 * u01(rng), -1.5 + 3.0 * u01(rng)};
      const double t = 0.05 + 0.95 * u01(rng);
      const double rt = d1([&](double dt) { return fp.density(x, t + dt); }, 5e-3);
      const double lap =
          laplacian_fd([&](const double* p) { return fp.density(p, t); }, x, 2, 5e-3);
      double gradrho[2];
      for (int j = 0; j < 2; ++j)
        gradrho[j] = d1(
            [&](double dh) {
              double q[2] = {x[0], x[1]};
              q[j] += dh;
              return fp.density(q, t);
            },
            5e-3);
      double gv[2];
      fp.potential_grad(x, gv);
      const double divv = 5.0;  // trace of Sigma_target^{-1} in 2-D
      const double rhs = lap + gradrho[0] * gv[0] + gradrho[1] * gv[1] + fp.density(x, t) * divv;
      r.worst_residual = std::max(r.worst_residual, std::abs(rt - rhs));
    }
    r.pass = r.worst_residual <= r.tolerance;
    out.push_back(r);
  }
  {  // Barenblatt: rho_t = lap rho^alpha inside the support
    SelfTestResult r{"barenblatt", 0.0, 1e-6, false};
    const double alpha = 4.0, C0 = 0.1;
    for (int k = 0; k < n_pts; ++k) {
      const double t = 0.15 + 0.65 * u01(rng);
      const double xi = barenblatt_support_radius(t, alpha, C0, 2);
      const double rad = 0.7 * xi * std::sqrt(u01(rng));
      const double th = 2.0 * M_PI * u01(rng);
      const double x[2] = {rad * std::cos(th), rad * std::sin(th)};
      const double rt = d1([&](double dt) { return barenblatt(x, t + dt, alpha, C0, 2); }, 2e-3);
      const double lap = laplacian_fd(
          [&](const double* p) { return std::pow(barenblatt(p, t, alpha, C0, 2), alpha); }, x, 2,
          2e-3);
      r.worst_residual = std::max(r.worst_residual, std::abs(rt - lap));
    }
    r.pass = r.worst_residual <= r.tolerance;
    out.push_back(r);
  }
  {  // Fokker-Planck density mass on a fine grid
    auto fp = FokkerPlanckGauss::benchmark2d();
    SelfTestResult r{"fokker_planck_mass", 0.0, 1e-4, false};
    for (double t : {0.0, 0.1, 0.5, 1.0}) {
      const int res = 801;
      const double lo = -8.0, hi = 8.0, h = (hi - lo) / (res - 1);
      double mass = 0.0;
      for (int i = 0; i < res; ++i)
        for (int j = 0; j < res; ++j) {
          const double x[2] = {lo + i * h, lo + j * h};
          mass += fp.density(x, t);
        }
      mass *= h * h;
      r.worst_residual = std::max(r.worst_residual, std::abs(mass - 1.0));
    }
    r.pass = r.worst_residual <= r.tolerance;
    out.push_back(r);
  }
  {  // mixture target mass
    SelfTestResult r{"mixture_mass", 0.0, 1e-6, false};
    const int res = 1401;
    const double lo = -7.0, hi = 7.0, h = (hi - lo) / (res - 1);
    double mass = 0.0;
    for (int i = 0; i < res; ++i)
      for (int j = 0; j < res; ++j) {
        const double x[2] = {lo + i * h, lo + j * h};
        mass += mixture_density(x);
      }
    mass *= h * h;
    r.worst_residual = std::abs(mass - 1.0);
    r.pass = r.worst_residual <= r.tolerance;
    out.push_back(r);
  }
  return out;
}

}  // namespace evnn
