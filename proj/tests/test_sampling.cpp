#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "evnn/sampling.hpp"

using namespace evnn;

TEST_CASE("latin hypercube stratification in 1-D") {
  auto box = DomainDescriptor::box({0.0}, {1.0});
  auto s = latin_hypercube(4, box, 42);
  Vec v = s.interior;
  std::sort(v.begin(), v.end());
  for (int j = 0; j < 4; ++j) {
    CHECK(v[j] >= j / 4.0);
    CHECK(v[j] < (j + 1) / 4.0);
  }
}

TEST_CASE("latin hypercube determinism and moments") {
  auto box = DomainDescriptor::box({0.0, -1.0}, {2.0, 1.0});
  auto a = latin_hypercube(2500, box, 7);
  auto b = latin_hypercube(2500, box, 7);
  REQUIRE(a.interior == b.interior);
  double mx = 0, my = 0;
  for (int i = 0; i < a.n_interior(); ++i) {
    mx += a.interior_point(i)[0];
    my += a.interior_point(i)[1];
  }
  mx /= a.n_interior();
  my /= a.n_interior();
  CHECK(std::abs(mx - 1.0) < 3.0 / std::sqrt(2500.0));
  CHECK(std::abs(my - 0.0) < 3.0 / std::sqrt(2500.0));
  CHECK(a.interior_weight == doctest::Approx(4.0 / 2500));
  CHECK_THROWS(latin_hypercube(0, box, 1));
}

TEST_CASE("uniform grid") {
  auto box = DomainDescriptor::box({0.0, 0.0}, {1.0, 1.0});
  auto g = uniform_grid({3, 3}, box);
  CHECK(g.n_interior() == 9);
  CHECK(g.interior_point(1)[1] == doctest::Approx(0.5));  // row-major spacing 0.5
  CHECK(g.interior_weight == doctest::Approx(1.0 / 9.0));
  auto big = uniform_grid({301, 301}, DomainDescriptor::box({0.0, 0.0}, {2.0, 2.0}));
  CHECK(big.n_interior() == 90601);
  auto fdm = uniform_grid({101, 101}, DomainDescriptor::box({0.0, 0.0}, {2.0, 2.0}));
  CHECK((fdm.interior_point(1)[1] - fdm.interior_point(0)[1]) == doctest::Approx(0.02));
}

TEST_CASE("boundary samples") {
  SUBCASE("box: 50 per edge gives 200 points") {
    auto box = DomainDescriptor::box({0.0, 0.0}, {M_PI, M_PI});
    double w;
    auto pts = boundary_samples(box, 50, 3, BoundaryMode::UniformRandom, w);
    CHECK(static_cast<int>(pts.size()) / 2 == 200);
    CHECK(w == doctest::Approx(4.0 * M_PI / 200));
  }
  SUBCASE("disk: random angles sit on the circle") {
    auto disk = DomainDescriptor::disk({0.0, 0.0}, 1.0);
    auto pts = boundary_samples(disk, 200, 5, BoundaryMode::UniformRandom);
    for (int i = 0; i < 200; ++i) {
      const double r = std::hypot(pts[2 * i], pts[2 * i + 1]);
      REQUIRE(std::abs(r - 1.0) < 1e-15);
    }
  }
  SUBCASE("equispaced arc length on a general circle") {
    auto disk = DomainDescriptor::disk({0.0, 0.0}, 1.0953);
    auto pts = boundary_samples(disk, 500, 0, BoundaryMode::Equispaced);
    CHECK(static_cast<int>(pts.size()) / 2 == 500);
    const double a0 = std::atan2(pts[1], pts[0]);
    const double a1 = std::atan2(pts[3], pts[2]);
    CHECK(std::abs(a1 - a0) == doctest::Approx(2 * M_PI / 500));
  }
}

TEST_CASE("gaussian draws") {
  Vec mean = {0.0, 0.0};
  std::vector<Vec> cov = {{1.0, 0.0}, {0.0, 1.0}};
  auto e = gaussian_draw(10000, mean, cov, 11);
  e.validate();
  SUBCASE("sample mean within CLT band") {
    double mx = 0, my = 0;
    for (int i = 0; i < e.size(); ++i) {
      mx += e.positions[2 * i];
      my += e.positions[2 * i + 1];
    }
    CHECK(std::abs(mx / e.size()) < 4.0 / std::sqrt(10000.0));
    CHECK(std::abs(my / e.size()) < 4.0 / std::sqrt(10000.0));
  }
  SUBCASE("carried densities are the standard normal density") {
    for (int i : {0, 17, 9999}) {
      const double* x = e.positions.data() + 2 * i;
      const double expect = std::exp(-0.5 * (x[0] * x[0] + x[1] * x[1])) / (2 * M_PI);
      REQUIRE(e.rho[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("same seed reproduces the ensemble") {
    auto e2 = gaussian_draw(10000, mean, cov, 11);
    REQUIRE(e.positions == e2.positions);
    REQUIRE(e.rho == e2.rho);
  }
  SUBCASE("non-SPD covariance rejected") {
    std::vector<Vec> bad = {{1.0, 2.0}, {2.0, 1.0}};
    CHECK_THROWS_AS(gaussian_draw(10, mean, bad, 1), PositiveDefiniteViolation);
  }
}

TEST_CASE("filtered box samples") {
  auto box = DomainDescriptor::box({-1.0, -1.0}, {1.0, 1.0});
  SUBCASE("always-true predicate equals plain LHS") {
    auto a = filtered_box_samples(500, box, [](const double*) { return true; }, 13);
    auto b = latin_hypercube(500, box, 13);
    REQUIRE(a.interior == b.interior);
    CHECK(a.interior_weight == doctest::Approx(b.interior_weight));
  }
  SUBCASE("unit-disk survivor fraction near pi/4") {
    const int n = 2500;
    auto a = filtered_box_samples(
        n, box, [](const double* p) { return p[0] * p[0] + p[1] * p[1] < 1.0; }, 17);
    const double frac = static_cast<double>(a.n_interior()) / n;
    const double p = M_PI / 4.0;
    CHECK(std::abs(frac - p) < 3.0 * std::sqrt(p * (1 - p) / n));
    // weights make the disk-area estimate come out right
    CHECK(a.interior_weight * a.n_interior() ==
          doctest::Approx(M_PI).epsilon(3.0 * std::sqrt(p * (1 - p) / n)));
  }
  SUBCASE("always-false predicate errors") {
    CHECK_THROWS_AS(filtered_box_samples(100, box, [](const double*) { return false; }, 1),
                    DomainViolation);
  }
}
