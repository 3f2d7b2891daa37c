#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evnn/common.hpp"

namespace evnn {

// Axis-aligned box, disk, or a box restricted by a predicate.
struct DomainDescriptor {
  enum class Kind { Box, Disk, BoxMinusFilter } kind = Kind::Box;
  Vec lo, hi;                                 // box bounds, per dimension
  Vec center;                                 // disk
  double radius = 1.0;                        // disk
  std::function<bool(const double*)> filter;  // BoxMinusFilter

  int dim() const { return kind == Kind::Disk ? 2 : static_cast<int>(lo.size()); }
  double box_volume() const;
  void validate() const;

  static DomainDescriptor box(Vec lo, Vec hi);
  static DomainDescriptor disk(Vec center, double radius);
  static DomainDescriptor box_filtered(Vec lo, Vec hi, std::function<bool(const double*)> keep);
};

// Interior/boundary point sets with the quadrature weights they carry.
// Points are row-major (n x d).
struct SampleSet {
  Vec interior;          // n_interior x d
  Vec boundary;          // n_boundary x d
  double interior_weight = 0.0;
  double boundary_weight = 0.0;
  int d = 0;
  std::uint64_t seed = 0;

  int n_interior() const { return d ? static_cast<int>(interior.size()) / d : 0; }
  int n_boundary() const { return d ? static_cast<int>(boundary.size()) / d : 0; }
  const double* interior_point(int i) const { return interior.data() + static_cast<std::ptrdiff_t>(i) * d; }
};

// Particle state for the transport solver.
struct ParticleEnsemble {
  Vec positions;  // n x d
  Vec rho;        // carried densities, > 0
  Vec weights;    // sums to 1
  int d = 0;

  int size() const { return d ? static_cast<int>(positions.size()) / d : 0; }
  void validate() const;
};

enum class BoundaryMode { UniformRandom, Equispaced };

// One point per stratum in every 1-D projection, mapped affinely to the box.
SampleSet latin_hypercube(int n, const DomainDescriptor& box, std::uint64_t seed);

// Tensor-product grid including endpoints; interior weight = cell volume.
SampleSet uniform_grid(const std::vector<int>& res, const DomainDescriptor& box);

// Box: n_per_component samples on each edge/face pair walk; in 2D, per edge.
// Disk: angles theta, uniform-random or equal arc length.
Vec boundary_samples(const DomainDescriptor& domain, int n_per_component, std::uint64_t seed,
                     BoundaryMode mode);

// Same, with the surface weight written out (perimeter / count in 2D).
Vec boundary_samples(const DomainDescriptor& domain, int n_per_component, std::uint64_t seed,
                     BoundaryMode mode, double& weight);

// n draws from N(mean, cov); carried densities are the Gaussian density at
// each draw, weights are 1/n.
ParticleEnsemble gaussian_draw(int n, const Vec& mean, const std::vector<Vec>& cov,
                               std::uint64_t seed);

// Latin hypercube in the box, filtered by the predicate; the weight makes
// vol(box)/n_total * sum_survivors an unbiased estimate of the region
// integral.
SampleSet filtered_box_samples(int n, const DomainDescriptor& box,
                               const std::function<bool(const double*)>& keep,
                               std::uint64_t seed);

// Multivariate normal density.
double gaussian_density(const double* x, int d, const Vec& mean, const std::vector<Vec>& cov);

void export_points_csv(const std::string& path, const Vec& points, int d,
                       const Vec* weights = nullptr);

}  // namespace evnn
