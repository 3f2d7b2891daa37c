#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace evnn {

using Vec = std::vector<double>;

// Thrown when a forward evaluation produces a NaN/Inf.  The node index lets
// the caller see where a tape blew up; -1 means "outside a tape".
struct NonFiniteValue : std::runtime_error {
  long node = -1;
  explicit NonFiniteValue(long node_idx, const std::string& what = "non-finite value")
      : std::runtime_error(what + " (node " + std::to_string(node_idx) + ")"), node(node_idx) {}
};

// Cholesky failed: the matrix handed to logdet_spd / a transport-map Jacobian
// is not positive definite.  For map candidates this flags a step that is not
// a diffeomorphism.
struct PositiveDefiniteViolation : std::runtime_error {
  explicit PositiveDefiniteViolation(const std::string& what = "matrix not positive definite")
      : std::runtime_error(what) {}
};

// An energy density was evaluated outside its domain (e.g. log of a
// non-positive density).
struct DomainViolation : std::runtime_error {
  explicit DomainViolation(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionMismatch : std::invalid_argument {
  explicit DimensionMismatch(const std::string& what) : std::invalid_argument(what) {}
};

// splitmix64; used to derive independent stream seeds from (base, tag) pairs
// so that e.g. per-step resampling is reproducible.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace evnn
