#pragma once

#include <array>
#include <cmath>

#include "evnn/common.hpp"

namespace evnn {

// Determinant of a small (m <= 4) matrix stored row-major, by cofactor
// expansion.
double det_small(const double* m, int n);

// log det of an SPD matrix via Cholesky.  Throws PositiveDefiniteViolation.
double logdet_spd(const double* m, int n);

// Solve A x = b for SPD A (n <= 4), in place Cholesky.
void spd_solve_small(const double* a, const double* b, double* x, int n);

}  // namespace evnn
