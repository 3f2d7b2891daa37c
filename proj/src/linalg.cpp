#include "evnn/linalg.hpp"

#include <cstring>

namespace evnn {

double det_small(const double* m, int n) {
  switch (n) {
    case 1:
      return m[0];
    case 2:
      return m[0] * m[3] - m[1] * m[2];
    case 3:
      return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
             m[2] * (m[3] * m[7] - m[4] * m[6]);
    case 4: {
      // expand along the first row with 3x3 cofactors
      double det = 0.0;
      double sub[9];
      for (int c = 0; c < 4; ++c) {
        int sc = 0;
        for (int i = 1; i < 4; ++i)
          for (int j = 0; j < 4; ++j)
            if (j != c) sub[sc++] = m[i * 4 + j];
        double cof = det_small(sub, 3);
        det += ((c % 2 == 0) ? 1.0 : -1.0) * m[c] * cof;
      }
      return det;
    }
    default:
      throw DimensionMismatch("det_small supports n <= 4");
  }
}

static void cholesky_small(const double* m, double* l, int n) {
  std::memset(l, 0, sizeof(double) * n * n);
  for (int j = 0; j < n; ++j) {
    double s = m[j * n + j];
    for (int k = 0; k < j; ++k) s -= l[j * n + k] * l[j * n + k];
    if (s <= 0.0) throw PositiveDefiniteViolation();
    l[j * n + j] = std::sqrt(s);
    for (int i = j + 1; i < n; ++i) {
      double t = m[i * n + j];
      for (int k = 0; k < j; ++k) t -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = t / l[j * n + j];
    }
  }
}

double logdet_spd(const double* m, int n) {
  double l[16];
  cholesky_small(m, l, n);
  double ld = 0.0;
  for (int i = 0; i < n; ++i) ld += std::log(l[i * n + i]);
  return 2.0 * ld;
}

void spd_solve_small(const double* a, const double* b, double* x, int n) {
  double l[16], y[4];
  cholesky_small(a, l, n);
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= l[i * n + k] * y[k];
    y[i] = s / l[i * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = y[i];
    for (int k = i + 1; k < n; ++k) s -= l[k * n + i] * x[k];
    x[i] = s / l[i * n + i];
  }
}

}  // namespace evnn
