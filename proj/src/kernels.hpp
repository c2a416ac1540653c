#pragma once

// Dense kernels behind the autodiff primitives. Every output element is
// accumulated in a fixed order that depends only on the inner dimension, so
// a row's result does not change with the number of rows in the batch.

#include <cstddef>

namespace mp2m::ad::kernels {

// c (m x n) += a (m x k) * b (k x n)
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c (k x n) += a^T * g where a is m x k and g is m x n
inline void gemm_tn_acc(const double* a, const double* g, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

// out (cols x rows) = transpose of in (rows x cols)
inline void transpose(const double* in, double* out, std::size_t rows,
                      std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = in[i * cols + j];
  }
}

}  // namespace mp2m::ad::kernels
