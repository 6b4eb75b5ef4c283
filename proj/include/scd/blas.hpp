#pragma once

// Thin typed wrapper over CBLAS GEMM for row-major operands.

#include <cblas.h>

#include <algorithm>
#include <cstddef>
#include <vector>

namespace scd::blas {

/// C = alpha * op(A) * op(B) + beta * C, with op(A) [m, k], op(B) [k, n], C [m, n].
inline void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
                 std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
              beta, c, static_cast<int>(ldc));
}

/// Double precision stays off OpenBLAS: the 0.3.20 Cooperlake dgemm kernel
/// returns wrong products for some shapes. Doubles only feed gradient checks.
inline void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                 std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  std::vector<double> pa(m * k), pb(k * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) pa[i * k + p] = ta ? a[p * lda + i] : a[i * lda + p];
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) pb[p * n + j] = tb ? b[j * ldb + p] : b[p * ldb + j];
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* bp = pb.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * bp[j];
    }
    double* ci = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) ci[j] = alpha * row[j] + (beta == 0.0 ? 0.0 : beta * ci[j]);
  }
}

}  // namespace scd::blas
