#pragma once

#include <cstdint>

namespace imunet::detail {

// Row-major dgemm: C = alpha * op(A)[m x k] * op(B)[k x n] + beta * C[m x n].
// Thin wrapper over single-threaded OpenBLAS; the only BLAS entry point the
// library uses, so determinism hinges on this one call.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
          double beta, double* c, std::int64_t ldc);

}  // namespace imunet::detail
