#include "gemm.hpp"

#include <cblas-openblas.h>

namespace imunet::detail {

namespace {

// Forcing one BLAS thread keeps reductions in a fixed order, which the
// byte-identical rerun guarantee depends on.
const bool kSingleThread = [] {
  openblas_set_num_threads(1);
  return true;
}();

}  // namespace

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          double alpha, const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
          double beta, double* c, std::int64_t ldc) {
  (void)kSingleThread;
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<blasint>(m),
              static_cast<blasint>(n), static_cast<blasint>(k), alpha, a,
              static_cast<blasint>(lda), b, static_cast<blasint>(ldb), beta, c,
              static_cast<blasint>(ldc));
}

}  // namespace imunet::detail
