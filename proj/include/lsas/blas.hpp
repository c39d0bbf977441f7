#pragma once

namespace lsas {

/// Row-major C = alpha * op(A) * op(B) + beta * C, backed by CBLAS.
template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta,
          T* c, int ldc);

}  // namespace lsas
