#pragma once

#include <cstddef>

namespace abn {

// Row-major double GEMM kernels used by the convolution and linear layers.
// C is m x n and is accumulated into (caller zeroes it first when needed).
// Results are bitwise deterministic for any thread count: threads own
// disjoint row blocks of C and each element is reduced in a fixed order.

// C += A(m x k) * B(k x n)
void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc);

// C += A(m x k) * B(n x k)^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc);

// C += A(k x m)^T * B(k x n)
void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc);

// Worker threads used for large GEMMs (1 = serial). Defaults to the hardware
// concurrency, capped at 4.
void set_gemm_threads(unsigned n);
unsigned gemm_threads();

}  // namespace abn
