#pragma once

#include <cstddef>
#include <span>

// Dense row-major kernels used by the autodiff engine.
//
// Two implementations share one contract:
//   spdp::kernels             OpenMP-parallel over output rows (production path)
//   spdp::kernels::reference  plain serial loops, kept for tests and benchmarks
//
// Every kernel accumulates into C (C += ...). Each output element is summed in
// ascending order of the reduction index in both variants, so the parallel
// kernels give the same bits for any thread count.

namespace spdp::kernels {

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C);

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C);

// C[P,Q] += A[R,P]^T * B[R,Q]
void gemm_tn(std::size_t P, std::size_t Q, std::size_t R,
             const double* A, const double* B, double* C);

// Row softmax over `cols` entries for each of `rows` rows. Entries equal to
// -inf get probability exactly 0. Returns false if some row has no finite entry.
bool softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y);

// Number of threads the parallel kernels would use.
int max_threads();

namespace reference {

void gemm_nn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C);
void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C);
void gemm_tn(std::size_t P, std::size_t Q, std::size_t R,
             const double* A, const double* B, double* C);
bool softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y);

}  // namespace reference

}  // namespace spdp::kernels
