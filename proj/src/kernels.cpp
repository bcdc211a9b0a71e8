#include "spdp/kernels.hpp"

#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace spdp::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 16;

inline bool softmax_row(std::size_t cols, const double* x, double* y) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = x[j] > mx ? x[j] : mx;
    if (!std::isfinite(mx)) return false;
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        const double e = std::isinf(x[j]) && x[j] < 0 ? 0.0 : std::exp(x[j] - mx);
        y[j] = e;
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
    return true;
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void gemm_nn(std::size_t M, std::size_t N, std::size_t K,
             const double* __restrict A, const double* __restrict B, double* __restrict C) {
    const long rows = static_cast<long>(M);
#pragma omp parallel for schedule(static) if (M * N * K >= kParallelWork)
    for (long i = 0; i < rows; ++i) {
        double* __restrict c = C + i * N;
        const double* a = A + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const double av = a[k];
            const double* __restrict b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C) {
    // Transposing B once turns the strided dot products into contiguous axpys.
    std::vector<double> bt(K * N);
    for (std::size_t j = 0; j < N; ++j)
        for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = B[j * K + k];
    gemm_nn(M, N, K, A, bt.data(), C);
}

void gemm_tn(std::size_t P, std::size_t Q, std::size_t R,
             const double* __restrict A, const double* __restrict B, double* __restrict C) {
    const long rows = static_cast<long>(P);
#pragma omp parallel for schedule(static) if (P * Q * R >= kParallelWork)
    for (long p = 0; p < rows; ++p) {
        double* __restrict c = C + p * Q;
        for (std::size_t r = 0; r < R; ++r) {
            const double av = A[r * P + p];
            if (av == 0.0) continue;
            const double* __restrict b = B + r * Q;
            for (std::size_t q = 0; q < Q; ++q) c[q] += av * b[q];
        }
    }
}

bool softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y) {
    bool ok = true;
    const long n = static_cast<long>(rows);
#pragma omp parallel for schedule(static) reduction(&& : ok) if (rows * cols >= kParallelWork)
    for (long i = 0; i < n; ++i) ok = softmax_row(cols, x + i * cols, y + i * cols) && ok;
    return ok;
}

namespace reference {

void gemm_nn(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            double s = C[i * N + j];
            for (std::size_t k = 0; k < K; ++k) s += A[i * K + k] * B[k * N + j];
            C[i * N + j] = s;
        }
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
             const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            double s = C[i * N + j];
            for (std::size_t k = 0; k < K; ++k) s += A[i * K + k] * B[j * K + k];
            C[i * N + j] = s;
        }
}

void gemm_tn(std::size_t P, std::size_t Q, std::size_t R,
             const double* A, const double* B, double* C) {
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t q = 0; q < Q; ++q) {
            double s = C[p * Q + q];
            for (std::size_t r = 0; r < R; ++r) s += A[r * P + p] * B[r * Q + q];
            C[p * Q + q] = s;
        }
}

bool softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y) {
    bool ok = true;
    for (std::size_t i = 0; i < rows; ++i) ok = softmax_row(cols, x + i * cols, y + i * cols) && ok;
    return ok;
}

}  // namespace reference

}  // namespace spdp::kernels
