#pragma once

#include <cstdint>

namespace ct {

// Small row-major GEMM kernels, accumulate into C. Loop orders are chosen so
// the innermost loop is contiguous in both the streamed operand and C, which
// lets the compiler vectorize them; at the layer sizes used here that is
// enough to keep convolution off the critical path.

// C[M,N] += A[M,K] @ B[K,N]
template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* __restrict__ A, const T* __restrict__ B,
             T* __restrict__ C) {
    for (int64_t m = 0; m < M; ++m) {
        T* c = C + m * N;
        const T* a = A + m * K;
        for (int64_t k = 0; k < K; ++k) {
            const T av = a[k];
            const T* b = B + k * N;
            for (int64_t n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

// C[M,N] += A[M,K] @ B[N,K]^T   (dot products of contiguous rows)
// The fixed-width lane accumulator pins a summation order the compiler can
// map directly onto vector registers; plain serial reduction is not
// vectorizable under strict FP semantics.
template <typename T>
void gemm_nt(int64_t M, int64_t N, int64_t K, const T* __restrict__ A, const T* __restrict__ B,
             T* __restrict__ C) {
    constexpr int64_t L = 16;
    for (int64_t m = 0; m < M; ++m) {
        const T* a = A + m * K;
        T* c = C + m * N;
        for (int64_t n = 0; n < N; ++n) {
            const T* b = B + n * K;
            T lanes[L] = {};
            int64_t k = 0;
            for (; k + L <= K; k += L)
                for (int64_t j = 0; j < L; ++j) lanes[j] += a[k + j] * b[k + j];
            T acc = T(0);
            for (; k < K; ++k) acc += a[k] * b[k];
            for (int64_t j = 0; j < L; ++j) acc += lanes[j];
            c[n] += acc;
        }
    }
}

// C[M,N] += A[K,M]^T @ B[K,N]
template <typename T>
void gemm_tn(int64_t M, int64_t N, int64_t K, const T* __restrict__ A, const T* __restrict__ B,
             T* __restrict__ C) {
    for (int64_t k = 0; k < K; ++k) {
        const T* a = A + k * M;
        const T* b = B + k * N;
        for (int64_t m = 0; m < M; ++m) {
            const T av = a[m];
            T* c = C + m * N;
            for (int64_t n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

}  // namespace ct
