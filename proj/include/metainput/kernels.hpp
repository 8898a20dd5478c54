#pragma once

#include <cstddef>
#include <vector>

// Plain sequential GEMM loops. Every reduction runs in a fixed order so a
// given build produces bit-identical results run to run.
namespace metainput::kernels {

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
                    const float* __restrict a, const float* __restrict b,
                    float* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    float* __restrict crow = c + i * n;
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      const float* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
                    const float* __restrict a, const float* __restrict b,
                    float* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    const float* __restrict brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      float* __restrict crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T. B is transposed once so the inner loop runs
// over contiguous memory.
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
                    const float* __restrict a, const float* __restrict b,
                    float* __restrict c) {
  std::vector<float> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(m, k, n, a, bt.data(), c);
}

}  // namespace metainput::kernels
