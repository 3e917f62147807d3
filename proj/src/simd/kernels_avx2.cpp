// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "sslseg/simd.hpp"

namespace sslseg::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
  __m256d a2 = _mm256_setzero_pd(), a3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
    a1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), a1);
    a2 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 8), _mm256_loadu_pd(y + i + 8), a2);
    a3 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 12), _mm256_loadu_pd(y + i + 12), a3);
  }
  for (; i + 4 <= n; i += 4) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
  }
  double s = hsum(_mm256_add_pd(_mm256_add_pd(a0, a1), _mm256_add_pd(a2, a3)));
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4,
                     _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

// Shared 4x8 register-blocked update for gemm_nn and gemm_tn. `a_at(i, k)`
// addresses A in whichever layout the caller has.
template <typename AAt>
inline void gemm_rank_update(int M, int N, int K, AAt a_at, const double* B, double* C) {
  int i = 0;
  for (; i + 4 <= M; i += 4) {
    double* c0 = C + static_cast<std::ptrdiff_t>(i) * N;
    double* c1 = c0 + N;
    double* c2 = c1 + N;
    double* c3 = c2 + N;
    int j = 0;
    for (; j + 8 <= N; j += 8) {
      __m256d r00 = _mm256_loadu_pd(c0 + j), r01 = _mm256_loadu_pd(c0 + j + 4);
      __m256d r10 = _mm256_loadu_pd(c1 + j), r11 = _mm256_loadu_pd(c1 + j + 4);
      __m256d r20 = _mm256_loadu_pd(c2 + j), r21 = _mm256_loadu_pd(c2 + j + 4);
      __m256d r30 = _mm256_loadu_pd(c3 + j), r31 = _mm256_loadu_pd(c3 + j + 4);
      for (int k = 0; k < K; ++k) {
        const double* b = B + static_cast<std::ptrdiff_t>(k) * N + j;
        const __m256d b0 = _mm256_loadu_pd(b);
        const __m256d b1 = _mm256_loadu_pd(b + 4);
        __m256d a = _mm256_set1_pd(a_at(i, k));
        r00 = _mm256_fmadd_pd(a, b0, r00);
        r01 = _mm256_fmadd_pd(a, b1, r01);
        a = _mm256_set1_pd(a_at(i + 1, k));
        r10 = _mm256_fmadd_pd(a, b0, r10);
        r11 = _mm256_fmadd_pd(a, b1, r11);
        a = _mm256_set1_pd(a_at(i + 2, k));
        r20 = _mm256_fmadd_pd(a, b0, r20);
        r21 = _mm256_fmadd_pd(a, b1, r21);
        a = _mm256_set1_pd(a_at(i + 3, k));
        r30 = _mm256_fmadd_pd(a, b0, r30);
        r31 = _mm256_fmadd_pd(a, b1, r31);
      }
      _mm256_storeu_pd(c0 + j, r00), _mm256_storeu_pd(c0 + j + 4, r01);
      _mm256_storeu_pd(c1 + j, r10), _mm256_storeu_pd(c1 + j + 4, r11);
      _mm256_storeu_pd(c2 + j, r20), _mm256_storeu_pd(c2 + j + 4, r21);
      _mm256_storeu_pd(c3 + j, r30), _mm256_storeu_pd(c3 + j + 4, r31);
    }
    for (int r = 0; r < 4; ++r) {
      double* c = C + static_cast<std::ptrdiff_t>(i + r) * N;
      for (int jj = j; jj < N; ++jj) {
        double acc = c[jj];
        for (int k = 0; k < K; ++k) acc = std::fma(a_at(i + r, k), B[static_cast<std::ptrdiff_t>(k) * N + jj], acc);
        c[jj] = acc;
      }
    }
  }
  for (; i < M; ++i) {
    double* c = C + static_cast<std::ptrdiff_t>(i) * N;
    int j = 0;
    for (; j + 4 <= N; j += 4) {
      __m256d r = _mm256_loadu_pd(c + j);
      for (int k = 0; k < K; ++k) {
        r = _mm256_fmadd_pd(_mm256_set1_pd(a_at(i, k)),
                            _mm256_loadu_pd(B + static_cast<std::ptrdiff_t>(k) * N + j), r);
      }
      _mm256_storeu_pd(c + j, r);
    }
    for (; j < N; ++j) {
      double acc = c[j];
      for (int k = 0; k < K; ++k) acc = std::fma(a_at(i, k), B[static_cast<std::ptrdiff_t>(k) * N + j], acc);
      c[j] = acc;
    }
  }
}

void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C) {
  gemm_rank_update(
      M, N, K, [A, K](int i, int k) { return A[static_cast<std::ptrdiff_t>(i) * K + k]; }, B, C);
}

void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C) {
  gemm_rank_update(
      M, N, K, [A, M](int i, int k) { return A[static_cast<std::ptrdiff_t>(k) * M + i]; }, B, C);
}

void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C) {
  for (int i = 0; i < M; ++i) {
    const double* a = A + static_cast<std::ptrdiff_t>(i) * K;
    double* c = C + static_cast<std::ptrdiff_t>(i) * N;
    int j = 0;
    for (; j + 4 <= N; j += 4) {
      const double* b0 = B + static_cast<std::ptrdiff_t>(j) * K;
      const double* b1 = b0 + K;
      const double* b2 = b1 + K;
      const double* b3 = b2 + K;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      int k = 0;
      for (; k + 4 <= K; k += 4) {
        const __m256d va = _mm256_loadu_pd(a + k);
        s0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b0 + k), s0);
        s1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b1 + k), s1);
        s2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b2 + k), s2);
        s3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b3 + k), s3);
      }
      double t0 = hsum(s0), t1 = hsum(s1), t2 = hsum(s2), t3 = hsum(s3);
      for (; k < K; ++k) {
        t0 = std::fma(a[k], b0[k], t0);
        t1 = std::fma(a[k], b1[k], t1);
        t2 = std::fma(a[k], b2[k], t2);
        t3 = std::fma(a[k], b3[k], t3);
      }
      c[j] += t0;
      c[j + 1] += t1;
      c[j + 2] += t2;
      c[j + 3] += t3;
    }
    for (; j < N; ++j) c[j] += dot(a, B + static_cast<std::ptrdiff_t>(j) * K, static_cast<std::size_t>(K));
  }
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{Isa::avx2, dot, axpy, gemm_nn, gemm_nt, gemm_tn};
  return &table;
}

}  // namespace sslseg::simd
