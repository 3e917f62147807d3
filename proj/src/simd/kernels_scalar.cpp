#include <cstddef>

#include "sslseg/simd.hpp"

namespace sslseg::simd {
namespace {

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C) {
  for (int i = 0; i < M; ++i) {
    double* c = C + static_cast<std::ptrdiff_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const double a = A[static_cast<std::ptrdiff_t>(i) * K + k];
      const double* b = B + static_cast<std::ptrdiff_t>(k) * N;
      for (int j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C) {
  for (int i = 0; i < M; ++i) {
    const double* a = A + static_cast<std::ptrdiff_t>(i) * K;
    for (int j = 0; j < N; ++j) {
      C[static_cast<std::ptrdiff_t>(i) * N + j] +=
          dot(a, B + static_cast<std::ptrdiff_t>(j) * K, static_cast<std::size_t>(K));
    }
  }
}

void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C) {
  for (int i = 0; i < M; ++i) {
    double* c = C + static_cast<std::ptrdiff_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const double a = A[static_cast<std::ptrdiff_t>(k) * M + i];
      const double* b = B + static_cast<std::ptrdiff_t>(k) * N;
      for (int j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::scalar, dot, axpy, gemm_nn, gemm_nt, gemm_tn};
  return table;
}

}  // namespace sslseg::simd
