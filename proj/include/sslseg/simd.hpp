#pragma once

// Dense double-precision kernels behind a runtime-dispatched function table.
//
// Every kernel exists as a portable scalar reference and, on x86-64 hosts
// with AVX2+FMA, as a vectorized variant. Both variants accumulate in the
// same order along the reduction axis for the gemm_nn/gemm_tn/axpy family,
// so they differ only by FMA rounding; dot/gemm_nt use lane-split partial
// sums. tests/test_simd.cpp checks the two against each other.
//
// Matrices are row-major and densely packed.

#include <cstddef>
#include <string_view>
#include <vector>

namespace sslseg::simd {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // C[M x N] += A[M x K] * B[K x N]
  void (*gemm_nn)(int M, int N, int K, const double* A, const double* B, double* C);
  // C[M x N] += A[M x K] * B[N x K]^T
  void (*gemm_nt)(int M, int N, int K, const double* A, const double* B, double* C);
  // C[M x N] += A[K x M]^T * B[K x N]
  void (*gemm_tn)(int M, int N, int K, const double* A, const double* B, double* C);
};

const KernelTable& scalar_kernels();
// Null when the binary was built without the AVX2 translation unit.
const KernelTable* avx2_kernels();

// True when the running CPU can execute the given variant.
bool isa_supported(Isa isa);
std::vector<Isa> supported_isas();
std::string_view isa_name(Isa isa);

// The active table. Selected on first use: the SSLSEG_ISA environment variable
// ("scalar" or "avx2") wins when supported, otherwise the widest supported ISA.
const KernelTable& kernels();

// Overrides the active table (process-wide). Throws ConfigError when the CPU
// cannot run `isa`. Intended for tests and the CLI; not thread-safe with
// respect to concurrently running kernels.
void set_isa(Isa isa);
Isa active_isa();

}  // namespace sslseg::simd
