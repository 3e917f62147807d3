#include "doctest.h"

#include <cmath>
#include <vector>

#include "sslseg/errors.hpp"
#include "sslseg/rng.hpp"
#include "sslseg/simd.hpp"

using namespace sslseg;
using namespace sslseg::simd;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& r) {
  std::vector<double> v(n);
  for (double& x : v) x = r.uniform(-1.0, 1.0);
  return v;
}

// Plain triple loop, independent of the kernel tables.
std::vector<double> naive_gemm(int M, int N, int K, const std::vector<double>& A, bool at,
                               const std::vector<double>& B, bool bt, std::vector<double> C) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      double s = 0.0;
      for (int k = 0; k < K; ++k) {
        const double a = at ? A[static_cast<std::size_t>(k * M + i)] : A[static_cast<std::size_t>(i * K + k)];
        const double b = bt ? B[static_cast<std::size_t>(j * K + k)] : B[static_cast<std::size_t>(k * N + j)];
        s += a * b;
      }
      C[static_cast<std::size_t>(i * N + j)] += s;
    }
  return C;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return m;
}

std::vector<const KernelTable*> tables() {
  std::vector<const KernelTable*> out{&scalar_kernels()};
  if (isa_supported(Isa::avx2)) out.push_back(avx2_kernels());
  return out;
}

}  // namespace

TEST_CASE("every table matches the naive reference") {
  Rng r(1);
  const int shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 8, 16}, {5, 9, 3}, {13, 17, 29}, {8, 1024, 72}, {16, 33, 1}};
  for (const auto* t : tables()) {
    CAPTURE(isa_name(t->isa));
    for (const auto& s : shapes) {
      const int M = s[0], N = s[1], K = s[2];
      CAPTURE(M);
      CAPTURE(N);
      CAPTURE(K);
      const auto A = random_vec(static_cast<std::size_t>(M * K), r);
      const auto B = random_vec(static_cast<std::size_t>(K * N), r);
      const auto C0 = random_vec(static_cast<std::size_t>(M * N), r);
      auto C = C0;
      t->gemm_nn(M, N, K, A.data(), B.data(), C.data());
      CHECK(max_rel(C, naive_gemm(M, N, K, A, false, B, false, C0)) < 1e-13);
      C = C0;
      t->gemm_nt(M, N, K, A.data(), B.data(), C.data());
      CHECK(max_rel(C, naive_gemm(M, N, K, A, false, B, true, C0)) < 1e-13);
      C = C0;
      t->gemm_tn(M, N, K, A.data(), B.data(), C.data());
      CHECK(max_rel(C, naive_gemm(M, N, K, A, true, B, false, C0)) < 1e-13);
    }
    for (std::size_t n : {0u, 1u, 3u, 4u, 15u, 16u, 17u, 1000u}) {
      const auto x = random_vec(n, r), y0 = random_vec(n, r);
      double ref = 0.0;
      for (std::size_t i = 0; i < n; ++i) ref += x[i] * y0[i];
      CHECK(std::abs(t->dot(x.data(), y0.data(), n) - ref) < 1e-12);
      auto y = y0;
      t->axpy(0.75, x.data(), y.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y[i] - (y0[i] + 0.75 * x[i])) < 1e-15);
    }
  }
}

TEST_CASE("avx2 agrees with scalar within FMA rounding") {
  if (!isa_supported(Isa::avx2)) return;
  const KernelTable& s = scalar_kernels();
  const KernelTable& v = *avx2_kernels();
  Rng r(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int M = 1 + r.below_int(20), N = 1 + r.below_int(70), K = 1 + r.below_int(90);
    const auto A = random_vec(static_cast<std::size_t>(M * K), r);
    const auto B = random_vec(static_cast<std::size_t>(K * N), r);
    std::vector<double> c1(static_cast<std::size_t>(M * N), 0.5), c2 = c1;
    s.gemm_nn(M, N, K, A.data(), B.data(), c1.data());
    v.gemm_nn(M, N, K, A.data(), B.data(), c2.data());
    CHECK(max_rel(c1, c2) < 1e-13);
    std::fill(c1.begin(), c1.end(), 0.0);
    std::fill(c2.begin(), c2.end(), 0.0);
    s.gemm_tn(M, N, K, A.data(), B.data(), c1.data());
    v.gemm_tn(M, N, K, A.data(), B.data(), c2.data());
    CHECK(max_rel(c1, c2) < 1e-13);
    std::fill(c1.begin(), c1.end(), 0.0);
    std::fill(c2.begin(), c2.end(), 0.0);
    s.gemm_nt(M, N, K, A.data(), B.data(), c1.data());
    v.gemm_nt(M, N, K, A.data(), B.data(), c2.data());
    CHECK(max_rel(c1, c2) < 1e-13);
  }
}

TEST_CASE("integer-valued inputs are exact in every variant") {
  Rng r(3);
  const int M = 7, N = 19, K = 11;
  std::vector<double> A(M * K), B(K * N);
  for (double& x : A) x = r.below_int(9) - 4;
  for (double& x : B) x = r.below_int(9) - 4;
  const auto ref = naive_gemm(M, N, K, A, false, B, false, std::vector<double>(M * N, 0.0));
  for (const auto* t : tables()) {
    std::vector<double> C(M * N, 0.0);
    t->gemm_nn(M, N, K, A.data(), B.data(), C.data());
    CHECK(C == ref);
  }
}

TEST_CASE("dispatch can be overridden and restored") {
  const Isa before = active_isa();
  set_isa(Isa::scalar);
  CHECK(active_isa() == Isa::scalar);
  CHECK(kernels().isa == Isa::scalar);
  if (isa_supported(Isa::avx2)) {
    set_isa(Isa::avx2);
    CHECK(active_isa() == Isa::avx2);
  } else {
    CHECK_THROWS_AS(set_isa(Isa::avx2), ConfigError);
  }
  set_isa(before);
  CHECK(supported_isas().front() == Isa::scalar);
}
