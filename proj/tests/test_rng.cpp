#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "sslseg/rng.hpp"

using sslseg::Rng;

TEST_CASE("same seed gives the same stream") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    (void)c;
  }
  Rng d(42), e(43);
  CHECK(d.next_u64() != e.next_u64());
}

TEST_CASE("splitmix64 reference values") {
  // First outputs for state 0, from the reference implementation.
  std::uint64_t s = 0;
  CHECK(sslseg::splitmix64(s) == 0xe220a8397b1dcdafULL);
  CHECK(sslseg::splitmix64(s) == 0x6e789e6aa1b965f4ULL);
  CHECK(sslseg::splitmix64(s) == 0x06c45d188009454fULL);
}

TEST_CASE("derived streams differ and are reproducible") {
  CHECK(Rng::derive(7, 1) == Rng::derive(7, 1));
  CHECK_FALSE(Rng::derive(7, 1) == Rng::derive(7, 2));
  CHECK_FALSE(Rng::derive(7, 1) == Rng::derive(8, 1));
}

TEST_CASE("uniform lies in [0, 1) with the right mean") {
  Rng r(1);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.005);
}

TEST_CASE("below is unbiased over a small range") {
  Rng r(2);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(r.below(7))];
  for (int c : counts) CHECK(std::abs(c - n / 7) < 400);
}

TEST_CASE("normal moments") {
  Rng r(3);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("beta moments") {
  Rng r(4);
  for (double a : {0.2, 1.0, 2.5}) {
    double s = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const double x = r.beta(a, a);
      REQUIRE(x >= 0.0);
      REQUIRE(x <= 1.0);
      s += x;
    }
    CHECK(std::abs(s / n - 0.5) < 0.01);
  }
  double s = 0;
  for (int i = 0; i < 100000; ++i) s += r.beta(2.0, 6.0);
  CHECK(std::abs(s / 100000 - 0.25) < 0.005);
}

TEST_CASE("sample_without_replacement returns distinct in-range values") {
  Rng r(5);
  for (int k = 0; k <= 10; ++k) {
    auto v = r.sample_without_replacement(10, k);
    CHECK(v.size() == static_cast<std::size_t>(k));
    std::set<int> s(v.begin(), v.end());
    CHECK(s.size() == v.size());
    for (int x : v) CHECK((x >= 0 && x < 10));
  }
}

TEST_CASE("state save and restore replays the stream") {
  Rng r(9);
  r.next_u64();
  const auto st = r.state();
  const double a = r.uniform();
  Rng q(0);
  q.set_state(st);
  CHECK(q.uniform() == a);
}

TEST_CASE("shuffle is a permutation") {
  Rng r(6);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  r.shuffle(v);
  std::vector<int> s = v;
  std::sort(s.begin(), s.end());
  CHECK(s == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
}
