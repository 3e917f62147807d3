#include "doctest.h"

#include <fstream>
#include <set>
#include <sstream>

#include "sslseg/errors.hpp"
#include "sslseg/pairsets.hpp"

using namespace sslseg;

namespace {

DatasetLayout layout(int volumes, int depth, int S) {
  DatasetLayout l;
  l.depths.assign(static_cast<std::size_t>(volumes), depth);
  l.partitions = S;
  return l;
}

int choose2(int m) { return m * (m - 1) / 2; }

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("G^R cardinalities") {
  Rng rng(1);
  for (int n : {2, 5, 20}) {
    const auto plan = compose_global_GR(layout(4, 10, 1), n, rng);
    plan.validate();
    CHECK(plan.items.size() == static_cast<std::size_t>(2 * n));
    CHECK(plan.positives.size() == static_cast<std::size_t>(n));
    for (const auto& neg : plan.negatives_of) CHECK(neg.size() == static_cast<std::size_t>(2 * n - 2));
  }
  CHECK_THROWS_AS(compose_global_GR(layout(4, 10, 1), 1, rng), ConfigError);
  CHECK_THROWS_AS(compose_global_GR(layout(1, 3, 1), 4, rng), ConfigError);
}

TEST_CASE("G^R draws distinct slices") {
  Rng rng(2);
  const auto plan = compose_global_GR(layout(3, 5, 1), 15, rng);
  std::set<std::pair<int, int>> seen;
  for (std::size_t k = 0; k < plan.items.size(); k += 2) {
    CHECK(plan.items[k].volume == plan.items[k + 1].volume);
    CHECK(plan.items[k].slice == plan.items[k + 1].slice);
    CHECK(seen.insert({plan.items[k].volume, plan.items[k].slice}).second);
  }
}

TEST_CASE("G^D- and G^D cardinalities, exhaustive") {
  for (int m = 1; m <= 4; ++m) {
    for (int S = 2; S <= 6; ++S) {
      CAPTURE(m);
      CAPTURE(S);
      Rng r1(static_cast<std::uint64_t>(10 * m + S)), r2(static_cast<std::uint64_t>(10 * m + S));
      const auto l = layout(5, 12, S);
      const auto gdm = compose_global_GDminus(l, m, r1);
      const auto gd = compose_global_GD(l, m, r2);
      gdm.validate();
      gd.validate();
      CHECK(gdm.items.size() == static_cast<std::size_t>(3 * m * S));
      CHECK(gdm.positives.size() == static_cast<std::size_t>(3 * m * S));
      CHECK(gd.positives.size() == static_cast<std::size_t>(3 * m * S + 2 * choose2(m) * S));
      for (const auto* plan : {&gdm, &gd}) {
        for (std::size_t p = 0; p < plan->positives.size(); ++p) {
          const int s = plan->items[static_cast<std::size_t>(plan->positives[p].first)].partition;
          CHECK(plan->items[static_cast<std::size_t>(plan->positives[p].second)].partition == s);
          CHECK(plan->negatives_of[p].size() == static_cast<std::size_t>(3 * m * (S - 1)));
          for (int k : plan->negatives_of[p]) CHECK(plan->items[static_cast<std::size_t>(k)].partition != s);
        }
      }
      if (m == 1) CHECK(gd == gdm);
    }
  }
}

TEST_CASE("G^D spot values") {
  Rng rng(4);
  CHECK(compose_global_GD(layout(3, 8, 4), 2, rng).positives.size() == 32);
  CHECK(compose_global_GD(layout(3, 8, 2), 3, rng).positives.size() == 30);
  const auto small = compose_global_GDminus(layout(2, 4, 2), 1, rng);
  CHECK(small.items.size() == 6);
  CHECK(small.negatives_of[0].size() == 3);
  CHECK_THROWS_AS(compose_global_GDminus(layout(3, 8, 1), 2, rng), ConfigError);
  CHECK_THROWS_AS(compose_global_GD(layout(3, 8, 1), 2, rng), ConfigError);
}

TEST_CASE("plans are deterministic given the rng") {
  Rng a(77), b(77);
  CHECK(compose_global_GD(layout(6, 12, 3), 3, a) == compose_global_GD(layout(6, 12, 3), 3, b));
}

TEST_CASE("plan validation rejects malformed plans") {
  Rng rng(1);
  auto plan = compose_global_GDminus(layout(2, 6, 2), 1, rng);
  auto bad = plan;
  bad.negatives_of[0].push_back(bad.positives[0].second);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = plan;
  bad.positives[0].second = bad.positives[0].first;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = plan;
  bad.negatives_of[0].push_back(99);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("region grid") {
  Rng rng(3);
  const auto full = make_region_grid(6, 6, 4, 3, 4, rng);
  REQUIRE(full.count() == 4);
  CHECK(full.cells[0] == RegionCell{0, 0, 0, 0});
  CHECK(full.cells[3] == RegionCell{1, 1, 3, 3});
  const auto part = make_region_grid(12, 12, 4, 3, 13, rng);
  CHECK(part.count() == 13);
  std::set<std::pair<int, int>> seen;
  for (const auto& c : part.cells) {
    CHECK(seen.insert({c.u, c.v}).second);
    CHECK(c.u % 3 == 0);
    CHECK(c.v % 3 == 0);
    CHECK(c.u + 3 <= 12);
    CHECK(c.v + 3 <= 12);
  }
  CHECK_THROWS_AS(make_region_grid(6, 6, 4, 3, 5, rng), ConfigError);
  CHECK_THROWS_AS(make_region_grid(6, 6, 4, 7, 1, rng), ConfigError);
}

TEST_CASE("L^R cardinalities") {
  Rng rng(8);
  for (int A = 2; A <= 16; ++A) {
    const auto grid = make_region_grid(16, 16, 2, 4, A, rng);
    for (int B : {1, 3}) {
      const auto plan = compose_local_LR(B, grid);
      plan.validate();
      CHECK(plan.positives.size() == static_cast<std::size_t>(A * B));
      for (std::size_t p = 0; p < plan.positives.size(); ++p) {
        CHECK(plan.negatives_of[p].size() == static_cast<std::size_t>(2 * (A - 1)));
        CHECK(plan.negatives_of_reversed[p].size() == static_cast<std::size_t>(2 * (A - 1)));
      }
    }
  }
}

TEST_CASE("L^D cardinalities and errors") {
  Rng rng(9);
  for (int A = 2; A <= 16; ++A) {
    const auto grid = make_region_grid(16, 16, 2, 4, A, rng);
    const auto plan = compose_local_LD({{0, 1}, {1, 1}}, grid);
    plan.validate();
    // A within-image pairs per source, 2 cross-volume pairs per cell.
    CHECK(plan.positives.size() == static_cast<std::size_t>(2 * A + 2 * A));
    for (std::size_t p = 0; p < plan.positives.size(); ++p) {
      const auto& pp = plan.positives[p];
      const bool cross = pp.map_a / 3 != pp.map_b / 3;
      CHECK(plan.negatives_of[p].size() == static_cast<std::size_t>((cross ? 4 : 2) * (A - 1)));
    }
  }
  const auto grid = make_region_grid(4, 4, 2, 2, 4, rng);
  CHECK_THROWS_AS(compose_local_LD({{0, 0}}, grid), ConfigError);
  CHECK_THROWS_AS(compose_local_LD({{0, 0}, {1, 1}}, grid), ConfigError);
  CHECK_THROWS_AS(compose_local_LD({{0, 0}, {0, 0}}, grid), ConfigError);
}

TEST_CASE("region exclusion and negative-map switches") {
  Rng rng(5);
  const auto grid = make_region_grid(9, 9, 2, 3, 9, rng);
  RegionPlanOptions strict;
  strict.exclusion = RegionExclusion::same_row_or_col;
  const auto plan = compose_local_LR(1, grid, strict);
  // 3 x 3 grid: cells sharing neither row nor column with a given cell number 4.
  for (const auto& neg : plan.negatives_of) CHECK(neg.size() == 8);
  RegionPlanOptions second;
  second.negative_maps = RegionNegativeMaps::second_only;
  const auto p2 = compose_local_LR(1, grid, second);
  for (std::size_t p = 0; p < p2.positives.size(); ++p) {
    CHECK(p2.negatives_of[p].size() == 8);
    for (const auto& r : p2.negatives_of[p]) CHECK(r.map == p2.positives[p].map_b);
    for (const auto& r : p2.negatives_of_reversed[p]) CHECK(r.map == p2.positives[p].map_a);
  }
}

TEST_CASE("golden plan dumps") {
  Rng rng(42);
  const auto plan = compose_global_GD(layout(3, 4, 2), 2, rng);
  CHECK(to_string(plan) == read_file(SSLSEG_TEST_DATA_DIR "/golden_gd_m2_s2.txt"));
  Rng rng2(42);
  const auto grid = make_region_grid(4, 4, 2, 2, 3, rng2);
  const auto rplan = compose_local_LR(1, grid);
  CHECK(to_string(rplan) == read_file(SSLSEG_TEST_DATA_DIR "/golden_lr_a3.txt"));
}
