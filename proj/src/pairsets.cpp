#include "sslseg/pairsets.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "sslseg/errors.hpp"

namespace sslseg {

namespace {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::orig: return "orig";
    case Variant::tilde: return "tilde";
    case Variant::hat: return "hat";
  }
  return "?";
}

std::vector<Partitioning> partitionings(const DatasetLayout& layout) {
  std::vector<Partitioning> out;
  out.reserve(layout.depths.size());
  for (int d : layout.depths) out.push_back(partition_volume(d, layout.partitions));
  return out;
}

// Items and the pairs shared by G^D- and G^D. Items are grouped per
// (volume, partition) as orig, tilde, hat.
BatchPlan compose_partitioned(const DatasetLayout& layout, int volumes, Rng& rng, bool cross_volume) {
  if (layout.partitions < 2)
    throw ConfigError("G^D/G^D- need S >= 2 partitions (negative set would be empty)");
  if (volumes < 1 || volumes > layout.num_volumes())
    throw ConfigError("G^D/G^D-: sampled volume count must lie in [1, " +
                      std::to_string(layout.num_volumes()) + "]");
  const auto parts = partitionings(layout);
  const int S = layout.partitions;

  BatchPlan plan;
  const std::vector<int> chosen = rng.sample_without_replacement(layout.num_volumes(), volumes);
  for (int vol : chosen) {
    const Partitioning& p = parts[static_cast<std::size_t>(vol)];
    for (int s = 0; s < S; ++s) {
      const SliceRange r = p.bounds[static_cast<std::size_t>(s)];
      const int slice = r.begin + rng.below_int(r.size());
      for (Variant var : {Variant::orig, Variant::tilde, Variant::hat})
        plan.items.push_back({vol, s, var, slice});
    }
  }
  auto index_of = [S](int vi, int s, int var) { return (vi * S + s) * 3 + var; };

  for (int vi = 0; vi < volumes; ++vi) {
    for (int s = 0; s < S; ++s) {
      const int o = index_of(vi, s, 0), t = index_of(vi, s, 1), h = index_of(vi, s, 2);
      plan.positives.push_back({o, t});
      plan.positives.push_back({o, h});
      plan.positives.push_back({t, h});
    }
  }
  if (cross_volume) {
    for (int s = 0; s < S; ++s) {
      for (int vi = 0; vi < volumes; ++vi) {
        for (int vj = vi + 1; vj < volumes; ++vj) {
          plan.positives.push_back({index_of(vi, s, 0), index_of(vj, s, 0)});
          plan.positives.push_back({index_of(vi, s, 1), index_of(vj, s, 2)});
        }
      }
    }
  }
  for (const auto& [a, b] : plan.positives) {
    (void)b;
    const int s = plan.items[static_cast<std::size_t>(a)].partition;
    std::vector<int> neg;
    for (int k = 0; k < static_cast<int>(plan.items.size()); ++k)
      if (plan.items[static_cast<std::size_t>(k)].partition != s) neg.push_back(k);
    plan.negatives_of.push_back(std::move(neg));
  }
  return plan;
}

std::vector<int> excluded_cells(const RegionGrid& grid, int cell, RegionExclusion rule) {
  const RegionCell& c = grid.cells[static_cast<std::size_t>(cell)];
  std::vector<int> out;
  for (int k = 0; k < grid.count(); ++k) {
    const RegionCell& o = grid.cells[static_cast<std::size_t>(k)];
    const bool keep = rule == RegionExclusion::same_cell ? k != cell : (o.row != c.row && o.col != c.col);
    if (keep) out.push_back(k);
  }
  return out;
}

// Negatives for a region pair given the group of maps that may contribute.
void add_region_pair(RegionPlan& plan, int map_a, int map_b, int cell, const std::vector<int>& group,
                     const RegionPlanOptions& opts) {
  const std::vector<int> cells = excluded_cells(plan.grid, cell, opts.exclusion);
  auto build = [&](const std::vector<int>& maps) {
    std::vector<RegionRef> out;
    for (int m : maps)
      for (int k : cells) out.push_back({m, k});
    return out;
  };
  plan.positives.push_back({map_a, map_b, cell});
  if (opts.negative_maps == RegionNegativeMaps::all_listed) {
    auto neg = build(group);
    plan.negatives_of.push_back(neg);
    plan.negatives_of_reversed.push_back(std::move(neg));
  } else {
    plan.negatives_of.push_back(build({map_b}));
    plan.negatives_of_reversed.push_back(build({map_a}));
  }
}

}  // namespace

int BatchPlan::num_sources() const {
  std::set<std::pair<int, int>> seen;
  for (const auto& it : items) seen.insert({it.volume, it.slice});
  return static_cast<int>(seen.size());
}

void BatchPlan::validate() const {
  const int n = static_cast<int>(items.size());
  if (negatives_of.size() != positives.size())
    throw ConfigError("batch plan: one negative list per positive pair required");
  for (std::size_t p = 0; p < positives.size(); ++p) {
    const auto [a, b] = positives[p];
    if (a < 0 || a >= n || b < 0 || b >= n) throw ConfigError("batch plan: positive index out of range");
    if (a == b) throw ConfigError("batch plan: positive pair references one item twice");
    for (int k : negatives_of[p]) {
      if (k < 0 || k >= n) throw ConfigError("batch plan: negative index out of range");
      if (k == a || k == b) throw ConfigError("batch plan: positive pair appears in its own negatives");
    }
  }
}

BatchPlan compose_global_GR(const DatasetLayout& layout, int num_images, Rng& rng) {
  if (num_images < 2) throw ConfigError("G^R needs N >= 2 images (no negatives otherwise)");
  int total = 0;
  for (int d : layout.depths) total += d;
  if (num_images > total) throw ConfigError("G^R: N exceeds the number of available slices");
  const auto parts = partitionings(layout);

  BatchPlan plan;
  for (int flat : rng.sample_without_replacement(total, num_images)) {
    int vol = 0;
    while (flat >= layout.depths[static_cast<std::size_t>(vol)]) flat -= layout.depths[static_cast<std::size_t>(vol++)];
    const int s = parts[static_cast<std::size_t>(vol)].partition_of(flat);
    plan.items.push_back({vol, s, Variant::tilde, flat});
    plan.items.push_back({vol, s, Variant::hat, flat});
  }
  const int n = static_cast<int>(plan.items.size());
  for (int k = 0; k < num_images; ++k) {
    plan.positives.push_back({2 * k, 2 * k + 1});
    std::vector<int> neg;
    for (int j = 0; j < n; ++j)
      if (j != 2 * k && j != 2 * k + 1) neg.push_back(j);
    plan.negatives_of.push_back(std::move(neg));
  }
  return plan;
}

BatchPlan compose_global_GDminus(const DatasetLayout& layout, int volumes, Rng& rng) {
  return compose_partitioned(layout, volumes, rng, false);
}

BatchPlan compose_global_GD(const DatasetLayout& layout, int volumes, Rng& rng) {
  return compose_partitioned(layout, volumes, rng, true);
}

RegionGrid make_region_grid(int map_height, int map_width, int channels, int region, int count, Rng& rng) {
  (void)channels;
  if (region < 1 || region > std::min(map_height, map_width))
    throw ConfigError("region size K must satisfy 1 <= K <= min(W1, W2)");
  const int rows = map_height / region, cols = map_width / region;
  const int capacity = rows * cols;
  if (count < 1 || count > capacity)
    throw ConfigError("region count A=" + std::to_string(count) + " exceeds grid capacity " +
                      std::to_string(capacity));
  RegionGrid g{map_height, map_width, region, {}};
  std::vector<int> chosen;
  if (count == capacity) {
    chosen.resize(static_cast<std::size_t>(capacity));
    for (int i = 0; i < capacity; ++i) chosen[static_cast<std::size_t>(i)] = i;
  } else {
    chosen = rng.sample_without_replacement(capacity, count);
    std::sort(chosen.begin(), chosen.end());
  }
  for (int id : chosen) {
    const int r = id / cols, c = id % cols;
    g.cells.push_back({r, c, r * region, c * region});
  }
  return g;
}

void RegionPlan::validate() const {
  if (negatives_of.size() != positives.size() || negatives_of_reversed.size() != positives.size())
    throw ConfigError("region plan: one negative list per positive pair required");
  for (const auto& c : grid.cells)
    if (c.u < 0 || c.v < 0 || c.u + grid.region > grid.map_height || c.v + grid.region > grid.map_width)
      throw ConfigError("region plan: cell outside feature map");
  auto check_ref = [&](const RegionRef& r) {
    if (r.map < 0 || r.map >= num_maps || r.cell < 0 || r.cell >= grid.count())
      throw ConfigError("region plan: reference out of range");
  };
  for (std::size_t p = 0; p < positives.size(); ++p) {
    const auto& pp = positives[p];
    check_ref({pp.map_a, pp.cell});
    check_ref({pp.map_b, pp.cell});
    if (pp.map_a == pp.map_b) throw ConfigError("region plan: positive pair references one map twice");
    for (const auto* list : {&negatives_of[p], &negatives_of_reversed[p]}) {
      for (const auto& r : *list) {
        check_ref(r);
        if (r.cell == pp.cell && (r.map == pp.map_a || r.map == pp.map_b))
          throw ConfigError("region plan: positive pair appears in its own negatives");
      }
    }
  }
}

RegionPlan compose_local_LR(int num_images, const RegionGrid& grid, const RegionPlanOptions& opts) {
  if (num_images < 1) throw ConfigError("L^R needs at least one image");
  RegionPlan plan;
  plan.grid = grid;
  plan.num_images = num_images;
  plan.num_maps = 2 * num_images;
  for (int k = 0; k < num_images; ++k)
    for (int c = 0; c < grid.count(); ++c) add_region_pair(plan, 2 * k, 2 * k + 1, c, {2 * k, 2 * k + 1}, opts);
  return plan;
}

RegionPlan compose_local_LD(const std::vector<LocalSource>& sources, const RegionGrid& grid,
                            const RegionPlanOptions& opts) {
  const int n = static_cast<int>(sources.size());
  RegionPlan plan;
  plan.grid = grid;
  plan.num_images = n;
  plan.num_maps = 3 * n;
  for (int k = 0; k < n; ++k)
    for (int c = 0; c < grid.count(); ++c)
      add_region_pair(plan, 3 * k + 1, 3 * k + 2, c, {3 * k + 1, 3 * k + 2}, opts);
  bool any_cross = false;
  for (int k = 0; k < n; ++k) {
    for (int j = k + 1; j < n; ++j) {
      const auto& a = sources[static_cast<std::size_t>(k)];
      const auto& b = sources[static_cast<std::size_t>(j)];
      if (a.partition != b.partition || a.volume == b.volume) continue;
      any_cross = true;
      const std::vector<int> group{3 * k, 3 * k + 1, 3 * j, 3 * j + 2};
      for (int c = 0; c < grid.count(); ++c) {
        add_region_pair(plan, 3 * k, 3 * j, c, group, opts);
        add_region_pair(plan, 3 * k + 1, 3 * j + 2, c, group, opts);
      }
    }
  }
  if (!any_cross)
    throw ConfigError("L^D needs at least two volumes sharing a partition in the batch");
  return plan;
}

std::string to_string(const BatchPlan& plan) {
  std::ostringstream os;
  os << "items " << plan.items.size() << "\n";
  for (std::size_t i = 0; i < plan.items.size(); ++i) {
    const auto& it = plan.items[i];
    os << "  [" << i << "] vol=" << it.volume << " part=" << it.partition << " slice=" << it.slice << " "
       << variant_name(it.variant) << "\n";
  }
  os << "positives " << plan.positives.size() << "\n";
  for (std::size_t p = 0; p < plan.positives.size(); ++p) {
    os << "  (" << plan.positives[p].first << "," << plan.positives[p].second << ") neg=";
    const auto& neg = plan.negatives_of[p];
    for (std::size_t k = 0; k < neg.size(); ++k) os << (k ? "," : "") << neg[k];
    os << "\n";
  }
  return os.str();
}

std::string to_string(const RegionPlan& plan) {
  std::ostringstream os;
  os << "grid " << plan.grid.map_height << "x" << plan.grid.map_width << " K=" << plan.grid.region
     << " A=" << plan.grid.count() << "\n";
  for (std::size_t c = 0; c < plan.grid.cells.size(); ++c)
    os << "  cell[" << c << "] (" << plan.grid.cells[c].u << "," << plan.grid.cells[c].v << ")\n";
  os << "images " << plan.num_images << " maps " << plan.num_maps << "\n";
  os << "positives " << plan.positives.size() << "\n";
  for (std::size_t p = 0; p < plan.positives.size(); ++p) {
    const auto& pp = plan.positives[p];
    os << "  maps(" << pp.map_a << "," << pp.map_b << ") cell " << pp.cell << " neg=";
    const auto& neg = plan.negatives_of[p];
    for (std::size_t k = 0; k < neg.size(); ++k) os << (k ? "," : "") << neg[k].map << ":" << neg[k].cell;
    os << "\n";
  }
  return os.str();
}

}  // namespace sslseg
