#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sslseg/rng.hpp"
#include "sslseg/voldata.hpp"

namespace sslseg {

// Slice counts of the volumes a batch is drawn from, plus their partitioning.
struct DatasetLayout {
  std::vector<int> depths;
  int partitions = 1;

  int num_volumes() const { return static_cast<int>(depths.size()); }
};

enum class Variant { orig, tilde, hat };

// One image of a contrastive batch.
struct BatchItem {
  int volume = 0;
  int partition = 0;
  Variant variant = Variant::orig;
  int slice = 0;  // absolute slice index within the volume
  friend bool operator==(const BatchItem&, const BatchItem&) = default;
};

// Item list plus the similar pairs and, per pair, the dissimilar item indices.
struct BatchPlan {
  std::vector<BatchItem> items;
  std::vector<std::pair<int, int>> positives;
  std::vector<std::vector<int>> negatives_of;

  // Number of distinct source images (orig/tilde/hat of one slice count once).
  int num_sources() const;
  // Throws ConfigError if an index is out of range, a pair is degenerate, or a
  // pair member appears in its own negative list.
  void validate() const;
  friend bool operator==(const BatchPlan&, const BatchPlan&) = default;
};

// G^R: N images drawn without replacement across all slices of all volumes;
// items (x~, x^) per image; negatives are the other 2N - 2 items.
BatchPlan compose_global_GR(const DatasetLayout& layout, int num_images, Rng& rng);

// G^D-: m volumes, one slice per partition, items (x, x~, x^); three positive
// pairs per sampled slice; negatives are all items of other partitions.
BatchPlan compose_global_GDminus(const DatasetLayout& layout, int volumes, Rng& rng);

// G^D: G^D- plus, per partition and unordered volume pair (i, j), the pairs
// (x_i, x_j) and (x~_i, x^_j). Negatives as in G^D-.
BatchPlan compose_global_GD(const DatasetLayout& layout, int volumes, Rng& rng);

// Cell of the regular stride-K grid; (u, v) is the top-left pixel.
struct RegionCell {
  int row = 0, col = 0;  // grid coordinates
  int u = 0, v = 0;      // pixel offset = (row * K, col * K)
  friend bool operator==(const RegionCell&, const RegionCell&) = default;
};

struct RegionGrid {
  int map_height = 0, map_width = 0, region = 0;  // W1, W2, K
  std::vector<RegionCell> cells;                  // A cells, row-major order
  int count() const { return static_cast<int>(cells.size()); }
};

// A non-overlapping K x K cells on the stride-K grid; all cells when the grid
// holds exactly A, otherwise A sampled without replacement. `channels` is
// accepted for symmetry with the feature-map shape and not otherwise used.
RegionGrid make_region_grid(int map_height, int map_width, int channels, int region, int count, Rng& rng);

struct RegionRef {
  int map = 0;
  int cell = 0;  // index into RegionGrid::cells
  friend bool operator==(const RegionRef&, const RegionRef&) = default;
  friend auto operator<=>(const RegionRef&, const RegionRef&) = default;
};

struct RegionPair {
  int map_a = 0, map_b = 0, cell = 0;
  friend bool operator==(const RegionPair&, const RegionPair&) = default;
};

// Which cells count as "other regions" for a pair at (u, v).
enum class RegionExclusion {
  same_cell,       // (u', v') != (u, v)
  same_row_or_col  // u' != u and v' != v
};

// Which maps contribute negatives.
enum class RegionNegativeMaps {
  all_listed,  // every map of the pair's group (both f~ and f^)
  second_only  // only the map of the non-anchor member
};

struct RegionPlanOptions {
  RegionExclusion exclusion = RegionExclusion::same_cell;
  RegionNegativeMaps negative_maps = RegionNegativeMaps::all_listed;
};

struct RegionPlan {
  RegionGrid grid;
  int num_images = 0;  // |X|, the normalizer of the local loss
  int num_maps = 0;
  std::vector<RegionPair> positives;
  // Negatives when the first member anchors the loss, and when the second does.
  std::vector<std::vector<RegionRef>> negatives_of;
  std::vector<std::vector<RegionRef>> negatives_of_reversed;

  void validate() const;
};

// L^R over `num_images` images with maps laid out as (f~_k, f^_k) at
// (2k, 2k + 1).
RegionPlan compose_local_LR(int num_images, const RegionGrid& grid, const RegionPlanOptions& opts = {});

// Source image of an L^D batch.
struct LocalSource {
  int volume = 0;
  int partition = 0;
};

// L^D with maps laid out as (f_k, f~_k, f^_k) at (3k, 3k + 1, 3k + 2). Adds
// the cross-volume pairs (f_k, f_k') and (f~_k, f^_k') for sources in the
// same partition and different volumes; their negatives come from the four
// maps f_k, f~_k, f_k', f^_k'. Throws ConfigError if no partition is shared by
// two volumes.
RegionPlan compose_local_LD(const std::vector<LocalSource>& sources, const RegionGrid& grid,
                            const RegionPlanOptions& opts = {});

// Human-readable dumps used by the CLI --dump-plan flag and golden tests.
std::string to_string(const BatchPlan& plan);
std::string to_string(const RegionPlan& plan);

}  // namespace sslseg
