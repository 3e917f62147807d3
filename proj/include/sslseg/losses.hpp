#pragma once

#include <span>
#include <vector>

#include "sslseg/pairsets.hpp"

namespace sslseg {

struct LossConfig {
  double tau = 0.1;  // temperature
  void validate() const;
};

// Dense row-major matrix of representations, one row per vector.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}
  std::span<double> row(int i) {
    return std::span<double>(data).subspan(static_cast<std::size_t>(i) * static_cast<std::size_t>(cols),
                                           static_cast<std::size_t>(cols));
  }
  std::span<const double> row(int i) const {
    return std::span<const double>(data).subspan(static_cast<std::size_t>(i) * static_cast<std::size_t>(cols),
                                                 static_cast<std::size_t>(cols));
  }
};

// A batch of feature maps, count x channels x height x width.
struct FeatureMaps {
  int count = 0, channels = 0, height = 0, width = 0;
  std::vector<double> data;

  FeatureMaps() = default;
  FeatureMaps(int n, int c, int h, int w, double fill = 0.0)
      : count(n), channels(c), height(h), width(w),
        data(static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
                 static_cast<std::size_t>(w),
             fill) {}
  double& at(int n, int c, int y, int x) {
    return data[((static_cast<std::size_t>(n) * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)) *
                     static_cast<std::size_t>(height) +
                 static_cast<std::size_t>(y)) *
                    static_cast<std::size_t>(width) +
                static_cast<std::size_t>(x)];
  }
  double at(int n, int c, int y, int x) const { return const_cast<FeatureMaps*>(this)->at(n, c, y, x); }
};

// a.b / (|a||b|). Throws NumericError for a zero or non-finite vector.
double cosine_sim(std::span<const double> a, std::span<const double> b);

// -log( e^{s(a,b)/tau} / (e^{s(a,b)/tau} + sum_n e^{s(a,n)/tau}) ). Negatives
// are contrasted against the first argument. Throws ConfigError when
// `negatives` is empty.
double global_pair_loss(std::span<const double> a, std::span<const double> b,
                        const std::vector<std::span<const double>>& negatives, const LossConfig& cfg);

// Mean over the plan's positive pairs of l(a, b) + l(b, a), with each pair's
// negatives taken from the plan. `reps` holds one row per plan item. When
// `grad` is non-null it receives dL/dreps.
double global_loss(const Matrix& reps, const BatchPlan& plan, const LossConfig& cfg, Matrix* grad = nullptr);

// Flattened K x K x C region of map `map` at grid cell `cell`.
std::vector<double> region_vector(const FeatureMaps& maps, const RegionGrid& grid, int map, int cell);

// Pair loss of region `cell` between maps a (anchor) and b against the listed
// negative regions.
double local_pair_loss(const FeatureMaps& maps, const RegionGrid& grid, int map_a, int map_b, int cell,
                       const std::vector<RegionRef>& negatives, const LossConfig& cfg);

// Sum over positive region pairs of l(a, b) + l(b, a), divided by
// |X| * 2A. When `grad` is non-null it receives dL/dmaps.
double local_loss(const FeatureMaps& maps, const RegionPlan& plan, const LossConfig& cfg,
                  FeatureMaps* grad = nullptr);

}  // namespace sslseg
