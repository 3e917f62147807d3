#include "sslseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "sslseg/errors.hpp"
#include "sslseg/simd.hpp"

namespace sslseg {

void LossConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("temperature tau must be positive");
}

namespace {

double norm_of(std::span<const double> v) {
  const double n2 = simd::kernels().dot(v.data(), v.data(), v.size());
  if (!std::isfinite(n2)) throw NumericError("non-finite representation");
  if (n2 == 0.0) throw NumericError("cosine similarity of a zero vector");
  return std::sqrt(n2);
}

// Rows scaled to unit length, plus the original norms.
struct UnitRows {
  Matrix unit;
  std::vector<double> norms;
};

UnitRows normalize_rows(const Matrix& m) {
  UnitRows u{m, std::vector<double>(static_cast<std::size_t>(m.rows))};
  for (int i = 0; i < m.rows; ++i) {
    auto r = u.unit.row(i);
    const double n = norm_of(r);
    u.norms[static_cast<std::size_t>(i)] = n;
    for (double& x : r) x /= n;
  }
  return u;
}

struct Term {
  int anchor;
  int positive;
  const std::vector<int>* negatives;
};

// Sum of term losses over unit rows, times `scale`. Accumulates d/dunit into
// `grad_unit` when non-null. Terms are processed in order, so the result is
// reproducible bit for bit.
double accumulate_terms(const Matrix& unit, const std::vector<Term>& terms, double tau, double scale,
                        Matrix* grad_unit) {
  const auto& k = simd::kernels();
  const auto dim = static_cast<std::size_t>(unit.cols);
  std::vector<double> logits;
  double total = 0.0;
  for (const Term& t : terms) {
    if (t.negatives->empty()) throw ConfigError("contrastive pair has an empty negative set");
    const double* a = unit.row(t.anchor).data();
    logits.resize(t.negatives->size() + 1);
    logits[0] = k.dot(a, unit.row(t.positive).data(), dim) / tau;
    for (std::size_t j = 0; j < t.negatives->size(); ++j)
      logits[j + 1] = k.dot(a, unit.row((*t.negatives)[j]).data(), dim) / tau;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - mx);
    const double lse = mx + std::log(sum);
    total += lse - logits[0];
    if (grad_unit) {
      double* ga = grad_unit->row(t.anchor).data();
      auto weight = [&](std::size_t j) { return std::exp(logits[j] - lse) * scale / tau; };
      const double w0 = weight(0) - scale / tau;
      k.axpy(w0, unit.row(t.positive).data(), ga, dim);
      k.axpy(w0, a, grad_unit->row(t.positive).data(), dim);
      for (std::size_t j = 0; j < t.negatives->size(); ++j) {
        const int n = (*t.negatives)[j];
        const double wj = weight(j + 1);
        k.axpy(wj, unit.row(n).data(), ga, dim);
        k.axpy(wj, a, grad_unit->row(n).data(), dim);
      }
    }
  }
  return total * scale;
}

// d/dz from d/du where u = z / |z|: (g - u (u.g)) / |z|.
void backprop_normalization(const UnitRows& u, Matrix& grad) {
  const auto& k = simd::kernels();
  for (int i = 0; i < grad.rows; ++i) {
    auto g = grad.row(i);
    const auto ui = u.unit.row(i);
    const double proj = k.dot(ui.data(), g.data(), g.size());
    const double inv = 1.0 / u.norms[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = (g[j] - ui[j] * proj) * inv;
  }
}

double pair_loss_rows(const Matrix& rows, int n_neg, const LossConfig& cfg) {
  std::vector<int> neg(static_cast<std::size_t>(n_neg));
  for (int j = 0; j < n_neg; ++j) neg[static_cast<std::size_t>(j)] = j + 2;
  const UnitRows u = normalize_rows(rows);
  return accumulate_terms(u.unit, {Term{0, 1, &neg}}, cfg.tau, 1.0, nullptr);
}

}  // namespace

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("cosine_sim: length mismatch");
  const double na = norm_of(a), nb = norm_of(b);
  const double s = simd::kernels().dot(a.data(), b.data(), a.size()) / (na * nb);
  return std::clamp(s, -1.0, 1.0);
}

double global_pair_loss(std::span<const double> a, std::span<const double> b,
                        const std::vector<std::span<const double>>& negatives, const LossConfig& cfg) {
  cfg.validate();
  if (negatives.empty()) throw ConfigError("global pair loss needs a non-empty negative set");
  Matrix rows(static_cast<int>(negatives.size()) + 2, static_cast<int>(a.size()));
  auto put = [&](int r, std::span<const double> v) {
    if (v.size() != a.size()) throw ConfigError("representation length mismatch");
    std::copy(v.begin(), v.end(), rows.row(r).begin());
  };
  put(0, a);
  put(1, b);
  for (std::size_t j = 0; j < negatives.size(); ++j) put(static_cast<int>(j) + 2, negatives[j]);
  return pair_loss_rows(rows, static_cast<int>(negatives.size()), cfg);
}

double global_loss(const Matrix& reps, const BatchPlan& plan, const LossConfig& cfg, Matrix* grad) {
  cfg.validate();
  plan.validate();
  if (reps.rows != static_cast<int>(plan.items.size()))
    throw ConfigError("global_loss: one representation per plan item required");
  if (plan.positives.empty()) throw ConfigError("global_loss: plan has no positive pairs");
  std::vector<Term> terms;
  terms.reserve(2 * plan.positives.size());
  for (std::size_t p = 0; p < plan.positives.size(); ++p) {
    const auto [a, b] = plan.positives[p];
    terms.push_back({a, b, &plan.negatives_of[p]});
    terms.push_back({b, a, &plan.negatives_of[p]});
  }
  const UnitRows u = normalize_rows(reps);
  const double scale = 1.0 / static_cast<double>(plan.positives.size());
  if (!grad) return accumulate_terms(u.unit, terms, cfg.tau, scale, nullptr);
  *grad = Matrix(reps.rows, reps.cols);
  const double loss = accumulate_terms(u.unit, terms, cfg.tau, scale, grad);
  backprop_normalization(u, *grad);
  return loss;
}

std::vector<double> region_vector(const FeatureMaps& maps, const RegionGrid& grid, int map, int cell) {
  const RegionCell& c = grid.cells.at(static_cast<std::size_t>(cell));
  const int K = grid.region;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(K) * static_cast<std::size_t>(K) * static_cast<std::size_t>(maps.channels));
  for (int ch = 0; ch < maps.channels; ++ch)
    for (int dy = 0; dy < K; ++dy)
      for (int dx = 0; dx < K; ++dx) out.push_back(maps.at(map, ch, c.u + dy, c.v + dx));
  return out;
}

namespace {

void check_maps(const FeatureMaps& maps, const RegionGrid& grid) {
  if (grid.map_height != maps.height || grid.map_width != maps.width)
    throw ConfigError("region grid does not match feature map size");
}

// Region vectors of every (map, cell), row = map * A + cell.
Matrix gather_regions(const FeatureMaps& maps, const RegionGrid& grid) {
  const int A = grid.count(), K = grid.region;
  Matrix m(maps.count * A, K * K * maps.channels);
  for (int n = 0; n < maps.count; ++n)
    for (int c = 0; c < A; ++c) {
      const auto v = region_vector(maps, grid, n, c);
      std::copy(v.begin(), v.end(), m.row(n * A + c).begin());
    }
  return m;
}

void scatter_regions(const Matrix& g, const RegionGrid& grid, FeatureMaps& out) {
  const int A = grid.count(), K = grid.region;
  for (int n = 0; n < out.count; ++n)
    for (int c = 0; c < A; ++c) {
      const RegionCell& cell = grid.cells[static_cast<std::size_t>(c)];
      auto r = g.row(n * A + c);
      std::size_t j = 0;
      for (int ch = 0; ch < out.channels; ++ch)
        for (int dy = 0; dy < K; ++dy)
          for (int dx = 0; dx < K; ++dx) out.at(n, ch, cell.u + dy, cell.v + dx) += r[j++];
    }
}

}  // namespace

double local_pair_loss(const FeatureMaps& maps, const RegionGrid& grid, int map_a, int map_b, int cell,
                       const std::vector<RegionRef>& negatives, const LossConfig& cfg) {
  cfg.validate();
  check_maps(maps, grid);
  if (negatives.empty()) throw ConfigError("local pair loss needs a non-empty negative set");
  const int dim = grid.region * grid.region * maps.channels;
  Matrix rows(static_cast<int>(negatives.size()) + 2, dim);
  auto put = [&](int r, int map, int c) {
    const auto v = region_vector(maps, grid, map, c);
    std::copy(v.begin(), v.end(), rows.row(r).begin());
  };
  put(0, map_a, cell);
  put(1, map_b, cell);
  for (std::size_t j = 0; j < negatives.size(); ++j) put(static_cast<int>(j) + 2, negatives[j].map, negatives[j].cell);
  return pair_loss_rows(rows, static_cast<int>(negatives.size()), cfg);
}

double local_loss(const FeatureMaps& maps, const RegionPlan& plan, const LossConfig& cfg, FeatureMaps* grad) {
  cfg.validate();
  plan.validate();
  check_maps(maps, plan.grid);
  if (maps.count != plan.num_maps) throw ConfigError("local_loss: feature map count does not match plan");
  if (plan.positives.empty()) throw ConfigError("local_loss: plan has no positive pairs");
  const int A = plan.grid.count();
  auto row_of = [A](int map, int cell) { return map * A + cell; };

  std::vector<std::vector<int>> neg_rows;
  neg_rows.reserve(2 * plan.positives.size());
  std::vector<Term> terms;
  terms.reserve(2 * plan.positives.size());
  for (std::size_t p = 0; p < plan.positives.size(); ++p) {
    for (const auto* list : {&plan.negatives_of[p], &plan.negatives_of_reversed[p]}) {
      std::vector<int> rows;
      rows.reserve(list->size());
      for (const auto& r : *list) rows.push_back(row_of(r.map, r.cell));
      neg_rows.push_back(std::move(rows));
    }
  }
  for (std::size_t p = 0; p < plan.positives.size(); ++p) {
    const auto& pp = plan.positives[p];
    terms.push_back({row_of(pp.map_a, pp.cell), row_of(pp.map_b, pp.cell), &neg_rows[2 * p]});
    terms.push_back({row_of(pp.map_b, pp.cell), row_of(pp.map_a, pp.cell), &neg_rows[2 * p + 1]});
  }
  const Matrix regions = gather_regions(maps, plan.grid);
  const UnitRows u = normalize_rows(regions);
  const double scale = 1.0 / (static_cast<double>(plan.num_images) * 2.0 * A);
  if (!grad) return accumulate_terms(u.unit, terms, cfg.tau, scale, nullptr);
  Matrix g(regions.rows, regions.cols);
  const double loss = accumulate_terms(u.unit, terms, cfg.tau, scale, &g);
  backprop_normalization(u, g);
  *grad = FeatureMaps(maps.count, maps.channels, maps.height, maps.width);
  scatter_regions(g, plan.grid, *grad);
  return loss;
}

}  // namespace sslseg
