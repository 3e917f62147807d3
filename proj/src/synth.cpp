#include "sslseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "sslseg/errors.hpp"
#include "sslseg/rng.hpp"

namespace sslseg {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kConstellationRadius = 0.20;  // fraction of min(H, W)
constexpr double kMaxStructureRadius = 0.12;
constexpr double kDistractorRing = 0.39;
constexpr double kDistractorRadius = 0.045;
constexpr double kBodyRadius = 0.45;
constexpr double kEdgeWidth = 0.25;  // soft edge, relative to the ellipse radius
constexpr double kOutsideLevel = 0.05;
constexpr int kDistractors = 2;

double structure_level(int c) {
  // Alternating bright/mid levels; all at least 0.25 away from the body level.
  static constexpr double levels[] = {0.85, 0.58, 0.95, 0.65, 0.75};
  return levels[static_cast<std::size_t>(c) % 5];
}

// Largest in-plane radius (pixels) a structure may take for this spec.
double max_structure_radius(const PhantomSpec& spec) {
  const double size = std::min(spec.shape.height, spec.shape.width);
  const int n = spec.num_classes - 1;
  double r = kMaxStructureRadius * size;
  if (n >= 2) {
    const double neighbour = 2.0 * kConstellationRadius * size * std::sin(kPi / n);
    r = std::min(r, 0.45 * neighbour);
  }
  return r;
}

// Half-sine presence profile over the slice interval [a, b] of t in [0, 1].
double half_sine(double t, double a, double b) {
  const double u = (t - a) / (b - a);
  if (u <= 0.0 || u >= 1.0) return 0.0;
  return std::sin(kPi * u);
}

double smooth_edge(double r) {
  // 1 inside r <= 1, ramps to 0 at r = 1 + kEdgeWidth.
  if (r <= 1.0) return 1.0;
  const double u = (r - 1.0) / kEdgeWidth;
  if (u >= 1.0) return 0.0;
  const double s = 1.0 - u;
  return s * s * (3.0 - 2.0 * s);
}

struct Ellipse {
  double cy, cx, ry, rx;
  double radius_at(double y, double x) const {
    const double dy = (y - cy) / ry, dx = (x - cx) / rx;
    return std::sqrt(dy * dy + dx * dx);
  }
};

}  // namespace

void PhantomSpec::validate() const {
  if (num_volumes < 1) throw ConfigError("phantom: num_volumes must be positive");
  if (shape.depth < 4 || shape.height < 16 || shape.width < 16)
    throw ConfigError("phantom: shape must be at least 4x16x16");
  if (num_classes < 2) throw ConfigError("phantom: num_classes must be >= 2");
  if (!(inter_subject_jitter >= 0.0 && inter_subject_jitter <= 0.3))
    throw ConfigError("phantom: inter_subject_jitter must lie in [0, 0.3]");
  if (!(intensity_jitter >= 0.0 && intensity_jitter <= 0.5))
    throw ConfigError("phantom: intensity_jitter must lie in [0, 0.5]");
  if (num_classes - 1 > 5 || max_structure_radius(*this) < 1.5)
    throw ConfigError("phantom: shape too small to host " + std::to_string(num_classes - 1) +
                      " structures");
}

PhantomSubject draw_subject(const PhantomSpec& spec, int volume_index) {
  Rng rng = Rng::derive(spec.seed, static_cast<std::uint64_t>(volume_index));
  PhantomSubject s;
  s.shift_y = spec.inter_subject_jitter * rng.uniform(-1.0, 1.0) * spec.shape.height;
  s.shift_x = spec.inter_subject_jitter * rng.uniform(-1.0, 1.0) * spec.shape.width;
  s.radius_scale = 1.0 + 0.5 * spec.inter_subject_jitter * rng.uniform(-1.0, 1.0);
  s.intensity_scale = 1.0 + spec.intensity_jitter * rng.uniform(-1.0, 1.0);
  return s;
}

Volume generate_volume(const PhantomSpec& spec, int volume_index) {
  spec.validate();
  const PhantomSubject subj = draw_subject(spec, volume_index);
  const int D = spec.shape.depth, H = spec.shape.height, W = spec.shape.width;
  const double size = std::min(H, W);
  const int n = spec.num_classes - 1;
  const double r_max = max_structure_radius(spec);

  Volume v;
  char id[32];
  std::snprintf(id, sizeof id, "phantom_%03d", volume_index);
  v.id = id;
  v.shape = spec.shape;
  v.spacing = {5.0f, 1.5f, 1.5f};
  v.voxels.assign(spec.shape.voxels(), 0.0f);
  v.labels = std::vector<std::uint8_t>(spec.shape.voxels(), 0);

  for (int d = 0; d < D; ++d) {
    const double t = (d + 0.5) / D;
    // Constellation pose: drifts and rotates smoothly along the slice axis.
    const double cy = 0.5 * H + subj.shift_y + 0.08 * size * (t - 0.5);
    const double cx = 0.5 * W + subj.shift_x - 0.06 * size * (t - 0.5);
    const double phi = 0.9 * (t - 0.5);

    Ellipse body{cy, cx, kBodyRadius * size * (0.9 + 0.1 * std::sin(kPi * t)), kBodyRadius * size};

    std::vector<std::pair<Ellipse, double>> distractors;
    for (int k = 0; k < kDistractors; ++k) {
      const double theta = phi + kPi * (0.25 + 1.1 * k);
      const double prof = half_sine(t, 0.1 + 0.3 * k, 0.75 + 0.25 * k);
      if (prof <= 0.0) continue;
      const double r = kDistractorRadius * size * (0.6 + 0.4 * prof) * subj.radius_scale;
      distractors.push_back({Ellipse{cy + kDistractorRing * size * std::sin(theta),
                                     cx + kDistractorRing * size * std::cos(theta), r, r},
                             structure_level(k % std::max(n, 1))});
    }

    std::vector<std::pair<Ellipse, int>> structures;
    for (int c = 1; c <= n; ++c) {
      const double theta = phi + 2.0 * kPi * (c - 1) / n + 0.3;
      // Each structure occupies its own slab of the slice axis.
      const double a = -0.15 + 0.25 * ((c - 1) % 3) / 2.0;
      const double b = 0.85 + 0.3 * ((c - 1) % 2);
      const double prof = half_sine(t, a, b);
      if (prof <= 0.0) continue;
      const double ring = n == 1 ? 0.0 : kConstellationRadius * size;
      const double ry = r_max * (0.45 + 0.55 * prof) * subj.radius_scale;
      const double rx = ry * (0.7 + 0.2 * c / n);
      structures.push_back({Ellipse{cy + ring * std::sin(theta), cx + ring * std::cos(theta), ry, rx}, c});
    }

    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const double py = y + 0.5, px = x + 0.5;
        double level = kOutsideLevel;
        level += smooth_edge(body.radius_at(py, px)) * (kPhantomBodyLevel - level);
        for (const auto& [e, lv] : distractors) level += smooth_edge(e.radius_at(py, px)) * (lv - level);
        std::uint8_t label = 0;
        for (const auto& [e, c] : structures) {
          const double r = e.radius_at(py, px);
          level += smooth_edge(r) * (structure_level(c - 1) - level);
          if (r <= 1.0) label = static_cast<std::uint8_t>(c);
        }
        const std::size_t idx = v.index(d, y, x);
        v.voxels[idx] = static_cast<float>(std::clamp(level * subj.intensity_scale, 0.0, 1.0));
        (*v.labels)[idx] = label;
      }
    }
  }
  return v;
}

std::vector<Volume> generate_dataset(const PhantomSpec& spec) {
  spec.validate();
  std::vector<Volume> out;
  out.reserve(static_cast<std::size_t>(spec.num_volumes));
  for (int i = 0; i < spec.num_volumes; ++i) out.push_back(generate_volume(spec, i));
  return out;
}

}  // namespace sslseg
