#include "sslseg/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sslseg/errors.hpp"

namespace sslseg {

double Image::mean() const {
  if (data.empty()) return 0.0;
  return std::accumulate(data.begin(), data.end(), 0.0) / static_cast<double>(data.size());
}

SoftLabels one_hot(const LabelMap& labels, int classes) {
  SoftLabels out{classes, labels.height, labels.width,
                 std::vector<double>(static_cast<std::size_t>(classes) * labels.data.size(), 0.0)};
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const int c = labels.data[i];
    if (c >= classes) throw DataError("label " + std::to_string(c) + " exceeds class count");
    out.data[static_cast<std::size_t>(c) * labels.data.size() + i] = 1.0;
  }
  return out;
}

bool TransformParams::is_intensity_only() const {
  switch (kind) {
    case TransformKind::brightness:
    case TransformKind::contrast:
      return true;
    case TransformKind::compose:
      return std::all_of(children.begin(), children.end(),
                         [](const TransformParams& c) { return c.is_intensity_only(); });
    default:
      return false;
  }
}

TransformFamily TransformFamily::global_stage() { return TransformFamily{}; }

TransformFamily TransformFamily::local_stage() {
  TransformFamily f;
  f.mode = FamilyMode::local_stage;
  f.crop_resize = f.flip_h = f.flip_v = f.rotate90 = false;
  return f;
}

TransformFamily TransformFamily::finetune() {
  TransformFamily f;
  f.mode = FamilyMode::finetune_aug;
  return f;
}

void TransformFamily::validate() const {
  if (empty()) throw ConfigError("transform family has no enabled kinds");
  if (mode == FamilyMode::local_stage && (crop_resize || flip_h || flip_v || rotate90))
    throw ConfigError("local-stage transform family may only contain intensity transforms");
  if (!(crop_area_min > 0.0 && crop_area_min <= crop_area_max && crop_area_max <= 1.0))
    throw ConfigError("crop area range must satisfy 0 < min <= max <= 1");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
    throw ConfigError("flip probability must lie in [0, 1]");
  if (!(brightness_max >= 0.0 && brightness_max <= 1.0))
    throw ConfigError("brightness range must lie in [0, 1]");
  if (!(contrast_min > 0.0 && contrast_min <= contrast_max))
    throw ConfigError("contrast range must satisfy 0 < min <= max");
}

TransformParams sample_transform(const TransformFamily& family, int height, int width, Rng& rng) {
  family.validate();
  TransformParams t;
  auto step = [](TransformKind kind) {
    TransformParams p;
    p.kind = kind;
    return p;
  };
  if (family.crop_resize) {
    const double area = rng.uniform(family.crop_area_min, family.crop_area_max);
    const double side = std::sqrt(area);
    TransformParams c = step(TransformKind::crop_resize);
    c.crop.height = std::clamp(static_cast<int>(std::lround(side * height)), 1, height);
    c.crop.width = std::clamp(static_cast<int>(std::lround(side * width)), 1, width);
    c.crop.y = rng.below_int(height - c.crop.height + 1);
    c.crop.x = rng.below_int(width - c.crop.width + 1);
    t.children.push_back(c);
  }
  if (family.flip_h && rng.bernoulli(family.flip_probability)) t.children.push_back(step(TransformKind::flip_h));
  if (family.flip_v && rng.bernoulli(family.flip_probability)) t.children.push_back(step(TransformKind::flip_v));
  if (family.rotate90) {
    TransformParams r = step(TransformKind::rotate90);
    r.quarter_turns = rng.below_int(4);
    t.children.push_back(r);
  }
  if (family.brightness) {
    TransformParams b = step(TransformKind::brightness);
    b.brightness = rng.uniform(-family.brightness_max, family.brightness_max);
    t.children.push_back(b);
  }
  if (family.contrast) {
    TransformParams c = step(TransformKind::contrast);
    c.contrast = rng.uniform(family.contrast_min, family.contrast_max);
    t.children.push_back(c);
  }
  return t;
}

std::pair<TransformParams, TransformParams> sample_transform_pair(const TransformFamily& family,
                                                                  int height, int width, Rng& rng) {
  TransformParams a = sample_transform(family, height, width, rng);
  TransformParams b = sample_transform(family, height, width, rng);
  return {std::move(a), std::move(b)};
}

namespace {

// Geometric op shared by image and label paths. `sample(y, x)` reads the
// source; returns the destination in the op's output shape.
template <typename Grid>
Grid remap_flip(const Grid& g, bool horizontal) {
  Grid out = g;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      out.at(y, x) = horizontal ? g.at(y, g.width - 1 - x) : g.at(g.height - 1 - y, x);
  return out;
}

template <typename Grid>
Grid remap_rot90(const Grid& g, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return g;
  const bool swap = (k % 2) == 1;
  Grid out = g;
  out.height = swap ? g.width : g.height;
  out.width = swap ? g.height : g.width;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      int sy = 0, sx = 0;
      switch (k) {  // counter-clockwise quarter turns
        case 1: sy = x; sx = g.width - 1 - y; break;
        case 2: sy = g.height - 1 - y; sx = g.width - 1 - x; break;
        case 3: sy = g.height - 1 - x; sx = y; break;
      }
      out.at(y, x) = g.at(sy, sx);
    }
  }
  return out;
}

void check_crop(const CropBox& c, int height, int width) {
  if (c.height <= 0 || c.width <= 0 || c.y < 0 || c.x < 0 || c.y + c.height > height || c.x + c.width > width)
    throw ConfigError("crop box outside image bounds");
}

Image crop_resize(const Image& g, const CropBox& c) {
  check_crop(c, g.height, g.width);
  Image out(g.height, g.width);
  const double ry = static_cast<double>(c.height) / g.height;
  const double rx = static_cast<double>(c.width) / g.width;
  for (int y = 0; y < g.height; ++y) {
    const double sy = std::clamp((y + 0.5) * ry - 0.5, 0.0, c.height - 1.0);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, c.height - 1);
    const double fy = sy - y0;
    for (int x = 0; x < g.width; ++x) {
      const double sx = std::clamp((x + 0.5) * rx - 0.5, 0.0, c.width - 1.0);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, c.width - 1);
      const double fx = sx - x0;
      const double a = g.at(c.y + y0, c.x + x0), b = g.at(c.y + y0, c.x + x1);
      const double d = g.at(c.y + y1, c.x + x0), e = g.at(c.y + y1, c.x + x1);
      const double top = a + fx * (b - a), bot = d + fx * (e - d);
      out.at(y, x) = top + fy * (bot - top);
    }
  }
  return out;
}

LabelMap crop_resize(const LabelMap& g, const CropBox& c) {
  check_crop(c, g.height, g.width);
  LabelMap out(g.height, g.width);
  const double ry = static_cast<double>(c.height) / g.height;
  const double rx = static_cast<double>(c.width) / g.width;
  for (int y = 0; y < g.height; ++y) {
    const int sy = std::min(static_cast<int>((y + 0.5) * ry), c.height - 1);
    for (int x = 0; x < g.width; ++x) {
      const int sx = std::min(static_cast<int>((x + 0.5) * rx), c.width - 1);
      out.at(y, x) = g.at(c.y + sy, c.x + sx);
    }
  }
  return out;
}

void apply_into(Image& img, LabelMap* labels, const TransformParams& t) {
  switch (t.kind) {
    case TransformKind::compose:
      for (const auto& c : t.children) apply_into(img, labels, c);
      return;
    case TransformKind::crop_resize:
      if (labels) *labels = crop_resize(*labels, t.crop);
      img = crop_resize(img, t.crop);
      return;
    case TransformKind::flip_h:
    case TransformKind::flip_v: {
      const bool h = t.kind == TransformKind::flip_h;
      img = remap_flip(img, h);
      if (labels) *labels = remap_flip(*labels, h);
      return;
    }
    case TransformKind::rotate90:
      if (t.quarter_turns < 0 || t.quarter_turns > 3) throw ConfigError("rotate90: quarter turns must be 0..3");
      img = remap_rot90(img, t.quarter_turns);
      if (labels) *labels = remap_rot90(*labels, t.quarter_turns);
      return;
    case TransformKind::brightness:
      if (!(std::abs(t.brightness) <= 1.0)) throw ConfigError("brightness shift must satisfy |b| <= 1");
      for (double& v : img.data) v = std::clamp(v + t.brightness, 0.0, 1.0);
      return;
    case TransformKind::contrast: {
      if (!(t.contrast > 0.0)) throw ConfigError("contrast factor must be positive");
      const double m = img.mean();
      for (double& v : img.data) v = std::clamp((v - m) * t.contrast + m, 0.0, 1.0);
      return;
    }
  }
}

}  // namespace

Image apply_transform(const Image& img, const TransformParams& t) {
  Image out = img;
  apply_into(out, nullptr, t);
  return out;
}

std::pair<Image, LabelMap> apply_transform(const Image& img, const LabelMap& labels, const TransformParams& t) {
  if (img.height != labels.height || img.width != labels.width)
    throw ConfigError("image and label shapes differ");
  Image out = img;
  LabelMap lab = labels;
  apply_into(out, &lab, t);
  return {std::move(out), std::move(lab)};
}

std::pair<Image, SoftLabels> mixup(const Image& x_a, const SoftLabels& y_a, const Image& x_b,
                                   const SoftLabels& y_b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("mixup: lambda must lie in [0, 1]");
  if (x_a.height != x_b.height || x_a.width != x_b.width || y_a.classes != y_b.classes ||
      y_a.data.size() != y_b.data.size() || y_a.height != x_a.height || y_a.width != x_a.width ||
      y_b.height != x_b.height || y_b.width != x_b.width)
    throw ConfigError("mixup: shape mismatch");
  const double mu = 1.0 - lambda;
  Image x(x_a.height, x_a.width);
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = lambda * x_a.data[i] + mu * x_b.data[i];
  SoftLabels y = y_a;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = lambda * y_a.data[i] + mu * y_b.data[i];
  return {std::move(x), std::move(y)};
}

double sample_mixup_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("mixup alpha must be positive");
  return rng.beta(alpha, alpha);
}

}  // namespace sslseg
