#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sslseg/rng.hpp"

namespace sslseg {

// A 2D slice in double precision, row-major.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
  double mean() const;
  friend bool operator==(const Image&, const Image&) = default;
};

struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}
  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// Per-class probability maps, classes x height x width.
struct SoftLabels {
  int classes = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;
};

SoftLabels one_hot(const LabelMap& labels, int classes);

enum class TransformKind { crop_resize, flip_h, flip_v, rotate90, brightness, contrast, compose };

struct CropBox {
  int y = 0, x = 0, height = 0, width = 0;
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

struct TransformParams {
  TransformKind kind = TransformKind::compose;
  CropBox crop;            // crop_resize
  int quarter_turns = 0;   // rotate90, counter-clockwise, 0..3
  double brightness = 0.0; // additive shift b, |b| <= 1
  double contrast = 1.0;   // factor c > 0 about the image mean
  std::vector<TransformParams> children;  // compose, in application order

  static TransformParams identity() { return {}; }
  bool is_intensity_only() const;
  friend bool operator==(const TransformParams&, const TransformParams&) = default;
};

enum class FamilyMode { global_stage, local_stage, finetune_aug };

// The distribution transforms are drawn from. Defaults are mild so that the
// anatomy stays recognizable.
struct TransformFamily {
  FamilyMode mode = FamilyMode::global_stage;
  bool crop_resize = true;
  double crop_area_min = 0.8;
  double crop_area_max = 1.0;
  bool flip_h = true;
  bool flip_v = true;
  double flip_probability = 0.5;
  bool rotate90 = true;
  bool brightness = true;
  double brightness_max = 0.2;
  bool contrast = true;
  double contrast_min = 0.8;
  double contrast_max = 1.2;

  static TransformFamily global_stage();
  // Intensity-only (brightness, contrast).
  static TransformFamily local_stage();
  static TransformFamily finetune();

  bool empty() const { return !(crop_resize || flip_h || flip_v || rotate90 || brightness || contrast); }
  // Throws ConfigError on bad ranges, or spatial kinds in a local_stage family.
  void validate() const;
};

TransformParams sample_transform(const TransformFamily& family, int height, int width, Rng& rng);

// Two independent draws (t~, t^) from the family.
std::pair<TransformParams, TransformParams> sample_transform_pair(const TransformFamily& family,
                                                                  int height, int width, Rng& rng);

// Applies `t` to the image and, for spatial kinds, identically to the label
// map (nearest neighbour). Intensity kinds clip to [0, 1] and never touch
// labels. Throws ConfigError when a crop box does not fit.
Image apply_transform(const Image& img, const TransformParams& t);
std::pair<Image, LabelMap> apply_transform(const Image& img, const LabelMap& labels,
                                           const TransformParams& t);

// Convex combination lambda * a + (1 - lambda) * b of images and label maps.
std::pair<Image, SoftLabels> mixup(const Image& x_a, const SoftLabels& y_a, const Image& x_b,
                                   const SoftLabels& y_b, double lambda);

// lambda ~ Beta(alpha, alpha).
double sample_mixup_lambda(double alpha, Rng& rng);

}  // namespace sslseg
