#pragma once

#include <cstdint>
#include <vector>

#include "sslseg/voldata.hpp"

namespace sslseg {

// Parameters of the synthetic "aligned anatomy" generator.
struct PhantomSpec {
  int num_volumes = 20;
  Shape3 shape{12, 32, 32};
  int num_classes = 3;  // background + (num_classes - 1) structures
  std::uint64_t seed = 0;
  double inter_subject_jitter = 0.1;  // [0, 0.3], fraction of in-plane size
  double intensity_jitter = 0.2;      // [0, 0.5], multiplicative spread

  void validate() const;
};

// Minimum |structure intensity - surrounding body intensity| over all
// labeled voxels the generator can emit.
inline constexpr double kPhantomContrastFloor = 0.1;

// Nominal intensity of the body region that surrounds every structure, before
// the per-volume intensity scale is applied.
inline constexpr double kPhantomBodyLevel = 0.3;

// Per-volume draw of the inter-subject variation.
struct PhantomSubject {
  double shift_y = 0.0, shift_x = 0.0;  // pixels
  double radius_scale = 1.0;
  double intensity_scale = 1.0;
};

PhantomSubject draw_subject(const PhantomSpec& spec, int volume_index);

// One volume; equals generate_dataset(spec)[volume_index]. Each volume uses
// its own RNG stream derived from (seed, volume_index).
Volume generate_volume(const PhantomSpec& spec, int volume_index);

// Deterministic dataset of labeled volumes with ids "phantom_000", ...
// Structures are soft-edged ellipses arranged in a constellation that rotates,
// drifts and changes size smoothly along the slice axis; volumes differ only by
// the jitter parameters. Unlabeled distractor blobs share the structures'
// intensities so that segmentation needs spatial context.
std::vector<Volume> generate_dataset(const PhantomSpec& spec);

}  // namespace sslseg
