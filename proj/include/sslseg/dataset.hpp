#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sslseg/config.hpp"
#include "sslseg/voldata.hpp"

namespace sslseg {

// Preprocessed volumes: X_pre (pre-training pool, from which X_tr and X_vl
// are drawn) and the held-out X_ts.
struct Dataset {
  std::vector<Volume> pre;
  std::vector<Volume> test;
};

// Percentile normalization, then in-plane resampling and crop/pad to
// height x width. Without a target spacing the volume's own spacing is kept.
Volume preprocess_volume(const Volume& v, const std::optional<std::array<double, 2>>& target_spacing, int height,
                         int width);

// Writes volumes as .vol files plus manifest.json ({"volumes": [{"id",
// "split", "path"}]}, paths relative to the manifest).
void write_manifest(const std::filesystem::path& dir, const std::vector<Volume>& pre,
                    const std::vector<Volume>& test);

// Loads the configured dataset (manifest or synthesized phantoms) and
// preprocesses it to the network input size.
Dataset load_dataset(const ExperimentConfig& cfg);

struct Split {
  std::vector<int> train;  // indices into Dataset::pre
  std::vector<int> val;
};

// Disjoint X_tr / X_vl drawn from the pre-training pool.
Split sample_split(int n_pre, int n_tr, int n_vl, std::uint64_t seed);

std::vector<double> slice_values(const Volume& v, int d);

}  // namespace sslseg
