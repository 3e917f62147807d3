#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sslseg/checkpoint.hpp"
#include "sslseg/config.hpp"
#include "sslseg/dataset.hpp"
#include "sslseg/network.hpp"

namespace sslseg {

// 2|A n B| / (|A| + |B|) for the voxels labelled `class_id`; 1.0 when the
// class is absent from both. Throws ConfigError on a size mismatch.
double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int class_id);

struct VolumeDice {
  std::string id;
  std::vector<double> per_class;  // foreground classes 1..C-1
  double mean = 0.0;
};

struct DiceReport {
  std::vector<double> per_class;  // foreground classes, averaged over volumes
  double mean = 0.0;              // mean of per_class
  std::vector<VolumeDice> volumes;
  std::uint64_t seed = 0;

  friend bool operator==(const DiceReport&, const DiceReport&) = default;
};

inline bool operator==(const VolumeDice& a, const VolumeDice& b) {
  return a.id == b.id && a.per_class == b.per_class && a.mean == b.mean;
}

// Label volume (D*H*W) predicted for a volume.
using Predictor = std::function<std::vector<std::uint8_t>(const Volume&)>;

// Slice-wise argmax of the segmentation logits, batch-norm in inference mode.
std::vector<std::uint8_t> predict_volume(Network& net, const Volume& v);

// Per-class Dice over each whole volume, then averaged over volumes. Throws
// DataError when a volume has no labels.
DiceReport evaluate(const Predictor& predict, const std::vector<Volume>& volumes, int num_classes,
                    std::uint64_t seed = 0);

// Rebuilds the network recorded in a model checkpoint and loads its tensors.
Network network_from_checkpoint(const Checkpoint& ckpt);
DiceReport evaluate(const Checkpoint& ckpt, const std::vector<Volume>& volumes, std::uint64_t seed = 0);

struct MatrixRow {
  std::string arm;
  int n_tr = 0;
  std::string seed;  // seed value, or "summary"
  std::vector<double> dsc;  // per foreground class (means for summary rows)
  double mean_dsc = 0.0;
  double mean_dsc_sd = 0.0;  // across seeds; 0 for per-seed rows
  double wallclock_s = 0.0;
};

struct ExperimentMatrix {
  std::vector<MatrixRow> results;    // one per arm, n_tr and seed
  std::vector<MatrixRow> summaries;  // one per arm and n_tr
  int num_classes = 0;

  std::string csv() const;
  const MatrixRow& summary(const std::string& arm, int n_tr) const;
};

// Published mean test DSC for random init, G^R, G^D and G^D+L^R
// (ACDC, one training volume).
inline constexpr double kReferenceOrdering[4] = {0.614, 0.631, 0.691, 0.725};

struct MatrixOptions {
  int threads = 1;
  std::filesystem::path out_dir;  // CSV, logs and metadata when non-empty
  std::function<void(const std::string&)> progress;
};

// Runs every arm x train size x seed: the arm's pre-training stages, then
// fine-tuning and evaluation on the test split. Pre-training results are
// shared between arms with the same stages and seed.
ExperimentMatrix run_matrix(const ExperimentConfig& cfg, const Dataset& data, const MatrixOptions& opts = {});

}  // namespace sslseg
