#pragma once

// Experiment configuration, read from and written to JSON. Every field is
// optional in the file; unknown keys are rejected with a ConfigError naming
// the offending path.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sslseg/network.hpp"
#include "sslseg/pairsets.hpp"
#include "sslseg/synth.hpp"
#include "sslseg/transforms.hpp"

namespace sslseg {

enum class GlobalStrategy { none, GR, GDminus, GD };
enum class LocalStrategy { none, LR, LD };

std::string to_string(GlobalStrategy s);
std::string to_string(LocalStrategy s);
GlobalStrategy parse_global_strategy(const std::string& s);
LocalStrategy parse_local_strategy(const std::string& s);

struct DatasetConfig {
  // Manifest written by `sslseg gen-data`. When empty, phantoms are
  // synthesized from `phantom` (first n_pre volumes pre-train, next n_ts test).
  std::string manifest;
  PhantomSpec phantom = [] {
    PhantomSpec p;
    p.num_volumes = 25;
    return p;
  }();
  int n_pre = 20;
  int n_tr = 1;
  int n_vl = 1;
  int n_ts = 5;
  // In-plane spacing slices are resampled to; empty keeps each volume's own.
  std::optional<std::array<double, 2>> target_spacing;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One arm of the experiment matrix: which pre-training stages run before
// fine-tuning.
struct Arm {
  std::string name;
  GlobalStrategy global = GlobalStrategy::none;
  LocalStrategy local = LocalStrategy::none;
  friend bool operator==(const Arm&, const Arm&) = default;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  NetworkConfig network = NetworkConfig::desk();
  GlobalStrategy global_strategy = GlobalStrategy::GD;
  LocalStrategy local_strategy = LocalStrategy::LR;
  int partitions = 4;      // S
  int batch_images = 40;   // pre-training batch, in images
  int finetune_batch = 8;  // fine-tuning batch, in slices
  int iterations = 10000;  // pre-training stages
  int finetune_iterations = 10000;
  double learning_rate = 1e-3;
  double tau = 0.1;
  int region_size = 1;   // K
  int region_count = 13; // A
  RegionPlanOptions region_options;
  double lambda_l = 1.0;
  std::optional<double> mixup_alpha;
  std::vector<std::uint64_t> seeds{0};
  AdamConfig adam;
  int validation_interval = 50;
  int log_interval = 1;
  TransformFamily global_transforms = TransformFamily::global_stage();
  TransformFamily local_transforms = TransformFamily::local_stage();
  TransformFamily finetune_transforms = TransformFamily::finetune();
  std::vector<Arm> arms;
  std::vector<int> train_sizes{1};

  void validate() const;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string to_json(const ExperimentConfig& cfg);

// Full-scale hyper-parameters with the desk network and dataset sizes of
// the end-to-end experiment.
ExperimentConfig desk_config();

}  // namespace sslseg
