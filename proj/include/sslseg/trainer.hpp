#pragma once

// Stage-wise training: global pre-training of encoder + g1, local
// pre-training of the partial decoder + g2 on a frozen encoder, optional
// joint pre-training, and supervised fine-tuning with validation-based model
// selection.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "sslseg/checkpoint.hpp"
#include "sslseg/config.hpp"
#include "sslseg/dataset.hpp"
#include "sslseg/losses.hpp"
#include "sslseg/network.hpp"

namespace sslseg {

inline constexpr double kNoValue = std::numeric_limits<double>::quiet_NaN();

struct LogRow {
  int iteration = 0;
  double loss = kNoValue;
  double loss_global = kNoValue;
  double loss_local = kNoValue;
  double val_dice = kNoValue;
};

inline constexpr const char* kLogHeader = "iteration,loss,loss_global,loss_local,val_dice";

// CSV text for the rows (no header). Missing values are empty fields.
std::string log_csv_rows(const std::vector<LogRow>& rows);
// Appends rows to `path`, writing the header first when the file is new.
void append_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& rows);

class Adam {
 public:
  Adam(const AdamConfig& cfg, double learning_rate) : cfg_(cfg), lr_(learning_rate) {}

  // Updates every parameter that requires grad and received a gradient.
  void step(ParameterStore& store);
  int steps() const { return t_; }

  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  AdamConfig cfg_;
  double lr_;
  int t_ = 0;
  std::map<std::string, std::pair<ag::Tensor, ag::Tensor>> moments_;
};

// Keeps the snapshot with the highest validation score; ties keep the
// earlier one.
class ModelSelector {
 public:
  // Returns true when the offer became the new best.
  bool offer(int iteration, double score, std::map<std::string, ag::Tensor> snapshot);
  bool has_best() const { return best_iteration_ >= 0; }
  int best_iteration() const { return best_iteration_; }
  double best_score() const { return best_score_; }
  const std::map<std::string, ag::Tensor>& snapshot() const { return snapshot_; }

  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  int best_iteration_ = -1;
  double best_score_ = -1.0;
  std::map<std::string, ag::Tensor> snapshot_;
};

struct GlobalBatch {
  BatchPlan plan;
  std::vector<std::vector<double>> images;  // one per plan item
};

struct LocalBatch {
  RegionPlan plan;
  std::vector<std::vector<double>> images;  // one per feature map
};

// Volumes per partition for the partitioned strategies; ConfigError at 0.
int volumes_per_batch(const ExperimentConfig& cfg);

GlobalBatch sample_global_batch(const ExperimentConfig& cfg, GlobalStrategy strategy, const Dataset& data, Rng& rng);
LocalBatch sample_local_batch(const ExperimentConfig& cfg, LocalStrategy strategy, const Dataset& data, Rng& rng);

ag::Var global_objective(Network& net, const GlobalBatch& batch, const ExperimentConfig& cfg);
ag::Var local_objective(Network& net, const LocalBatch& batch, const ExperimentConfig& cfg, ag::BnMode encoder_mode);

struct StepGradients {
  std::map<std::string, ag::Tensor> grads;  // parameters that received one
  double loss_global = kNoValue;
  double loss_local = kNoValue;
};

// One batch of the global stage: draws from `rng`, back-propagates L_g.
StepGradients global_step_gradients(Network& net, const ExperimentConfig& cfg, const Dataset& data, Rng& rng);
// One batch of joint pre-training: the global batch from `global_rng`, the
// local batch from `local_rng`, back-propagating L_g + lambda_l * L_l.
StepGradients joint_step_gradients(Network& net, const ExperimentConfig& cfg, const Dataset& data, Rng& global_rng,
                                   Rng& local_rng);

struct StageOptions {
  std::uint64_t seed = 0;
  // Stop once this many iterations have completed (in total, including any
  // resumed ones); negative runs the configured count.
  int stop_after = -1;
  const Checkpoint* resume = nullptr;  // a StageResult::state to continue from
  std::filesystem::path log_path;      // CSV log, appended when non-empty
};

struct StageResult {
  Checkpoint model;  // exported tensors (projection heads discarded)
  Checkpoint state;  // full training state for resuming
  std::vector<LogRow> log;
  bool complete = false;
  int best_iteration = -1;
  double best_val_dice = kNoValue;
};

StageResult pretrain_global(const ExperimentConfig& cfg, const Dataset& data, const StageOptions& opts);
StageResult pretrain_local(const ExperimentConfig& cfg, const Dataset& data, const Checkpoint& encoder,
                           const StageOptions& opts);
StageResult joint_pretrain(const ExperimentConfig& cfg, const Dataset& data, const StageOptions& opts);
// `pretrained` may be null (random initialization).
StageResult finetune(const ExperimentConfig& cfg, const Dataset& data, const Split& split,
                     const Checkpoint* pretrained, const StageOptions& opts);

// Mean foreground DSC over the given pre-pool volumes.
double validation_dice(Network& net, const Dataset& data, const std::vector<int>& volumes);

// Seed derivation used by the stages.
enum class Stream : std::uint64_t { init = 1, global = 2, local = 3, finetune = 4, split = 5 };
std::uint64_t stream_seed(std::uint64_t seed, Stream s);

}  // namespace sslseg
