#pragma once

// UNet-style encoder/decoder with the two projection heads used for
// pre-training (g1 after the encoder, g2 after the partial decoder) and a
// 1x1 segmentation head. Parameters live in a ParameterStore keyed by name.

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sslseg/autograd.hpp"

namespace sslseg {

struct NetworkConfig {
  int enc_blocks = 6;
  int base_channels = 16;
  int channel_cap = 8;  // widths are base * 2^b, capped at base * channel_cap
  int dec_blocks_pretrained = 3;  // l
  std::array<int, 2> g1_dims{3200, 128};
  std::array<int, 2> g2_channels{128, 128};
  int num_classes = 4;
  int input_height = 192;
  int input_width = 192;

  void validate() const;
  // Output channels of encoder block b (0-based).
  int channels(int block) const;
  // Spatial size after all encoder blocks.
  int bottleneck_height() const { return input_height >> enc_blocks; }
  int bottleneck_width() const { return input_width >> enc_blocks; }
  // Channels of the decoder output after `blocks` decoder blocks.
  int decoder_channels(int blocks) const { return channels(enc_blocks - blocks); }

  // Small configuration for CPU experiments on 32x32 slices.
  static NetworkConfig desk();
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// Parameter groups.
inline constexpr const char* kEncoder = "encoder";
inline constexpr const char* kG1 = "g1";
inline constexpr const char* kDecoder = "decoder";
inline constexpr const char* kG2 = "g2";
inline constexpr const char* kHead = "head";

struct Parameter {
  std::string name;
  std::string group;
  ag::Var var;
};

struct BufferEntry {
  std::string name;
  std::string group;
  ag::BatchNormStats stats;
};

// Named trainable tensors plus batch-normalization statistics, in insertion
// order. Freezing a group clears requires_grad on its tensors.
class ParameterStore {
 public:
  ag::Var add(const std::string& name, const std::string& group, ag::Tensor init);
  ag::BatchNormStats& add_stats(const std::string& name, const std::string& group, int channels);

  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::deque<BufferEntry>& buffers() const { return buffers_; }
  ag::BatchNormStats& stats(const std::string& name);

  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  void set_frozen(const std::string& group, bool frozen);
  bool frozen(const std::string& group) const;
  void zero_grad();

  // Flat view of parameters ("<name>") and statistics ("<name>.mean",
  // "<name>.var"). Groups filter the result when non-empty.
  std::map<std::string, ag::Tensor> state(const std::vector<std::string>& groups = {}) const;
  // Copies matching entries from `state`; returns how many were loaded.
  // Throws FormatError on a shape mismatch.
  int load_state(const std::map<std::string, ag::Tensor>& state);
  bool all_finite() const;

 private:
  std::vector<Parameter> params_;
  std::deque<BufferEntry> buffers_;  // stable addresses
  std::map<std::string, std::size_t> param_index_;
  std::vector<std::string> frozen_;
};

struct EncoderOutput {
  ag::Var bottleneck;
  std::vector<ag::Var> skips;  // skips[b] is the pre-pool output of block b
};

class Network {
 public:
  Network(const NetworkConfig& cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  // x is [B, 1, H, W] with (H, W) equal to the configured input size.
  EncoderOutput encode(const ag::Var& x, ag::BnMode mode);
  ag::Var g1(const ag::Var& bottleneck, ag::BnMode mode);
  // Applies the first `blocks` decoder blocks.
  ag::Var decode(const EncoderOutput& enc, int blocks, ag::BnMode mode);
  ag::Var g2(const ag::Var& features, ag::BnMode mode);
  // Full encoder, all decoder blocks and the segmentation head: logits
  // [B, num_classes, H, W].
  ag::Var segment(const ag::Var& x, ag::BnMode mode);

 private:
  ag::Var conv_bn_relu(const std::string& prefix, const ag::Var& x, ag::BnMode mode);

  NetworkConfig cfg_;
  ParameterStore store_;
};

// Wraps a batch of single-channel slices as a constant [B, 1, H, W] input.
ag::Var image_batch(const std::vector<std::vector<double>>& images, int height, int width);

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  int samples = 200;
  std::uint64_t seed = 0;
  // (parameter index, element index) pairs always checked.
  std::vector<std::pair<std::size_t, std::size_t>> force_include;
  // Called with the analytic gradients before comparison.
  std::function<void(std::vector<ag::Tensor>&)> analytic_hook;
};

struct GradCheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::size_t worst = 0;
  bool passed = false;
};

// Compares reverse-mode gradients of `loss_fn` with central differences on a
// random subsample of the parameters' entries. Frozen parameters are skipped.
GradCheckReport grad_check(const std::function<ag::Var()>& loss_fn, const std::vector<Parameter>& params,
                           const GradCheckOptions& opts = {});

}  // namespace sslseg
