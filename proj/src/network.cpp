#include "sslseg/network.hpp"

#include <algorithm>
#include <cmath>

#include "sslseg/errors.hpp"
#include "sslseg/rng.hpp"

namespace sslseg {

using ag::BnMode;
using ag::Tensor;
using ag::Var;

void NetworkConfig::validate() const {
  if (enc_blocks < 2) throw ConfigError("enc_blocks must be >= 2");
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (channel_cap < 1) throw ConfigError("channel_cap must be >= 1");
  if (dec_blocks_pretrained < 1 || dec_blocks_pretrained > enc_blocks - 1)
    throw ConfigError("dec_blocks_pretrained must lie in [1, enc_blocks - 1]");
  if (g1_dims[0] < 1 || g1_dims[1] < 1) throw ConfigError("g1_dims must be positive");
  if (g2_channels[0] < 1 || g2_channels[1] < 1) throw ConfigError("g2_channels must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (enc_blocks > 16) throw ConfigError("enc_blocks too large");
  const int div = 1 << enc_blocks;
  if (input_height < div || input_width < div || input_height % div || input_width % div)
    throw ConfigError("input size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                      " is not divisible by 2^" + std::to_string(enc_blocks));
}

int NetworkConfig::channels(int block) const {
  const int doublings = std::min(block, 30);
  long c = static_cast<long>(base_channels) << std::min(doublings, 20);
  return static_cast<int>(std::min<long>(c, static_cast<long>(base_channels) * channel_cap));
}

NetworkConfig NetworkConfig::desk() {
  NetworkConfig c;
  c.enc_blocks = 3;
  c.base_channels = 8;
  c.dec_blocks_pretrained = 1;
  c.g1_dims = {64, 16};
  c.g2_channels = {16, 16};
  c.num_classes = 3;
  c.input_height = 32;
  c.input_width = 32;
  return c;
}

Var ParameterStore::add(const std::string& name, const std::string& group, Tensor init) {
  if (param_index_.count(name)) throw ConfigError("duplicate parameter " + name);
  Var v = ag::leaf(std::move(init), !frozen(group));
  param_index_[name] = params_.size();
  params_.push_back({name, group, v});
  return v;
}

ag::BatchNormStats& ParameterStore::add_stats(const std::string& name, const std::string& group, int channels) {
  buffers_.push_back({name, group, {Tensor({channels}, 0.0), Tensor({channels}, 1.0)}});
  return buffers_.back().stats;
}

ag::BatchNormStats& ParameterStore::stats(const std::string& name) {
  for (auto& b : buffers_)
    if (b.name == name) return b.stats;
  throw ConfigError("unknown statistics buffer " + name);
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) throw ConfigError("unknown parameter " + name);
  return params_[it->second];
}

bool ParameterStore::contains(const std::string& name) const { return param_index_.count(name) > 0; }

void ParameterStore::set_frozen(const std::string& group, bool frozen_flag) {
  auto it = std::find(frozen_.begin(), frozen_.end(), group);
  if (frozen_flag && it == frozen_.end()) frozen_.push_back(group);
  if (!frozen_flag && it != frozen_.end()) frozen_.erase(it);
  for (auto& p : params_)
    if (p.group == group) p.var->requires_grad = !frozen_flag;
}

bool ParameterStore::frozen(const std::string& group) const {
  return std::find(frozen_.begin(), frozen_.end(), group) != frozen_.end();
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.var->grad = Tensor();
}

std::map<std::string, Tensor> ParameterStore::state(const std::vector<std::string>& groups) const {
  auto wanted = [&](const std::string& g) {
    return groups.empty() || std::find(groups.begin(), groups.end(), g) != groups.end();
  };
  std::map<std::string, Tensor> out;
  for (const auto& p : params_)
    if (wanted(p.group)) out[p.name] = p.var->value;
  for (const auto& b : buffers_) {
    if (!wanted(b.group)) continue;
    out[b.name + ".mean"] = b.stats.mean;
    out[b.name + ".var"] = b.stats.var;
  }
  return out;
}

int ParameterStore::load_state(const std::map<std::string, Tensor>& state) {
  int loaded = 0;
  auto copy = [&](const std::string& name, Tensor& dst) {
    auto it = state.find(name);
    if (it == state.end()) return;
    if (it->second.shape() != dst.shape()) throw FormatError("shape mismatch for tensor " + name, 0);
    dst = it->second;
    ++loaded;
  };
  for (auto& p : params_) copy(p.name, p.var->value);
  for (auto& b : buffers_) {
    copy(b.name + ".mean", b.stats.mean);
    copy(b.name + ".var", b.stats.var);
  }
  return loaded;
}

bool ParameterStore::all_finite() const {
  auto finite = [](const Tensor& t) {
    return std::all_of(t.span().begin(), t.span().end(), [](double v) { return std::isfinite(v); });
  };
  for (const auto& p : params_)
    if (!finite(p.var->value)) return false;
  for (const auto& b : buffers_)
    if (!finite(b.stats.mean) || !finite(b.stats.var)) return false;
  return true;
}

namespace {

Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(3.0 / fan_in);
  for (double& v : t.span()) v = rng.uniform(-bound, bound);
  return t;
}

struct Builder {
  ParameterStore& store;
  Rng& rng;

  void conv_bn(const std::string& prefix, const std::string& group, int in, int out, int k) {
    store.add(prefix + ".w", group, uniform_init({out, in, k, k}, in * k * k, rng));
    store.add(prefix + ".bn.gamma", group, Tensor({out}, 1.0));
    store.add(prefix + ".bn.beta", group, Tensor({out}, 0.0));
    store.add_stats(prefix + ".bn", group, out);
  }
  void conv_bias(const std::string& prefix, const std::string& group, int in, int out, int k) {
    store.add(prefix + ".w", group, uniform_init({out, in, k, k}, in * k * k, rng));
    store.add(prefix + ".b", group, Tensor({out}, 0.0));
  }
};

std::string enc_name(int b, int i) { return "enc" + std::to_string(b) + ".conv" + std::to_string(i); }
std::string dec_name(int k, int i) { return "dec" + std::to_string(k) + ".conv" + std::to_string(i); }

}  // namespace

Network::Network(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  Builder b{store_, rng};
  const int E = cfg_.enc_blocks;
  int in = 1;
  for (int blk = 0; blk < E; ++blk) {
    const int c = cfg_.channels(blk);
    b.conv_bn(enc_name(blk, 1), kEncoder, in, c, 3);
    b.conv_bn(enc_name(blk, 2), kEncoder, c, c, 3);
    in = c;
  }
  const int flat = cfg_.channels(E - 1) * cfg_.bottleneck_height() * cfg_.bottleneck_width();
  store_.add("g1.fc1.w", kG1, uniform_init({cfg_.g1_dims[0], flat}, flat, rng));
  store_.add("g1.bn.gamma", kG1, Tensor({cfg_.g1_dims[0]}, 1.0));
  store_.add("g1.bn.beta", kG1, Tensor({cfg_.g1_dims[0]}, 0.0));
  store_.add_stats("g1.bn", kG1, cfg_.g1_dims[0]);
  store_.add("g1.fc2.w", kG1, uniform_init({cfg_.g1_dims[1], cfg_.g1_dims[0]}, cfg_.g1_dims[0], rng));
  store_.add("g1.fc2.b", kG1, Tensor({cfg_.g1_dims[1]}));
  for (int k = 1; k <= E; ++k) {
    const int prev = cfg_.channels(E - k + (k == 1 ? 0 : 1));
    const int skip = cfg_.channels(E - k);
    const int out = cfg_.channels(E - k);
    b.conv_bn(dec_name(k, 1), kDecoder, prev + skip, out, 3);
    b.conv_bn(dec_name(k, 2), kDecoder, out, out, 3);
  }
  b.conv_bias("head", kHead, cfg_.channels(0), cfg_.num_classes, 1);
  const int g2_in = cfg_.decoder_channels(cfg_.dec_blocks_pretrained);
  b.conv_bn("g2.conv1", kG2, g2_in, cfg_.g2_channels[0], 1);
  b.conv_bias("g2.conv2", kG2, cfg_.g2_channels[0], cfg_.g2_channels[1], 1);
}

Var Network::conv_bn_relu(const std::string& prefix, const Var& x, BnMode mode) {
  Var y = ag::conv2d(x, store_.get(prefix + ".w").var, nullptr, store_.get(prefix + ".w").var->value.dim(2) / 2);
  y = ag::batch_norm(y, store_.get(prefix + ".bn.gamma").var, store_.get(prefix + ".bn.beta").var,
                     store_.stats(prefix + ".bn"), mode);
  return ag::relu(y);
}

EncoderOutput Network::encode(const Var& x, BnMode mode) {
  const Tensor& v = x->value;
  if (v.rank() != 4 || v.dim(1) != 1 || v.dim(2) != cfg_.input_height || v.dim(3) != cfg_.input_width)
    throw ConfigError("encoder input must be [B, 1, " + std::to_string(cfg_.input_height) + ", " +
                      std::to_string(cfg_.input_width) + "]");
  EncoderOutput out;
  Var h = x;
  for (int b = 0; b < cfg_.enc_blocks; ++b) {
    h = conv_bn_relu(enc_name(b, 1), h, mode);
    h = conv_bn_relu(enc_name(b, 2), h, mode);
    out.skips.push_back(h);
    h = ag::max_pool2(h);
  }
  out.bottleneck = h;
  return out;
}

Var Network::g1(const Var& bottleneck, BnMode mode) {
  auto p = [&](const char* n) { return store_.get(n).var; };
  Var h = ag::linear(ag::flatten(bottleneck), p("g1.fc1.w"), nullptr);
  h = ag::relu(ag::batch_norm(h, p("g1.bn.gamma"), p("g1.bn.beta"), store_.stats("g1.bn"), mode));
  return ag::linear(h, p("g1.fc2.w"), p("g1.fc2.b"));
}

Var Network::decode(const EncoderOutput& enc, int blocks, BnMode mode) {
  if (blocks < 0 || blocks > cfg_.enc_blocks) throw ConfigError("decoder depth out of range");
  Var h = enc.bottleneck;
  for (int k = 1; k <= blocks; ++k) {
    h = ag::concat_channels(ag::upsample2(h), enc.skips[static_cast<std::size_t>(cfg_.enc_blocks - k)]);
    h = conv_bn_relu(dec_name(k, 1), h, mode);
    h = conv_bn_relu(dec_name(k, 2), h, mode);
  }
  return h;
}

Var Network::g2(const Var& features, BnMode mode) {
  Var h = conv_bn_relu("g2.conv1", features, mode);
  return ag::conv2d(h, store_.get("g2.conv2.w").var, store_.get("g2.conv2.b").var, 0);
}

Var Network::segment(const Var& x, BnMode mode) {
  Var h = decode(encode(x, mode), cfg_.enc_blocks, mode);
  return ag::conv2d(h, store_.get("head.w").var, store_.get("head.b").var, 0);
}

Var image_batch(const std::vector<std::vector<double>>& images, int height, int width) {
  const std::size_t n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  Tensor t({static_cast<int>(images.size()), 1, height, width});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].size() != n) throw ConfigError("image size does not match the batch shape");
    std::copy(images[i].begin(), images[i].end(), t.data() + i * n);
  }
  return ag::constant(std::move(t));
}

GradCheckReport grad_check(const std::function<Var()>& loss_fn, const std::vector<Parameter>& params,
                           const GradCheckOptions& opts) {
  auto evaluate = [&]() {
    const double v = loss_fn()->value[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return v;
  };
  std::vector<const Parameter*> active;
  for (const auto& p : params)
    if (p.var->requires_grad) active.push_back(&p);

  for (const auto* p : active) p->var->grad = Tensor();
  Var loss = loss_fn();
  if (!std::isfinite(loss->value[0])) throw NumericError("grad_check: non-finite loss");
  ag::backward(loss);
  std::vector<Tensor> analytic;
  for (const auto* p : active) {
    Tensor g = p->var->grad;
    if (g.shape() != p->var->value.shape()) g = Tensor(p->var->value.shape());
    analytic.push_back(std::move(g));
  }
  if (opts.analytic_hook) opts.analytic_hook(analytic);

  std::vector<std::size_t> offsets{0};
  for (const auto* p : active) offsets.push_back(offsets.back() + p->var->value.numel());
  const std::size_t total = offsets.back();
  if (total == 0) throw ConfigError("grad_check: no trainable parameters");
  std::vector<std::size_t> picks;
  for (const auto& [pi, ei] : opts.force_include) {
    if (pi >= active.size() || ei >= active[pi]->var->value.numel())
      throw ConfigError("grad_check: forced entry out of range");
    picks.push_back(offsets[pi] + ei);
  }
  Rng rng(opts.seed);
  const int k = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(std::max(opts.samples, 0)), total));
  for (int g : rng.sample_without_replacement(static_cast<int>(total), k)) {
    const auto gi = static_cast<std::size_t>(g);
    if (std::find(picks.begin(), picks.end(), gi) == picks.end()) picks.push_back(gi);
  }

  GradCheckReport report;
  for (std::size_t flat : picks) {
    const auto pi = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1);
    const std::size_t ei = flat - offsets[pi];
    double& theta = active[pi]->var->value[ei];
    const double saved = theta;
    theta = saved + opts.epsilon;
    const double fp = evaluate();
    theta = saved - opts.epsilon;
    const double fm = evaluate();
    theta = saved;
    GradCheckEntry e;
    e.parameter = active[pi]->name;
    e.index = ei;
    e.analytic = analytic[pi][ei];
    e.numeric = (fp - fm) / (2.0 * opts.epsilon);
    e.rel_error = std::abs(e.analytic - e.numeric) / std::max({std::abs(e.analytic), std::abs(e.numeric), 1e-8});
    if (e.rel_error > report.max_rel_error || report.entries.empty()) {
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      if (e.rel_error >= report.max_rel_error) report.worst = report.entries.size();
    }
    report.entries.push_back(e);
  }
  report.passed = report.max_rel_error < opts.tolerance;
  return report;
}

}  // namespace sslseg
