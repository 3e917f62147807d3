#include "sslseg/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sslseg/errors.hpp"
#include "sslseg/eval.hpp"
#include "sslseg/objectives.hpp"
#include "sslseg/transforms.hpp"

namespace sslseg {

using ag::BnMode;
using ag::Tensor;

namespace {

enum class StageKind : std::uint64_t { global = 1, local = 2, joint = 3, finetune = 4 };

void field(std::ostream& os, double v) {
  if (!std::isnan(v)) os << v;
}

void check_finite(double loss, int iteration) {
  if (!std::isfinite(loss))
    throw NumericError("non-finite loss at iteration " + std::to_string(iteration));
}

void save_rng(Checkpoint& c, const std::string& tag, const Rng& rng) {
  for (std::size_t i = 0; i < 4; ++i) c.metadata["rng." + tag + "." + std::to_string(i)] = rng.state()[i];
}

void load_rng(const Checkpoint& c, const std::string& tag, Rng& rng) {
  Rng::State s{};
  for (std::size_t i = 0; i < 4; ++i) {
    auto it = c.metadata.find("rng." + tag + "." + std::to_string(i));
    if (it == c.metadata.end()) throw FormatError("training state lacks RNG stream " + tag, 0);
    s[i] = it->second;
  }
  rng.set_state(s);
}

std::uint64_t meta(const Checkpoint& c, const std::string& key) {
  auto it = c.metadata.find(key);
  if (it == c.metadata.end()) throw FormatError("training state lacks " + key, 0);
  return it->second;
}

// Common bookkeeping of one stage run.
struct StageRun {
  StageKind kind;
  const ExperimentConfig& cfg;
  const StageOptions& opts;
  Network net;
  Adam adam;
  int iteration = 0;
  std::vector<LogRow> log;

  StageRun(StageKind k, const ExperimentConfig& c, const StageOptions& o)
      : kind(k), cfg(c), opts(o), net(c.network, stream_seed(o.seed, Stream::init)),
        adam(c.adam, c.learning_rate) {}

  int end(int total) const { return opts.stop_after < 0 ? total : std::min(total, opts.stop_after); }

  Checkpoint state(const std::vector<std::pair<std::string, const Rng*>>& rngs) const {
    Checkpoint c;
    c.config_json = to_json(cfg);
    for (auto& [name, t] : net.store().state()) c.tensors["param/" + name] = t;
    adam.save(c);
    c.metadata["stage"] = static_cast<std::uint64_t>(kind);
    c.metadata["iteration"] = static_cast<std::uint64_t>(iteration);
    c.metadata["seed"] = opts.seed;
    for (auto& [tag, r] : rngs) save_rng(c, tag, *r);
    return c;
  }

  // Restores parameters, optimizer and RNG streams from opts.resume.
  void restore(const std::vector<std::pair<std::string, Rng*>>& rngs) {
    if (!opts.resume) return;
    const Checkpoint& c = *opts.resume;
    if (meta(c, "stage") != static_cast<std::uint64_t>(kind))
      throw ConfigError("training state belongs to a different stage");
    if (c.config_json != to_json(cfg)) throw ConfigError("training state was produced with a different config");
    if (meta(c, "seed") != opts.seed) throw ConfigError("training state was produced with a different seed");
    const auto params = tensors_with_prefix(c, "param/");
    if (net.store().load_state(params) != static_cast<int>(net.store().state().size()))
      throw FormatError("training state is missing network tensors", 0);
    adam.load(c);
    iteration = static_cast<int>(meta(c, "iteration"));
    for (auto& [tag, r] : rngs) load_rng(c, tag, *r);
  }

  void record(const LogRow& row, bool force = false) {
    if (force || row.iteration % cfg.log_interval == 0) log.push_back(row);
  }

  void finish(StageResult& r) {
    r.log = log;
    if (!opts.log_path.empty()) append_log_csv(opts.log_path, log);
  }

  Checkpoint model(std::map<std::string, Tensor> tensors) const {
    Checkpoint c;
    c.config_json = to_json(cfg);
    c.tensors = std::move(tensors);
    c.metadata["stage"] = static_cast<std::uint64_t>(kind);
    c.metadata["iteration"] = static_cast<std::uint64_t>(iteration);
    c.metadata["seed"] = opts.seed;
    return c;
  }
};

// Encoder tensors plus the first l decoder blocks.
std::map<std::string, Tensor> pretrained_tensors(const Network& net) {
  const int l = net.config().dec_blocks_pretrained;
  auto all = net.store().state({kEncoder, kDecoder});
  std::map<std::string, Tensor> out;
  for (auto& [name, t] : all) {
    bool keep = name.rfind("enc", 0) == 0;
    for (int k = 1; k <= l && !keep; ++k) keep = name.rfind("dec" + std::to_string(k) + ".", 0) == 0;
    if (keep) out.emplace(name, std::move(t));
  }
  return out;
}

Image to_image(const std::vector<double>& values, int h, int w) {
  Image img(h, w);
  img.data = values;
  return img;
}

std::vector<double> transformed(const std::vector<double>& values, const TransformFamily& family, int h, int w,
                                Rng& rng) {
  const TransformParams t = sample_transform(family, h, w, rng);
  return apply_transform(to_image(values, h, w), t).data;
}

DatasetLayout layout_of(const ExperimentConfig& cfg, const Dataset& data) {
  DatasetLayout layout;
  for (const auto& v : data.pre) layout.depths.push_back(v.shape.depth);
  layout.partitions = cfg.partitions;
  return layout;
}

double backprop_global(Network& net, const ExperimentConfig& cfg, const Dataset& data, Rng& rng) {
  GlobalBatch batch = sample_global_batch(cfg, cfg.global_strategy, data, rng);
  ag::Var loss = global_objective(net, batch, cfg);
  ag::backward(loss);
  return loss->value[0];
}

std::pair<double, double> backprop_joint(Network& net, const ExperimentConfig& cfg, const Dataset& data,
                                         Rng& global_rng, Rng& local_rng) {
  GlobalBatch gb = sample_global_batch(cfg, cfg.global_strategy, data, global_rng);
  LocalBatch lb = sample_local_batch(cfg, cfg.local_strategy, data, local_rng);
  ag::Var lg = global_objective(net, gb, cfg);
  ag::Var ll = local_objective(net, lb, cfg, BnMode::train);
  ag::backward(add_scaled(lg, ll, cfg.lambda_l));
  return {lg->value[0], ll->value[0]};
}

std::map<std::string, Tensor> collect_grads(const Network& net) {
  std::map<std::string, Tensor> out;
  for (const auto& p : net.store().parameters())
    if (p.var->requires_grad && p.var->grad.shape() == p.var->value.shape()) out[p.name] = p.var->grad;
  return out;
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, Stream s) {
  return Rng::derive(seed, static_cast<std::uint64_t>(s)).next_u64();
}

std::string log_csv_rows(const std::vector<LogRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& r : rows) {
    os << r.iteration << ',';
    field(os, r.loss);
    os << ',';
    field(os, r.loss_global);
    os << ',';
    field(os, r.loss_local);
    os << ',';
    field(os, r.val_dice);
    os << '\n';
  }
  return os.str();
}

void append_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& rows) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream f(path, std::ios::app);
  if (!f) throw DataError("cannot open log " + path.string());
  if (fresh) f << kLogHeader << '\n';
  f << log_csv_rows(rows);
}

void Adam::step(ParameterStore& store) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (auto& p : store.parameters()) {
    Tensor& g = p.var->grad;
    if (!p.var->requires_grad || g.shape() != p.var->value.shape()) continue;
    auto& [m, v] = moments_[p.name];
    if (m.shape() != g.shape()) {
      m = Tensor(g.shape());
      v = Tensor(g.shape());
    }
    Tensor& w = p.var->value;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

void Adam::save(Checkpoint& ckpt) const {
  ckpt.metadata["adam.t"] = static_cast<std::uint64_t>(t_);
  for (const auto& [name, mv] : moments_) {
    ckpt.tensors["adam.m/" + name] = mv.first;
    ckpt.tensors["adam.v/" + name] = mv.second;
  }
}

void Adam::load(const Checkpoint& ckpt) {
  t_ = static_cast<int>(meta(ckpt, "adam.t"));
  moments_.clear();
  for (auto& [name, m] : tensors_with_prefix(ckpt, "adam.m/")) {
    auto it = ckpt.tensors.find("adam.v/" + name);
    if (it == ckpt.tensors.end()) throw FormatError("optimizer state lacks second moment of " + name, 0);
    moments_[name] = {m, it->second};
  }
}

bool ModelSelector::offer(int iteration, double score, std::map<std::string, Tensor> snapshot) {
  if (has_best() && !(score > best_score_)) return false;
  best_iteration_ = iteration;
  best_score_ = score;
  snapshot_ = std::move(snapshot);
  return true;
}

void ModelSelector::save(Checkpoint& ckpt) const {
  ckpt.metadata["best.iteration"] = static_cast<std::uint64_t>(best_iteration_ + 1);
  ckpt.metadata["best.score"] = std::bit_cast<std::uint64_t>(best_score_);
  for (const auto& [name, t] : snapshot_) ckpt.tensors["best/" + name] = t;
}

void ModelSelector::load(const Checkpoint& ckpt) {
  best_iteration_ = static_cast<int>(meta(ckpt, "best.iteration")) - 1;
  best_score_ = std::bit_cast<double>(meta(ckpt, "best.score"));
  snapshot_ = tensors_with_prefix(ckpt, "best/");
}

int volumes_per_batch(const ExperimentConfig& cfg) {
  const int m = cfg.batch_images / (3 * cfg.partitions);
  if (m < 1)
    throw ConfigError("batch_images " + std::to_string(cfg.batch_images) + " is below 3*S = " +
                      std::to_string(3 * cfg.partitions) + " (no volume fits a batch)");
  return m;
}

GlobalBatch sample_global_batch(const ExperimentConfig& cfg, GlobalStrategy strategy, const Dataset& data,
                                Rng& rng) {
  const DatasetLayout layout = layout_of(cfg, data);
  GlobalBatch b;
  switch (strategy) {
    case GlobalStrategy::GR: b.plan = compose_global_GR(layout, cfg.batch_images / 2, rng); break;
    case GlobalStrategy::GDminus: b.plan = compose_global_GDminus(layout, volumes_per_batch(cfg), rng); break;
    case GlobalStrategy::GD: b.plan = compose_global_GD(layout, volumes_per_batch(cfg), rng); break;
    case GlobalStrategy::none: throw ConfigError("global pre-training needs a global strategy");
  }
  const int h = cfg.network.input_height, w = cfg.network.input_width;
  for (const auto& item : b.plan.items) {
    auto values = slice_values(data.pre[static_cast<std::size_t>(item.volume)], item.slice);
    if (item.variant != Variant::orig) values = transformed(values, cfg.global_transforms, h, w, rng);
    b.images.push_back(std::move(values));
  }
  return b;
}

LocalBatch sample_local_batch(const ExperimentConfig& cfg, LocalStrategy strategy, const Dataset& data, Rng& rng) {
  const auto& n = cfg.network;
  const int shift = n.enc_blocks - n.dec_blocks_pretrained;
  const int h = n.input_height, w = n.input_width;
  const RegionGrid grid =
      make_region_grid(h >> shift, w >> shift, n.g2_channels[1], cfg.region_size, cfg.region_count, rng);
  LocalBatch b;
  switch (strategy) {
    case LocalStrategy::LR: {
      const int images = cfg.batch_images / 2;
      for (int k = 0; k < images; ++k) {
        const auto& v = data.pre[static_cast<std::size_t>(rng.below_int(static_cast<int>(data.pre.size())))];
        const auto values = slice_values(v, rng.below_int(v.shape.depth));
        b.images.push_back(transformed(values, cfg.local_transforms, h, w, rng));
        b.images.push_back(transformed(values, cfg.local_transforms, h, w, rng));
      }
      b.plan = compose_local_LR(images, grid, cfg.region_options);
      break;
    }
    case LocalStrategy::LD: {
      const int m = volumes_per_batch(cfg);
      if (m < 2)
        throw ConfigError("L^D needs at least two volumes per partition: batch_images must be >= 6*S");
      const BatchPlan items = compose_global_GDminus(layout_of(cfg, data), m, rng);
      std::vector<LocalSource> sources;
      for (const auto& item : items.items) {
        auto values = slice_values(data.pre[static_cast<std::size_t>(item.volume)], item.slice);
        if (item.variant == Variant::orig) sources.push_back({item.volume, item.partition});
        else values = transformed(values, cfg.local_transforms, h, w, rng);
        b.images.push_back(std::move(values));
      }
      b.plan = compose_local_LD(sources, grid, cfg.region_options);
      break;
    }
    case LocalStrategy::none: throw ConfigError("local pre-training needs a local strategy");
  }
  return b;
}

ag::Var global_objective(Network& net, const GlobalBatch& batch, const ExperimentConfig& cfg) {
  const auto& n = net.config();
  auto enc = net.encode(image_batch(batch.images, n.input_height, n.input_width), BnMode::train);
  return global_loss_op(net.g1(enc.bottleneck, BnMode::train), batch.plan, LossConfig{cfg.tau});
}

ag::Var local_objective(Network& net, const LocalBatch& batch, const ExperimentConfig& cfg, BnMode encoder_mode) {
  const auto& n = net.config();
  auto enc = net.encode(image_batch(batch.images, n.input_height, n.input_width), encoder_mode);
  auto maps = net.g2(net.decode(enc, n.dec_blocks_pretrained, BnMode::train), BnMode::train);
  return local_loss_op(maps, batch.plan, LossConfig{cfg.tau});
}

StepGradients global_step_gradients(Network& net, const ExperimentConfig& cfg, const Dataset& data, Rng& rng) {
  net.store().zero_grad();
  StepGradients s;
  s.loss_global = backprop_global(net, cfg, data, rng);
  s.grads = collect_grads(net);
  return s;
}

StepGradients joint_step_gradients(Network& net, const ExperimentConfig& cfg, const Dataset& data, Rng& global_rng,
                                   Rng& local_rng) {
  net.store().zero_grad();
  StepGradients s;
  std::tie(s.loss_global, s.loss_local) = backprop_joint(net, cfg, data, global_rng, local_rng);
  s.grads = collect_grads(net);
  return s;
}

StageResult pretrain_global(const ExperimentConfig& cfg, const Dataset& data, const StageOptions& opts) {
  cfg.validate();
  if (cfg.global_strategy == GlobalStrategy::none) throw ConfigError("pretrain_global needs a global strategy");
  if (cfg.global_strategy == GlobalStrategy::GR && cfg.batch_images / 2 < 2)
    throw ConfigError("G^R needs at least two images per batch");
  StageRun run(StageKind::global, cfg, opts);
  Rng rng = Rng::derive(opts.seed, static_cast<std::uint64_t>(Stream::global));
  run.restore({{"global", &rng}});
  const int end = run.end(cfg.iterations);
  while (run.iteration < end) {
    run.net.store().zero_grad();
    const double loss = backprop_global(run.net, cfg, data, rng);
    check_finite(loss, run.iteration + 1);
    run.adam.step(run.net.store());
    ++run.iteration;
    run.record({.iteration = run.iteration, .loss = loss, .loss_global = loss});
  }
  StageResult r;
  r.complete = run.iteration >= cfg.iterations;
  r.model = run.model(run.net.store().state({kEncoder}));
  r.state = run.state({{"global", &rng}});
  run.finish(r);
  return r;
}

StageResult pretrain_local(const ExperimentConfig& cfg, const Dataset& data, const Checkpoint& encoder,
                           const StageOptions& opts) {
  cfg.validate();
  if (cfg.local_strategy == LocalStrategy::none) throw ConfigError("pretrain_local needs a local strategy");
  if (cfg.region_count < 2) throw ConfigError("region_count A must be >= 2 (A = 1 leaves no negatives)");
  StageRun run(StageKind::local, cfg, opts);
  const auto enc_state = run.net.store().state({kEncoder});
  std::map<std::string, Tensor> wanted;
  for (const auto& [name, t] : encoder.tensors)
    if (enc_state.count(name)) wanted[name] = t;
  if (wanted.size() != enc_state.size()) throw FormatError("checkpoint does not hold a complete encoder", 0);
  run.net.store().load_state(wanted);
  run.net.store().set_frozen(kEncoder, true);
  Rng rng = Rng::derive(opts.seed, static_cast<std::uint64_t>(Stream::local));
  run.restore({{"local", &rng}});
  const int end = run.end(cfg.iterations);
  while (run.iteration < end) {
    run.net.store().zero_grad();
    LocalBatch batch = sample_local_batch(cfg, cfg.local_strategy, data, rng);
    ag::Var loss = local_objective(run.net, batch, cfg, BnMode::infer);
    ag::backward(loss);
    check_finite(loss->value[0], run.iteration + 1);
    run.adam.step(run.net.store());
    ++run.iteration;
    run.record({.iteration = run.iteration, .loss = loss->value[0], .loss_local = loss->value[0]});
  }
  StageResult r;
  r.complete = run.iteration >= cfg.iterations;
  r.model = run.model(pretrained_tensors(run.net));
  r.state = run.state({{"local", &rng}});
  run.finish(r);
  return r;
}

StageResult joint_pretrain(const ExperimentConfig& cfg, const Dataset& data, const StageOptions& opts) {
  cfg.validate();
  if (cfg.global_strategy == GlobalStrategy::none || cfg.local_strategy == LocalStrategy::none)
    throw ConfigError("joint_pretrain needs both a global and a local strategy");
  if (cfg.region_count < 2) throw ConfigError("region_count A must be >= 2 (A = 1 leaves no negatives)");
  StageRun run(StageKind::joint, cfg, opts);
  Rng grng = Rng::derive(opts.seed, static_cast<std::uint64_t>(Stream::global));
  Rng lrng = Rng::derive(opts.seed, static_cast<std::uint64_t>(Stream::local));
  run.restore({{"global", &grng}, {"local", &lrng}});
  const int end = run.end(cfg.iterations);
  while (run.iteration < end) {
    run.net.store().zero_grad();
    const auto [lg, ll] = backprop_joint(run.net, cfg, data, grng, lrng);
    const double loss = lg + cfg.lambda_l * ll;
    check_finite(loss, run.iteration + 1);
    run.adam.step(run.net.store());
    ++run.iteration;
    run.record({.iteration = run.iteration, .loss = loss, .loss_global = lg, .loss_local = ll});
  }
  StageResult r;
  r.complete = run.iteration >= cfg.iterations;
  r.model = run.model(pretrained_tensors(run.net));
  r.state = run.state({{"global", &grng}, {"local", &lrng}});
  run.finish(r);
  return r;
}

double validation_dice(Network& net, const Dataset& data, const std::vector<int>& volumes) {
  std::vector<Volume> vols;
  for (int i : volumes) vols.push_back(data.pre.at(static_cast<std::size_t>(i)));
  return evaluate([&](const Volume& v) { return predict_volume(net, v); }, vols, net.config().num_classes).mean;
}

StageResult finetune(const ExperimentConfig& cfg, const Dataset& data, const Split& split,
                     const Checkpoint* pretrained, const StageOptions& opts) {
  cfg.validate();
  if (split.train.empty()) throw ConfigError("fine-tuning needs at least one training volume");
  if (split.val.empty()) throw ConfigError("fine-tuning needs at least one validation volume");
  for (int i : split.train)
    if (std::find(split.val.begin(), split.val.end(), i) != split.val.end())
      throw ConfigError("training and validation volumes must be disjoint");
  StageRun run(StageKind::finetune, cfg, opts);
  if (pretrained && run.net.store().load_state(pretrained->tensors) == 0)
    throw FormatError("pre-trained checkpoint holds no matching tensors", 0);
  const int C = cfg.network.num_classes;
  const int h = cfg.network.input_height, w = cfg.network.input_width;
  std::vector<std::pair<int, int>> slices;
  for (int vi : split.train) {
    const Volume& v = data.pre.at(static_cast<std::size_t>(vi));
    if (!v.has_labels()) throw DataError("training volume " + v.id + " has no labels");
    for (int d = 0; d < v.shape.depth; ++d) slices.emplace_back(vi, d);
  }
  Rng rng = Rng::derive(opts.seed, static_cast<std::uint64_t>(Stream::finetune));
  ModelSelector selector;
  run.restore({{"finetune", &rng}});
  if (opts.resume) selector.load(*opts.resume);
  const int total = cfg.finetune_iterations;
  const int end = run.end(total);
  const std::vector<std::string> seg_groups{kEncoder, kDecoder, kHead};
  while (run.iteration < end) {
    run.net.store().zero_grad();
    std::vector<Image> images;
    std::vector<SoftLabels> targets;
    for (int b = 0; b < cfg.finetune_batch; ++b) {
      const auto [vi, d] = slices[static_cast<std::size_t>(rng.below(slices.size()))];
      const Volume& v = data.pre[static_cast<std::size_t>(vi)];
      LabelMap lm(h, w);
      const auto ls = v.label_slice(d);
      std::copy(ls.begin(), ls.end(), lm.data.begin());
      const TransformParams t = sample_transform(cfg.finetune_transforms, h, w, rng);
      auto [img, lab] = apply_transform(to_image(slice_values(v, d), h, w), lm, t);
      images.push_back(std::move(img));
      targets.push_back(one_hot(lab, C));
    }
    if (cfg.mixup_alpha) {
      const double lambda = sample_mixup_lambda(*cfg.mixup_alpha, rng);
      std::vector<int> perm(images.size());
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      std::vector<Image> mixed_images;
      std::vector<SoftLabels> mixed_targets;
      for (std::size_t i = 0; i < images.size(); ++i) {
        const auto j = static_cast<std::size_t>(perm[i]);
        auto [x, y] = mixup(images[i], targets[i], images[j], targets[j], lambda);
        mixed_images.push_back(std::move(x));
        mixed_targets.push_back(std::move(y));
      }
      images = std::move(mixed_images);
      targets = std::move(mixed_targets);
    }
    std::vector<std::vector<double>> batch;
    for (auto& img : images) batch.push_back(std::move(img.data));
    ag::Var loss = segmentation_loss(run.net.segment(image_batch(batch, h, w), BnMode::train), targets);
    ag::backward(loss);
    check_finite(loss->value[0], run.iteration + 1);
    run.adam.step(run.net.store());
    ++run.iteration;
    LogRow row{.iteration = run.iteration, .loss = loss->value[0]};
    const bool validate = run.iteration % cfg.validation_interval == 0 || run.iteration == total;
    if (validate) {
      row.val_dice = validation_dice(run.net, data, split.val);
      selector.offer(run.iteration, row.val_dice, run.net.store().state(seg_groups));
    }
    run.record(row, validate);
  }
  StageResult r;
  r.complete = run.iteration >= total;
  r.model = run.model(selector.has_best() ? selector.snapshot() : run.net.store().state(seg_groups));
  r.model.metadata["best.iteration"] = static_cast<std::uint64_t>(selector.best_iteration() + 1);
  r.best_iteration = selector.best_iteration();
  r.best_val_dice = selector.has_best() ? selector.best_score() : kNoValue;
  r.state = run.state({{"finetune", &rng}});
  selector.save(r.state);
  run.finish(r);
  return r;
}

}  // namespace sslseg
