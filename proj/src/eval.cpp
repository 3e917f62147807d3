#include "sslseg/eval.hpp"

#include <algorithm>

#include "sslseg/errors.hpp"

namespace sslseg {

double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int class_id) {
  if (pred.size() != gt.size()) throw ConfigError("dice: prediction and ground truth differ in size");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == class_id, g = gt[i] == class_id;
    a += p;
    b += g;
    both += p && g;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::vector<std::uint8_t> predict_volume(Network& net, const Volume& v) {
  const auto& cfg = net.config();
  if (v.shape.height != cfg.input_height || v.shape.width != cfg.input_width)
    throw DataError("volume " + v.id + " does not match the network input size");
  std::vector<std::vector<double>> slices;
  for (int d = 0; d < v.shape.depth; ++d) slices.push_back(slice_values(v, d));
  ag::Var logits = net.segment(image_batch(slices, cfg.input_height, cfg.input_width), ag::BnMode::infer);
  const auto& z = logits->value;
  const std::size_t S = v.shape.slice_size();
  const int C = z.dim(1);
  std::vector<std::uint8_t> out(v.shape.voxels());
  for (int d = 0; d < v.shape.depth; ++d)
    for (std::size_t s = 0; s < S; ++s) {
      int best = 0;
      double bv = z[(static_cast<std::size_t>(d) * static_cast<std::size_t>(C)) * S + s];
      for (int c = 1; c < C; ++c) {
        const double val = z[(static_cast<std::size_t>(d) * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)) * S + s];
        if (val > bv) {
          bv = val;
          best = c;
        }
      }
      out[static_cast<std::size_t>(d) * S + s] = static_cast<std::uint8_t>(best);
    }
  return out;
}

DiceReport evaluate(const Predictor& predict, const std::vector<Volume>& volumes, int num_classes,
                    std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("evaluate: need at least two classes");
  if (volumes.empty()) throw ConfigError("evaluate: no volumes");
  DiceReport r;
  r.seed = seed;
  r.per_class.assign(static_cast<std::size_t>(num_classes - 1), 0.0);
  for (const auto& v : volumes) {
    if (!v.has_labels()) throw DataError("volume " + v.id + " has no labels");
    const auto pred = predict(v);
    VolumeDice vd;
    vd.id = v.id;
    for (int c = 1; c < num_classes; ++c) vd.per_class.push_back(dice(pred, *v.labels, c));
    for (double x : vd.per_class) vd.mean += x;
    vd.mean /= static_cast<double>(vd.per_class.size());
    for (std::size_t c = 0; c < vd.per_class.size(); ++c) r.per_class[c] += vd.per_class[c];
    r.volumes.push_back(std::move(vd));
  }
  for (double& x : r.per_class) x /= static_cast<double>(volumes.size());
  for (double x : r.per_class) r.mean += x;
  r.mean /= static_cast<double>(r.per_class.size());
  return r;
}

Network network_from_checkpoint(const Checkpoint& ckpt) {
  const ExperimentConfig cfg = parse_config(ckpt.config_json);
  Network net(cfg.network, 0);
  if (net.store().load_state(ckpt.tensors) == 0) throw FormatError("checkpoint holds no network tensors", 0);
  return net;
}

DiceReport evaluate(const Checkpoint& ckpt, const std::vector<Volume>& volumes, std::uint64_t seed) {
  Network net = network_from_checkpoint(ckpt);
  return evaluate([&](const Volume& v) { return predict_volume(net, v); }, volumes, net.config().num_classes, seed);
}

}  // namespace sslseg
