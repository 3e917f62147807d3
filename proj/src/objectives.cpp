#include "sslseg/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "sslseg/errors.hpp"

namespace sslseg {

using ag::Tensor;
using ag::Var;

Var global_loss_op(const Var& reps, const BatchPlan& plan, const LossConfig& cfg) {
  const Tensor& r = reps->value;
  if (r.rank() != 2) throw ConfigError("global_loss_op: representations must be [items, D]");
  Matrix m(r.dim(0), r.dim(1));
  std::copy(r.span().begin(), r.span().end(), m.data.begin());
  Matrix grad;
  const double loss = global_loss(m, plan, cfg, reps->requires_grad ? &grad : nullptr);
  return ag::make_op(Tensor({1}, loss), {reps}, [grad = std::move(grad)](ag::Node& self) {
    const double g = self.grad[0];
    Tensor& dr = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < grad.data.size(); ++i) dr[i] += g * grad.data[i];
  });
}

Var local_loss_op(const Var& maps, const RegionPlan& plan, const LossConfig& cfg) {
  const Tensor& v = maps->value;
  if (v.rank() != 4) throw ConfigError("local_loss_op: feature maps must be [N, C, H, W]");
  FeatureMaps fm(v.dim(0), v.dim(1), v.dim(2), v.dim(3));
  std::copy(v.span().begin(), v.span().end(), fm.data.begin());
  FeatureMaps grad;
  const double loss = local_loss(fm, plan, cfg, maps->requires_grad ? &grad : nullptr);
  return ag::make_op(Tensor({1}, loss), {maps}, [grad = std::move(grad)](ag::Node& self) {
    const double g = self.grad[0];
    Tensor& dm = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < grad.data.size(); ++i) dm[i] += g * grad.data[i];
  });
}

Var add_scaled(const Var& a, const Var& b, double lambda) {
  if (a->value.numel() != 1 || b->value.numel() != 1) throw ConfigError("add_scaled: operands must be scalars");
  return ag::make_op(Tensor({1}, a->value[0] + lambda * b->value[0]), {a, b}, [lambda](ag::Node& self) {
    const double g = self.grad[0];
    if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer()[0] += g;
    if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer()[0] += lambda * g;
  });
}

Var segmentation_loss(const Var& logits, const std::vector<SoftLabels>& targets, double smooth) {
  const Tensor& z = logits->value;
  if (z.rank() != 4) throw ConfigError("segmentation_loss: logits must be [B, C, H, W]");
  const int B = z.dim(0), C = z.dim(1);
  const std::size_t S = static_cast<std::size_t>(z.dim(2)) * static_cast<std::size_t>(z.dim(3));
  if (C < 2) throw ConfigError("segmentation_loss: need at least two classes");
  if (targets.size() != static_cast<std::size_t>(B)) throw ConfigError("segmentation_loss: batch size mismatch");
  for (const auto& t : targets)
    if (t.classes != C || t.height != z.dim(2) || t.width != z.dim(3))
      throw ConfigError("segmentation_loss: target shape mismatch");
  const std::size_t Cs = static_cast<std::size_t>(C);
  auto at = [S, Cs](int b, std::size_t c, std::size_t s) { return (static_cast<std::size_t>(b) * Cs + c) * S + s; };

  Tensor prob(z.shape());
  double ce = 0.0;
  for (int b = 0; b < B; ++b) {
    const auto& y = targets[static_cast<std::size_t>(b)].data;
    for (std::size_t s = 0; s < S; ++s) {
      double mx = z[at(b, 0, s)];
      for (std::size_t c = 1; c < Cs; ++c) mx = std::max(mx, z[at(b, c, s)]);
      double sum = 0.0;
      for (std::size_t c = 0; c < Cs; ++c) sum += std::exp(z[at(b, c, s)] - mx);
      const double lse = std::log(sum);
      for (std::size_t c = 0; c < Cs; ++c) {
        const double logp = z[at(b, c, s)] - mx - lse;
        prob[at(b, c, s)] = std::exp(logp);
        ce -= y[c * S + s] * logp;
      }
    }
  }
  const double npix = static_cast<double>(B) * static_cast<double>(S);
  ce /= npix;

  std::vector<double> inter(Cs, 0.0), psum(Cs, 0.0), ysum(Cs, 0.0);
  for (int b = 0; b < B; ++b) {
    const auto& y = targets[static_cast<std::size_t>(b)].data;
    for (std::size_t c = 1; c < Cs; ++c)
      for (std::size_t s = 0; s < S; ++s) {
        const double p = prob[at(b, c, s)];
        inter[c] += p * y[c * S + s];
        psum[c] += p;
        ysum[c] += y[c * S + s];
      }
  }
  double dice = 0.0;
  for (std::size_t c = 1; c < Cs; ++c) dice += (2.0 * inter[c] + smooth) / (psum[c] + ysum[c] + smooth);
  dice /= static_cast<double>(C - 1);
  const double loss = 0.5 * ce + 0.5 * (1.0 - dice);
  if (!std::isfinite(loss)) throw NumericError("segmentation loss is not finite");

  return ag::make_op(Tensor({1}, loss), {logits},
                     [=, prob = std::move(prob), inter = std::move(inter), psum = std::move(psum),
                      ysum = std::move(ysum)](ag::Node& self) {
    const double g = self.grad[0];
    Tensor& dz = self.parents[0]->grad_buffer();
    const double wd = -0.5 / static_cast<double>(C - 1);
    std::vector<double> gp(Cs);
    for (int b = 0; b < B; ++b) {
      const auto& y = targets[static_cast<std::size_t>(b)].data;
      for (std::size_t s = 0; s < S; ++s) {
        double ysum_px = 0.0;
        for (std::size_t c = 0; c < Cs; ++c) ysum_px += y[c * S + s];
        gp[0] = 0.0;
        for (std::size_t c = 1; c < Cs; ++c) {
          const double den = psum[c] + ysum[c] + smooth;
          gp[c] = wd * (2.0 * y[c * S + s] / den - (2.0 * inter[c] + smooth) / (den * den));
        }
        double pg = 0.0;
        for (std::size_t c = 0; c < Cs; ++c) pg += prob[at(b, c, s)] * gp[c];
        for (std::size_t c = 0; c < Cs; ++c) {
          const double p = prob[at(b, c, s)];
          const double dce = 0.5 * (p * ysum_px - y[c * S + s]) / npix;
          dz[at(b, c, s)] += g * (dce + p * (gp[c] - pg));
        }
      }
    }
  });
}

std::vector<NamedGradCheck> standard_grad_checks(std::uint64_t seed, const GradCheckOptions& base) {
  NetworkConfig c;
  c.enc_blocks = 2;
  c.base_channels = 2;
  c.dec_blocks_pretrained = 1;
  c.g1_dims = {6, 4};
  c.g2_channels = {3, 3};
  c.num_classes = 3;
  c.input_height = c.input_width = 16;
  Rng rng(seed);
  auto images = [&](int n) {
    ag::Tensor t({n, 1, 16, 16});
    for (double& v : t.span()) v = rng.uniform();
    return ag::constant(t);
  };
  GradCheckOptions opts = base;
  opts.seed = seed;
  std::vector<NamedGradCheck> out;
  {
    Network net(c, seed);
    DatasetLayout layout{{8, 8, 8}, 2};
    BatchPlan plan = compose_global_GD(layout, 2, rng);
    auto x = images(static_cast<int>(plan.items.size()));
    std::vector<Parameter> params;
    for (const auto& p : net.store().parameters())
      if (p.group == kEncoder || p.group == kG1) params.push_back(p);
    out.push_back({"global", grad_check([&] {
                     return global_loss_op(net.g1(net.encode(x, ag::BnMode::train).bottleneck, ag::BnMode::train),
                                           plan, LossConfig{});
                   }, params, opts)});
  }
  {
    Network net(c, seed + 1);
    net.store().set_frozen(kEncoder, true);
    RegionPlan plan = compose_local_LR(3, make_region_grid(8, 8, 3, 2, 4, rng));
    auto x = images(6);
    std::vector<Parameter> params;
    for (const auto& p : net.store().parameters())
      if (p.group == kG2 || p.name.rfind("dec1.", 0) == 0) params.push_back(p);
    out.push_back({"local", grad_check([&] {
                     auto enc = net.encode(x, ag::BnMode::infer);
                     return local_loss_op(net.g2(net.decode(enc, 1, ag::BnMode::train), ag::BnMode::train), plan,
                                          LossConfig{});
                   }, params, opts)});
  }
  {
    Network net(c, seed + 2);
    auto x = images(2);
    std::vector<SoftLabels> targets;
    for (int b = 0; b < 2; ++b) {
      LabelMap lm(16, 16);
      for (auto& v : lm.data) v = static_cast<std::uint8_t>(rng.below_int(3));
      targets.push_back(one_hot(lm, 3));
    }
    out.push_back({"segmentation", grad_check([&] {
                     return segmentation_loss(net.segment(x, ag::BnMode::train), targets);
                   }, net.store().parameters(), opts)});
  }
  return out;
}


}  // namespace sslseg
