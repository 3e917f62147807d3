#include "doctest.h"

#include <cmath>

#include "sslseg/errors.hpp"
#include "sslseg/network.hpp"
#include "sslseg/objectives.hpp"
#include "sslseg/rng.hpp"

using namespace sslseg;
using ag::BnMode;

namespace {

NetworkConfig toy_config() {
  NetworkConfig c;
  c.enc_blocks = 2;
  c.base_channels = 2;
  c.dec_blocks_pretrained = 1;
  c.g1_dims = {6, 4};
  c.g2_channels = {3, 3};
  c.num_classes = 3;
  c.input_height = 16;
  c.input_width = 16;
  return c;
}

ag::Var random_images(int n, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  ag::Tensor t({n, 1, h, w});
  for (double& v : t.span()) v = rng.uniform();
  return ag::constant(t);
}

}  // namespace

TEST_CASE("shape algebra over the config lattice") {
  for (int E = 2; E <= 4; ++E)
    for (int l = 1; l < E; ++l)
      for (int size : {16, 32}) {
        NetworkConfig c = toy_config();
        c.enc_blocks = E;
        c.dec_blocks_pretrained = l;
        c.input_height = c.input_width = size;
        if (size % (1 << E)) continue;
        Network net(c, 1);
        auto x = random_images(2, size, size, 2);
        auto enc = net.encode(x, BnMode::train);
        CHECK(enc.bottleneck->value.dim(2) == size >> E);
        auto dec = net.decode(enc, l, BnMode::train);
        CHECK(dec->value.dim(2) == size >> (E - l));
        CHECK(dec->value.dim(1) == c.decoder_channels(l));
        auto g2 = net.g2(dec, BnMode::train);
        CHECK(g2->value.dim(1) == c.g2_channels[1]);
        CHECK(g2->value.dim(3) == size >> (E - l));
        auto seg = net.segment(x, BnMode::train);
        CHECK(seg->value.shape() == std::vector<int>{2, c.num_classes, size, size});
        CHECK(net.g1(enc.bottleneck, BnMode::train)->value.dim(1) == c.g1_dims[1]);
      }
}

TEST_CASE("documented shape examples") {
  NetworkConfig c = NetworkConfig::desk();
  CHECK(c.bottleneck_height() == 4);
  c.input_height = c.input_width = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  NetworkConfig full;
  full.dec_blocks_pretrained = 3;
  CHECK(full.bottleneck_height() == 3);
  CHECK((full.input_height >> (full.enc_blocks - 3)) == 24);
  CHECK(full.g1_dims[1] == 128);

  NetworkConfig d = NetworkConfig::desk();
  d.g1_dims = {64, 16};
  Network net(d, 0);
  auto x = random_images(5, 32, 32, 1);
  auto seg = net.segment(x, BnMode::train);
  CHECK(seg->value.shape() == std::vector<int>{5, 3, 32, 32});
  CHECK(net.decode(net.encode(x, BnMode::train), 1, BnMode::train)->value.dim(2) == 8);
  CHECK(net.g1(net.encode(x, BnMode::train).bottleneck, BnMode::train)->value.dim(1) == 16);
}

TEST_CASE("g1 of a zero bottleneck is finite") {
  Network net(toy_config(), 3);
  ag::Tensor zero({2, 4, 4, 4});
  auto out = net.g1(ag::constant(zero), BnMode::infer);
  for (double v : out->value.span()) CHECK(std::isfinite(v));
}

TEST_CASE("gradient check of the global loss through encoder and g1") {
  Network net(toy_config(), 11);
  Rng rng(5);
  DatasetLayout layout{{8, 8, 8}, 2};
  BatchPlan plan = compose_global_GD(layout, 2, rng);
  auto x = random_images(static_cast<int>(plan.items.size()), 16, 16, 7);
  auto loss_fn = [&] {
    auto enc = net.encode(x, BnMode::train);
    return global_loss_op(net.g1(enc.bottleneck, BnMode::train), plan, LossConfig{});
  };
  std::vector<Parameter> params;
  for (const auto& p : net.store().parameters())
    if (p.group == kEncoder || p.group == kG1) params.push_back(p);
  auto report = grad_check(loss_fn, params);
  CHECK(report.entries.size() >= 200);
  INFO("worst " << report.entries[report.worst].parameter << " " << report.entries[report.worst].analytic << " "
                << report.entries[report.worst].numeric);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("gradient check of the local loss through frozen encoder, decoder block and g2") {
  Network net(toy_config(), 12);
  net.store().set_frozen(kEncoder, true);
  Rng rng(6);
  auto grid = make_region_grid(8, 8, 3, 2, 4, rng);
  RegionPlan plan = compose_local_LR(3, grid);
  auto x = random_images(6, 16, 16, 8);
  auto loss_fn = [&] {
    auto enc = net.encode(x, BnMode::infer);
    return local_loss_op(net.g2(net.decode(enc, 1, BnMode::train), BnMode::train), plan, LossConfig{});
  };
  std::vector<Parameter> params;
  for (const auto& p : net.store().parameters())
    if (p.group == kG2 || p.name.rfind("dec1.", 0) == 0) params.push_back(p);
  auto report = grad_check(loss_fn, params);
  CHECK(report.entries.size() >= 200);
  INFO("worst " << report.entries[report.worst].parameter << " " << report.entries[report.worst].analytic << " "
                << report.entries[report.worst].numeric);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("gradient check of the segmentation loss through the full network") {
  Network net(toy_config(), 13);
  auto x = random_images(2, 16, 16, 9);
  Rng rng(3);
  std::vector<SoftLabels> targets;
  for (int b = 0; b < 2; ++b) {
    LabelMap lm(16, 16);
    for (auto& v : lm.data) v = static_cast<std::uint8_t>(rng.below_int(3));
    targets.push_back(one_hot(lm, 3));
  }
  auto loss_fn = [&] { return segmentation_loss(net.segment(x, BnMode::train), targets); };
  auto report = grad_check(loss_fn, net.store().parameters());
  INFO("worst " << report.entries[report.worst].parameter << " " << report.entries[report.worst].analytic << " "
                << report.entries[report.worst].numeric);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("grad_check flags a zeroed analytic entry") {
  Network net(toy_config(), 14);
  auto x = random_images(4, 16, 16, 10);
  LabelMap lm(16, 16, 1);
  std::vector<SoftLabels> targets(4, one_hot(lm, 3));
  auto loss_fn = [&] { return segmentation_loss(net.segment(x, BnMode::train), targets); };
  const auto& params = net.store().parameters();
  std::size_t head = 0;
  while (params[head].name != "head.b") ++head;
  GradCheckOptions opts;
  opts.samples = 10;
  opts.force_include = {{head, 1}};
  opts.analytic_hook = [&](std::vector<ag::Tensor>& g) { g[head][1] = 0.0; };
  auto report = grad_check(loss_fn, params, opts);
  CHECK_FALSE(report.passed);
  CHECK(report.entries[report.worst].parameter == "head.b");
  CHECK(report.entries[report.worst].index == 1);
}

TEST_CASE("frozen group keeps requires_grad off") {
  Network net(toy_config(), 1);
  net.store().set_frozen(kEncoder, true);
  for (const auto& p : net.store().parameters()) CHECK(p.var->requires_grad == (p.group != kEncoder));
  net.store().set_frozen(kEncoder, false);
  for (const auto& p : net.store().parameters()) CHECK(p.var->requires_grad);
}

TEST_CASE("state round-trips through load_state") {
  Network a(toy_config(), 1), b(toy_config(), 2);
  CHECK(a.store().state() != b.store().state());
  CHECK(b.store().load_state(a.store().state()) == static_cast<int>(a.store().state().size()));
  CHECK(a.store().state() == b.store().state());
}
