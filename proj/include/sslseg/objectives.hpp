#pragma once

// Training objectives as autograd nodes.

#include <cstdint>
#include <string>
#include <vector>

#include "sslseg/autograd.hpp"
#include "sslseg/losses.hpp"
#include "sslseg/network.hpp"
#include "sslseg/transforms.hpp"

namespace sslseg {

// reps [items, D] -> scalar global contrastive loss under `plan`.
ag::Var global_loss_op(const ag::Var& reps, const BatchPlan& plan, const LossConfig& cfg);

// maps [num_maps, C, W1, W2] -> scalar local contrastive loss under `plan`.
ag::Var local_loss_op(const ag::Var& maps, const RegionPlan& plan, const LossConfig& cfg);

// a + lambda * b for scalars.
ag::Var add_scaled(const ag::Var& a, const ag::Var& b, double lambda);

inline constexpr double kDiceSmooth = 1.0;

// logits [B, C, H, W] against per-image soft targets:
// 0.5 * pixel-mean cross-entropy + 0.5 * (1 - mean foreground soft Dice).
// Soft Dice of class c is (2 sum p*y + s) / (sum p + sum y + s) over the
// whole batch.
ag::Var segmentation_loss(const ag::Var& logits, const std::vector<SoftLabels>& targets,
                          double smooth = kDiceSmooth);

struct NamedGradCheck {
  std::string name;
  GradCheckReport report;
};

// Finite-difference checks on a two-block toy network: "global" (encoder +
// g1 under G^D), "local" (frozen encoder, dec1 + g2 under L^R) and
// "segmentation" (all parameters).
std::vector<NamedGradCheck> standard_grad_checks(std::uint64_t seed, const GradCheckOptions& base = {});

}  // namespace sslseg
