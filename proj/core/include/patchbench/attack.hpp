// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// Adversarial patch generation: random initialisation, regularised
// cross-entropy objective, projected gradient steps and the end-to-end
// saliency -> grid search -> optimisation pipeline.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "patchbench/detector.hpp"
#include "patchbench/image.hpp"
#include "patchbench/placement.hpp"
#include "patchbench/rng.hpp"
#include "patchbench/saliency.hpp"

namespace patchbench {

enum class NormOrder { kL1, kL2, kLinf };

struct AttackConfig {
  std::optional<int> target_class;  // absent: untargeted
  double lambda = 0.01;
  NormOrder norm = NormOrder::kL2;
  double eta = 0.05;
  int iterations = 500;
  double epsilon = 1.0;
  double patch_size_fraction = 0.1;
  std::uint64_t seed = 0;

  // Placement.
  bool use_saliency = true;
  double saliency_threshold = 0.6;
  int max_regions = 3;
  std::optional<int> stride;  // default: default_stride()
  PlacementObjective objective = PlacementObjective::kMinConfidence;
  int jobs = 1;

  AttackMode mode() const {
    return target_class ? AttackMode::kTargeted : AttackMode::kUntargeted;
  }
  // Throws kConfig naming the first invalid field.
  void validate() const;
};

// Side length floor(sqrt(fraction * H * W)); throws kSize when it is < 1 or
// exceeds the image.
int patch_side(int image_h, int image_w, double patch_size_fraction);

// Square patch with i.i.d. uniform pixels drawn from `rng`.
Patch init_patch(int image_h, int image_w, const AttackConfig& config, RngStream& rng);
// Draws from derive_stream(config.seed, {0}).
Patch init_patch(int image_h, int image_w, const AttackConfig& config);

// ||delta||_p over the pixels covered by the shape mask.
double patch_norm(const Patch& patch, NormOrder norm);

// Targeted: CE(target) + lambda ||delta||_p. Untargeted: -CE(true) +
// lambda ||delta||_p. Requires a probability-capable detector.
double attack_loss(const Detector& detector, const Image& image, const Patch& patch, int label,
                   double lambda, NormOrder norm, AttackMode mode);

// Clamp (patch - reference) to [-eps, eps], then clamp to [0, 1]. Throws
// kShape on mismatched patches.
Patch project_patch(const Patch& patch, const Patch& reference, double epsilon);

struct LossAndPatchGradient {
  double loss = 0;
  Tensor3<double> gradient;  // patch_h x patch_w x 3, zero outside the shape
};

// Loss at the patch's current position and its gradient with respect to the
// patch pixels (image gradient restricted to the patch through apply_patch).
LossAndPatchGradient attack_loss_gradient(const Detector& detector, const Image& image,
                                          const Patch& patch, int label, double lambda,
                                          NormOrder norm, AttackMode mode);

struct OptimizeResult {
  Patch patch;
  std::vector<double> loss_trace;  // iterations + 1 entries
};

// Projected gradient descent on attack_loss at `position`. `label` is the
// target class (targeted) or the true class (untargeted). Throws kDivergence
// with the iteration index on a non-finite loss.
OptimizeResult optimize_patch(const Detector& detector, const Image& image, const Patch& patch,
                              Position position, const AttackConfig& config, int label);

struct AttackResult {
  int true_class = 0;
  Patch patch;  // optimised, positioned at `position`
  Position position;
  std::vector<double> loss_trace;
  std::vector<Detection> pre_detections;
  std::vector<Detection> post_detections;
  Image adversarial;
  Heatmap heatmap;  // image-resolution saliency, empty if unused
  PlacementGrid grid;
  std::optional<PlacementResult> placement;  // absent when the fallback was used
  bool used_fallback = false;
};

// Top-left anchor that centres a patch on the box, clamped to the image.
Position bbox_center_anchor(const BoundingBox& box, int patch_h, int patch_w, int image_h,
                            int image_w);

// init_patch -> EigenCAM regions -> grid search -> optimize_patch at p*.
// `true_class` < 0 uses the clean top detection's class.
AttackResult run_attack(const Detector& detector, const Image& image, int true_class,
                        const AttackConfig& config, RngStream& rng);

}  // namespace patchbench
