// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/attack.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "patchbench/error.hpp"

namespace patchbench {

void AttackConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kConfig, what); };
  if (!(lambda >= 0)) fail(fmt::format("lambda must be >= 0, got {}", lambda));
  if (!(eta > 0)) fail(fmt::format("eta must be > 0, got {}", eta));
  if (iterations < 0) fail(fmt::format("iterations must be >= 0, got {}", iterations));
  if (!(epsilon > 0 && epsilon <= 1)) fail(fmt::format("epsilon must lie in (0, 1], got {}", epsilon));
  if (!(patch_size_fraction > 0 && patch_size_fraction <= 0.5)) {
    fail(fmt::format("patch_size_fraction must lie in (0, 0.5], got {}", patch_size_fraction));
  }
  if (!(saliency_threshold > 0 && saliency_threshold <= 1)) {
    fail(fmt::format("saliency_threshold must lie in (0, 1], got {}", saliency_threshold));
  }
  if (max_regions < 1) fail("max_regions must be >= 1");
  if (stride && *stride < 1) fail("stride must be >= 1");
  if (target_class && *target_class < 0) fail("target_class must be >= 0");
}

int patch_side(int image_h, int image_w, double patch_size_fraction) {
  const double area = patch_size_fraction * static_cast<double>(image_h) * image_w;
  const int side = static_cast<int>(std::floor(std::sqrt(area)));
  if (side < 1) {
    throw Error(ErrorKind::kSize,
                fmt::format("patch fraction {} of {}x{} gives side 0", patch_size_fraction,
                            image_h, image_w));
  }
  if (side > std::min(image_h, image_w)) {
    throw Error(ErrorKind::kSize, fmt::format("patch side {} exceeds image {}x{}", side, image_h,
                                              image_w));
  }
  return side;
}

Patch init_patch(int image_h, int image_w, const AttackConfig& config, RngStream& rng) {
  const int side = patch_side(image_h, image_w, config.patch_size_fraction);
  std::vector<float> values(static_cast<std::size_t>(side) * side * kChannels);
  for (float& v : values) v = static_cast<float>(rng.uniform());
  return Patch{Image::from_values(side, side, std::move(values)), std::nullopt, {0, 0}};
}

Patch init_patch(int image_h, int image_w, const AttackConfig& config) {
  RngStream rng = derive_stream(config.seed, {0});
  return init_patch(image_h, image_w, config, rng);
}

double patch_norm(const Patch& patch, NormOrder norm) {
  double acc = 0;
  for (int i = 0; i < patch.height(); ++i)
    for (int j = 0; j < patch.width(); ++j) {
      if (!patch.covers(i, j)) continue;
      for (int ch = 0; ch < kChannels; ++ch) {
        const double v = std::abs(static_cast<double>(patch.pixels.at(i, j, ch)));
        switch (norm) {
          case NormOrder::kL1: acc += v; break;
          case NormOrder::kL2: acc += v * v; break;
          case NormOrder::kLinf: acc = std::max(acc, v); break;
        }
      }
    }
  return norm == NormOrder::kL2 ? std::sqrt(acc) : acc;
}

namespace {

double signed_cross_entropy(double ce, AttackMode mode) {
  return mode == AttackMode::kTargeted ? ce : -ce;
}

// Subgradient of ||delta||_p with respect to each covered pixel.
Tensor3<double> norm_gradient(const Patch& patch, NormOrder norm) {
  Tensor3<double> g(patch.height(), patch.width(), kChannels, 0.0);
  const double total = patch_norm(patch, norm);
  bool linf_done = false;
  for (int i = 0; i < patch.height(); ++i)
    for (int j = 0; j < patch.width(); ++j) {
      if (!patch.covers(i, j)) continue;
      for (int ch = 0; ch < kChannels; ++ch) {
        const double v = patch.pixels.at(i, j, ch);
        switch (norm) {
          case NormOrder::kL1:
            g(i, j, ch) = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
            break;
          case NormOrder::kL2:
            g(i, j, ch) = total > 0 ? v / total : 0.0;
            break;
          case NormOrder::kLinf:
            if (!linf_done && total > 0 && std::abs(v) == total) {
              g(i, j, ch) = v > 0 ? 1.0 : -1.0;
              linf_done = true;
            }
            break;
        }
      }
    }
  return g;
}

}  // namespace

double attack_loss(const Detector& detector, const Image& image, const Patch& patch, int label,
                   double lambda, NormOrder norm, AttackMode mode) {
  const Image patched = apply_patch(image, patch);
  const auto probs = detector.class_probabilities(patched);
  const double ce = -std::log(std::max(probs.at(label), 1e-300));
  return signed_cross_entropy(ce, mode) + lambda * patch_norm(patch, norm);
}

LossAndPatchGradient attack_loss_gradient(const Detector& detector, const Image& image,
                                          const Patch& patch, int label, double lambda,
                                          NormOrder norm, AttackMode mode) {
  const Image patched = apply_patch(image, patch);
  const LossGradient lg = detector.cross_entropy_gradient(patched, label);
  const double sign = mode == AttackMode::kTargeted ? 1.0 : -1.0;
  LossAndPatchGradient out;
  out.loss = sign * lg.cross_entropy + lambda * patch_norm(patch, norm);
  out.gradient = norm_gradient(patch, norm);
  for (int i = 0; i < patch.height(); ++i)
    for (int j = 0; j < patch.width(); ++j) {
      if (!patch.covers(i, j)) continue;
      for (int ch = 0; ch < kChannels; ++ch) {
        out.gradient(i, j, ch) =
            sign * lg.gradient(patch.position.row + i, patch.position.col + j, ch) +
            lambda * out.gradient(i, j, ch);
      }
    }
  return out;
}

Patch project_patch(const Patch& patch, const Patch& reference, double epsilon) {
  if (patch.height() != reference.height() || patch.width() != reference.width()) {
    throw Error(ErrorKind::kShape,
                fmt::format("patch {}x{} does not match reference {}x{}", patch.height(),
                            patch.width(), reference.height(), reference.width()));
  }
  std::vector<float> values(patch.pixels.values().size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double ref = reference.pixels.values()[i];
    const double lo = std::max(0.0, ref - epsilon);
    const double hi = std::min(1.0, ref + epsilon);
    const float in = patch.pixels.values()[i];
    const double clamped = std::clamp(static_cast<double>(in), lo, hi);
    float out = static_cast<float>(clamped);
    // Rounding to float may step just outside the ball; pull back one ulp.
    if (static_cast<double>(out) > hi) out = std::nextafter(out, 0.0f);
    if (static_cast<double>(out) < lo) out = std::nextafter(out, 1.0f);
    values[i] = out;
  }
  Patch out = patch;
  out.pixels = Image::from_values(patch.height(), patch.width(), std::move(values));
  return out;
}

OptimizeResult optimize_patch(const Detector& detector, const Image& image, const Patch& patch,
                              Position position, const AttackConfig& config, int label) {
  if (!detector.capabilities().has_gradients) {
    throw Error(ErrorKind::kCapability, "patch optimisation needs a gradient-capable detector");
  }
  const AttackMode mode = config.mode();
  Patch reference = patch;
  reference.position = position;
  Patch current = project_patch(reference, reference, config.epsilon);

  OptimizeResult result;
  result.loss_trace.reserve(static_cast<std::size_t>(config.iterations) + 1);
  auto record = [&](double loss, int iteration) {
    if (!std::isfinite(loss)) {
      throw Error(ErrorKind::kDivergence, fmt::format("non-finite loss at iteration {}", iteration));
    }
    result.loss_trace.push_back(loss);
  };

  for (int n = 0; n < config.iterations; ++n) {
    const LossAndPatchGradient lg =
        attack_loss_gradient(detector, image, current, label, config.lambda, config.norm, mode);
    record(lg.loss, n);
    std::vector<float> stepped(current.pixels.values().size());
    for (std::size_t i = 0; i < stepped.size(); ++i) {
      const double v = current.pixels.values()[i] - config.eta * lg.gradient.values()[i];
      stepped[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    Patch next = current;
    next.pixels = Image::from_values(current.height(), current.width(), std::move(stepped));
    current = project_patch(next, reference, config.epsilon);
  }
  record(attack_loss(detector, image, current, label, config.lambda, config.norm, mode),
         config.iterations);
  result.patch = std::move(current);
  return result;
}

Position bbox_center_anchor(const BoundingBox& box, int patch_h, int patch_w, int image_h,
                            int image_w) {
  const double cy = box.y + box.h / 2.0;
  const double cx = box.x + box.w / 2.0;
  const int row = static_cast<int>(std::lround(cy - patch_h / 2.0));
  const int col = static_cast<int>(std::lround(cx - patch_w / 2.0));
  return {std::clamp(row, 0, image_h - patch_h), std::clamp(col, 0, image_w - patch_w)};
}

namespace {

Region bbox_region(const BoundingBox& box, int image_h, int image_w) {
  const int top = static_cast<int>(std::floor(box.y));
  const int left = static_cast<int>(std::floor(box.x));
  const int bottom = static_cast<int>(std::ceil(box.y + box.h));
  const int right = static_cast<int>(std::ceil(box.x + box.w));
  return intersect({top, left, bottom - top, right - left}, {0, 0, image_h, image_w});
}

const Detection* top_detection(const std::vector<Detection>& detections) {
  if (detections.empty()) return nullptr;
  return &*std::max_element(detections.begin(), detections.end(),
                            [](const Detection& a, const Detection& b) {
                              return a.confidence < b.confidence;
                            });
}

}  // namespace

AttackResult run_attack(const Detector& detector, const Image& image, int true_class,
                        const AttackConfig& config, RngStream& rng) {
  config.validate();
  const Capabilities caps = detector.capabilities();
  if (!caps.has_gradients) {
    throw Error(ErrorKind::kCapability, "the attack needs a gradient-capable detector");
  }
  AttackResult result;
  result.pre_detections = detector.detect(image);
  const Detection* top = top_detection(result.pre_detections);
  if (true_class < 0) {
    if (!top) throw Error(ErrorKind::kData, "no clean detection to take the true class from");
    true_class = top->class_id;
  }
  result.true_class = true_class;
  const int h = image.height();
  const int w = image.width();
  const BoundingBox box =
      top ? top->bbox : BoundingBox{0, 0, static_cast<double>(w), static_cast<double>(h)};

  // Step 1: random patch.
  Patch patch = init_patch(h, w, config, rng);
  const int ph = patch.height();
  const int pw = patch.width();

  // Steps 2-3: saliency regions and grid search.
  if (config.use_saliency && caps.has_features) {
    const FeatureMaps features = detector.feature_maps(image, detector.default_feature_layer());
    result.heatmap = upsample(eigencam(features), h, w);
    const auto components = salient_components(result.heatmap, config.saliency_threshold);
    const Region object = bbox_region(box, h, w);
    const int stride = config.stride.value_or(default_stride(ph, pw));
    std::vector<PlacementGrid> grids;
    for (std::size_t k = 0; k < components.size() && k < static_cast<std::size_t>(config.max_regions);
         ++k) {
      Region area = intersect(components[k].rect, object);
      if (area.empty()) area = components[k].rect;
      area = fit_search_area(area, ph, pw, h, w);
      grids.push_back(candidate_positions(area, ph, pw, stride));
    }
    result.grid = merge_grids(grids);
  }
  Position position;
  if (!result.grid.positions.empty()) {
    result.placement = grid_search(detector, image, patch, result.grid, true_class,
                                   config.objective, config.jobs);
    position = result.placement->position;
  } else {
    result.used_fallback = true;
    position = bbox_center_anchor(box, ph, pw, h, w);
  }

  // Step 4: optimise the patch at the chosen position.
  const int label = config.target_class.value_or(true_class);
  OptimizeResult optimized = optimize_patch(detector, image, patch, position, config, label);
  result.patch = std::move(optimized.patch);
  result.position = position;
  result.loss_trace = std::move(optimized.loss_trace);
  result.adversarial = apply_patch(image, result.patch);
  result.post_detections = detector.detect(result.adversarial);
  return result;
}

}  // namespace patchbench
