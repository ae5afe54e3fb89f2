// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// EigenCAM saliency: project a layer's activations onto their first right
// singular vector, then locate high-saliency rectangles.

#pragma once

#include <vector>

#include "patchbench/detector.hpp"
#include "patchbench/image.hpp"

namespace patchbench {

struct SvdResult {
  double sigma = 0;
  std::vector<double> u;  // length H_f * W_f, unit norm
  std::vector<double> v;  // length C_f, unit norm
};

// Leading singular triplet of the (H_f * W_f) x C_f activation matrix.
// Throws kNumeric on non-finite input.
SvdResult leading_singular_triplet(const FeatureMaps& features);

// Heatmap values are rounded to a 2^-24 grid so that rescaling the features
// by a positive constant reproduces the same map bit-for-bit.
inline constexpr double kHeatmapResolution = 1.0 / 16777216.0;

// |O v1| reshaped to H_f x W_f and max-normalised; all-zero features give an
// all-zero map.
Heatmap eigencam(const FeatureMaps& features);

// Corner-aligned bilinear resampling followed by max-normalisation.
Heatmap upsample(const Heatmap& heatmap, int target_h, int target_w);

struct SalientRegion {
  Region rect;
  double mass = 0;  // sum of heatmap values in the component
};

// Bounding rectangles of 4-connected components at or above
// threshold_fraction * max (zero pixels never qualify), by descending mass.
std::vector<SalientRegion> salient_components(const Heatmap& heatmap, double threshold_fraction);
std::vector<Region> extract_salient_regions(const Heatmap& heatmap,
                                            double threshold_fraction = 0.6);

}  // namespace patchbench
