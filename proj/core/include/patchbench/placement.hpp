// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "patchbench/detector.hpp"
#include "patchbench/image.hpp"

namespace patchbench {

struct PlacementGrid {
  std::vector<Position> positions;  // unique, row-major
  int stride = 1;
  Region source;
  bool patch_too_large = false;  // set when the patch does not fit the region
};

// ceil(min(patch_h, patch_w) / 2)
int default_stride(int patch_h, int patch_w);

// Anchors stepping by `stride` from the region's top-left such that the patch
// stays inside the region; the last fitting anchor on each axis is appended
// when it falls off-stride.
PlacementGrid candidate_positions(const Region& region, int patch_h, int patch_w, int stride);

// Concatenates grids, keeping the first occurrence of each position and
// re-sorting row-major.
PlacementGrid merge_grids(const std::vector<PlacementGrid>& grids);

// Grows `area` symmetrically (clamped to the image) until it can hold a
// patch_h x patch_w patch.
Region fit_search_area(const Region& area, int patch_h, int patch_w, int image_h, int image_w);

enum class PlacementObjective {
  kMinConfidence,  // true-class confidence, 0 when the top class differs
  kMaxLoss,        // negative cross-entropy of the true class
};

struct PlacementResult {
  Position position;
  std::size_t index = 0;
  double score = 0;             // objective value at `position` (lower is better)
  std::vector<double> scores;   // one per grid position
};

// Objective value of the patch placed at `position`.
double placement_score(const Detector& detector, const Image& image, const Patch& patch,
                       Position position, int true_class, PlacementObjective objective);

// Exhaustive evaluation; returns the minimum with ties going to the lowest
// row-major index. Throws kPlacement on an empty grid.
PlacementResult grid_search(const Detector& detector, const Image& image, const Patch& patch,
                            const PlacementGrid& grid, int true_class,
                            PlacementObjective objective = PlacementObjective::kMinConfidence,
                            int jobs = 1);

}  // namespace patchbench
