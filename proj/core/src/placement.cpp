// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/placement.hpp"

#include <algorithm>
#include <cmath>

#include "patchbench/error.hpp"
#include "patchbench/eval.hpp"
#include "patchbench/parallel.hpp"

namespace patchbench {

int default_stride(int patch_h, int patch_w) {
  return std::max(1, (std::min(patch_h, patch_w) + 1) / 2);
}

namespace {

std::vector<int> axis_anchors(int start, int extent, int patch, int stride) {
  std::vector<int> anchors;
  const int last = start + extent - patch;
  if (last < start) return anchors;
  for (int a = start; a <= last; a += stride) anchors.push_back(a);
  if (anchors.back() != last) anchors.push_back(last);
  return anchors;
}

bool row_major_less(const Position& a, const Position& b) {
  return a.row != b.row ? a.row < b.row : a.col < b.col;
}

}  // namespace

PlacementGrid candidate_positions(const Region& region, int patch_h, int patch_w, int stride) {
  if (stride < 1) throw Error(ErrorKind::kValue, "grid stride must be >= 1");
  PlacementGrid grid;
  grid.stride = stride;
  grid.source = region;
  const auto rows = axis_anchors(region.top, region.height, patch_h, stride);
  const auto cols = axis_anchors(region.left, region.width, patch_w, stride);
  grid.patch_too_large = rows.empty() || cols.empty();
  for (int r : rows)
    for (int c : cols) grid.positions.push_back({r, c});
  return grid;
}

PlacementGrid merge_grids(const std::vector<PlacementGrid>& grids) {
  PlacementGrid merged;
  if (grids.empty()) return merged;
  merged.stride = grids.front().stride;
  merged.source = grids.front().source;
  merged.patch_too_large = true;
  for (const auto& g : grids) {
    merged.patch_too_large = merged.patch_too_large && g.patch_too_large;
    for (const auto& p : g.positions) {
      if (std::find(merged.positions.begin(), merged.positions.end(), p) ==
          merged.positions.end()) {
        merged.positions.push_back(p);
      }
    }
  }
  std::sort(merged.positions.begin(), merged.positions.end(), row_major_less);
  return merged;
}

Region fit_search_area(const Region& area, int patch_h, int patch_w, int image_h, int image_w) {
  Region out = area;
  auto grow = [](int& start, int& extent, int need, int limit) {
    if (extent >= need) return;
    start -= (need - extent) / 2;
    extent = need;
    start = std::clamp(start, 0, std::max(0, limit - need));
  };
  grow(out.top, out.height, patch_h, image_h);
  grow(out.left, out.width, patch_w, image_w);
  return intersect(out, {0, 0, image_h, image_w});
}

double placement_score(const Detector& detector, const Image& image, const Patch& patch,
                       Position position, int true_class, PlacementObjective objective) {
  Patch placed = patch;
  placed.position = position;
  const Image patched = apply_patch(image, placed);
  if (objective == PlacementObjective::kMinConfidence) {
    return score_detection(detector.detect(patched), true_class);
  }
  const auto probs = detector.class_probabilities(patched);
  return std::log(std::max(probs.at(true_class), 1e-300));
}

PlacementResult grid_search(const Detector& detector, const Image& image, const Patch& patch,
                            const PlacementGrid& grid, int true_class,
                            PlacementObjective objective, int jobs) {
  if (grid.positions.empty()) {
    throw Error(ErrorKind::kPlacement, "placement grid is empty");
  }
  PlacementResult result;
  result.scores.assign(grid.positions.size(), 0.0);
  parallel_for(grid.positions.size(), jobs, [&](std::size_t i) {
    result.scores[i] =
        placement_score(detector, image, patch, grid.positions[i], true_class, objective);
  });
  // Strict comparison keeps the earliest index on ties.
  result.index = 0;
  for (std::size_t i = 1; i < result.scores.size(); ++i) {
    if (result.scores[i] < result.scores[result.index]) result.index = i;
  }
  result.position = grid.positions[result.index];
  result.score = result.scores[result.index];
  return result;
}

}  // namespace patchbench
