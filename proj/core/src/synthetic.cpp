// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <fmt/format.h>

#include "patchbench/error.hpp"

namespace patchbench {

namespace {

constexpr std::array<std::string_view, kShapeClassCount> kNames = {"disk", "square", "triangle",
                                                                   "cross"};

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

bool inside(int class_id, double x, double y, double cx, double cy, double r) {
  const double dx = x - cx;
  const double dy = y - cy;
  switch (class_id) {
    case 0:
      return dx * dx + dy * dy <= r * r;
    case 1:
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case 2: {
      double e0 = edge(cx, cy - r, cx - r, cy + r, x, y);
      double e1 = edge(cx - r, cy + r, cx + r, cy + r, x, y);
      double e2 = edge(cx + r, cy + r, cx, cy - r, x, y);
      return (e0 <= 0 && e1 <= 0 && e2 <= 0) || (e0 >= 0 && e1 >= 0 && e2 >= 0);
    }
    case 3: {
      const double arm = r / 3.0;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) ||
             (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
    default:
      return false;
  }
}

}  // namespace

std::string_view shape_class_name(int class_id) {
  if (class_id < 0 || class_id >= kShapeClassCount) {
    throw Error(ErrorKind::kLookup, fmt::format("unknown shape class {}", class_id));
  }
  return kNames[class_id];
}

ShapeSample render_shape(int class_id, int size, RngStream& rng) {
  shape_class_name(class_id);
  const double background = rng.uniform(0.25, 0.75);
  std::array<double, kChannels> color{};
  // Keep the object clearly separated from the background level.
  do {
    for (double& c : color) c = rng.uniform();
  } while (std::abs((color[0] + color[1] + color[2]) / 3.0 - background) < 0.3);

  const double radius = rng.uniform(0.16, 0.3) * size;
  const double margin = radius + 1.0;
  const double cx = rng.uniform(margin, size - margin);
  const double cy = rng.uniform(margin, size - margin);

  ShapeSample sample;
  sample.class_id = class_id;
  sample.image = Image(size, size);
  sample.object_mask = BinaryMask(size, size);
  int top = size, left = size, bottom = -1, right = -1;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const bool on = inside(class_id, c + 0.5, r + 0.5, cx, cy, radius);
      sample.object_mask.set(r, c, on);
      if (on) {
        top = std::min(top, r);
        left = std::min(left, c);
        bottom = std::max(bottom, r);
        right = std::max(right, c);
      }
      for (int ch = 0; ch < kChannels; ++ch) {
        double v = (on ? color[ch] : background) + 0.03 * rng.normal();
        sample.image.set(r, c, ch, static_cast<float>(std::clamp(v, 0.0, 1.0)));
      }
    }
  }
  sample.bbox = {static_cast<double>(left), static_cast<double>(top),
                 static_cast<double>(right - left + 1), static_cast<double>(bottom - top + 1)};
  return sample;
}

std::vector<ShapeSample> make_shape_corpus(int per_class, int size, std::uint64_t seed,
                                           std::uint64_t corpus_tag) {
  std::vector<ShapeSample> corpus;
  corpus.reserve(static_cast<std::size_t>(per_class) * kShapeClassCount);
  for (int i = 0; i < per_class * kShapeClassCount; ++i) {
    RngStream rng = derive_stream(seed, {corpus_tag, static_cast<std::uint64_t>(i)});
    corpus.push_back(render_shape(i % kShapeClassCount, size, rng));
  }
  return corpus;
}

std::vector<ShapeSample> fixture_set(std::uint64_t seed, int count) {
  std::vector<ShapeSample> corpus;
  for (int i = 0; i < count; ++i) {
    RngStream rng = derive_stream(seed, {kFixtureCorpusTag, static_cast<std::uint64_t>(i)});
    corpus.push_back(render_shape(i % kShapeClassCount, 64, rng));
  }
  return corpus;
}

}  // namespace patchbench
