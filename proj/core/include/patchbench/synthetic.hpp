// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural single-object corpus: one filled shape on a low-amplitude noise
// background. Used to train the toy detector and as the fixture dataset.

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "patchbench/image.hpp"
#include "patchbench/rng.hpp"

namespace patchbench {

inline constexpr int kShapeClassCount = 4;

// "disk", "square", "triangle", "cross"; throws kLookup for other ids.
std::string_view shape_class_name(int class_id);

struct ShapeSample {
  Image image;
  int class_id = 0;
  BoundingBox bbox;
  BinaryMask object_mask;
};

ShapeSample render_shape(int class_id, int size, RngStream& rng);

// `per_class` samples of each class, interleaved by class (0,1,2,3,0,1,...).
// Sample i draws from stream (seed, [corpus_tag, i]).
std::vector<ShapeSample> make_shape_corpus(int per_class, int size, std::uint64_t seed,
                                           std::uint64_t corpus_tag);

// Stream tags keep training data and fixtures disjoint.
inline constexpr std::uint64_t kTrainCorpusTag = 1;
inline constexpr std::uint64_t kFixtureCorpusTag = 2;
inline constexpr std::uint64_t kHeldOutCorpusTag = 3;

// The 20-image evaluation fixture set (5 per class, 64x64).
std::vector<ShapeSample> fixture_set(std::uint64_t seed, int count = 20);

}  // namespace patchbench
