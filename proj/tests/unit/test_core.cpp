// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "patchbench/error.hpp"
#include "patchbench/image.hpp"
#include "patchbench/rng.hpp"

namespace patchbench {
namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  RngStream rng = derive_stream(seed, {99});
  std::vector<float> v(static_cast<std::size_t>(h) * w * kChannels);
  for (float& x : v) x = static_cast<float>(rng.uniform());
  return Image::from_values(h, w, std::move(v));
}

Patch random_patch(int h, int w, Position pos, std::uint64_t seed) {
  return Patch{random_image(h, w, seed), std::nullopt, pos};
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::kValue;
}

TEST(Image, RejectsOutOfRangeAndBadShape) {
  EXPECT_EQ(kind_of([] { Image::from_values(1, 1, {0.f, 0.5f, 1.5f}); }), ErrorKind::kValue);
  EXPECT_EQ(kind_of([] { Image::from_values(1, 1, {0.f, 0.5f}); }), ErrorKind::kShape);
  EXPECT_EQ(kind_of([] { Image(0, 3); }), ErrorKind::kValue);
  Image img(2, 2);
  EXPECT_EQ(kind_of([&] { img.set(0, 0, 0, -0.1f); }), ErrorKind::kValue);
}

TEST(Image, FieldRoundTrip) {
  const Image img = random_image(5, 7, 1);
  EXPECT_EQ(Image::from_field_clamped(img.to_field()), img);
}

TEST(ApplyPatch, CoveredRegionCopyIsIdentity) {
  const Image img = random_image(8, 8, 2);
  Image region(3, 4);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      for (int ch = 0; ch < kChannels; ++ch) region.set(r, c, ch, img.at(r + 2, c + 1, ch));
  const Image out = apply_patch(img, Patch{region, std::nullopt, {2, 1}});
  EXPECT_EQ(std::memcmp(out.values().data(), img.values().data(), img.values().size() * sizeof(float)), 0);
}

TEST(ApplyPatch, SinglePixel) {
  const Image zero(4, 4);
  Image p(1, 1);
  for (int ch = 0; ch < kChannels; ++ch) p.set(0, 0, ch, 0.5f);
  const Image out = apply_patch(zero, Patch{p, std::nullopt, {0, 0}});
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      for (int ch = 0; ch < kChannels; ++ch) EXPECT_EQ(out.at(r, c, ch), r == 0 && c == 0 ? 0.5f : 0.f);
}

TEST(ApplyPatch, MatchesElementwiseOracle) {
  const Image img = random_image(8, 8, 3);
  const Patch patch = random_patch(3, 3, {2, 5}, 4);
  const Image out = apply_patch(img, patch);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      for (int ch = 0; ch < kChannels; ++ch) {
        const bool inside = r >= 2 && r < 5 && c >= 5 && c < 8;
        const float want = inside ? patch.pixels.at(r - 2, c - 5, ch) : img.at(r, c, ch);
        ASSERT_EQ(out.at(r, c, ch), want) << r << "," << c << "," << ch;
      }
}

TEST(ApplyPatch, ShapeMaskSelectsPixels) {
  const Image img = random_image(6, 6, 5);
  Patch patch = random_patch(3, 3, {1, 1}, 6);
  BinaryMask shape(3, 3);
  shape.set(1, 1, true);
  shape.set(0, 2, true);
  patch.shape = shape;
  const Image out = apply_patch(img, patch);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c)
      for (int ch = 0; ch < kChannels; ++ch) {
        const bool hit = (r == 2 && c == 2) || (r == 1 && c == 3);
        EXPECT_EQ(out.at(r, c, ch), hit ? patch.pixels.at(r - 1, c - 1, ch) : img.at(r, c, ch));
      }
}

TEST(ApplyPatch, AllFalseMaskIsIdentity) {
  const Image img = random_image(6, 6, 7);
  Patch patch = random_patch(4, 4, {1, 2}, 8);
  patch.shape = BinaryMask(4, 4, false);
  EXPECT_EQ(apply_patch(img, patch), img);
}

TEST(ApplyPatch, Idempotent) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng = derive_stream(seed, {1});
    const int h = rng.uniform_int(1, 6), w = rng.uniform_int(1, 6);
    const Position pos{rng.uniform_int(0, 10 - h), rng.uniform_int(0, 12 - w)};
    const Image img = random_image(10, 12, seed + 100);
    const Patch patch = random_patch(h, w, pos, seed + 200);
    const Image once = apply_patch(img, patch);
    EXPECT_EQ(apply_patch(once, patch), once);
    // Pixels outside the rectangle are untouched.
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 12; ++c) {
        if (r >= pos.row && r < pos.row + h && c >= pos.col && c < pos.col + w) continue;
        for (int ch = 0; ch < kChannels; ++ch) ASSERT_EQ(once.at(r, c, ch), img.at(r, c, ch));
      }
  }
}

TEST(ApplyPatch, OutOfBoundsNamesCoordinate) {
  const Image img(4, 4);
  const Patch patch = random_patch(2, 2, {3, 1}, 9);
  try {
    apply_patch(img, patch);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kBounds);
    EXPECT_NE(std::string(e.what()).find("row"), std::string::npos) << e.what();
  }
  EXPECT_EQ(kind_of([&] { apply_patch(img, random_patch(2, 2, {0, -1}, 9)); }), ErrorKind::kBounds);
}

TEST(Region, Intersect) {
  EXPECT_EQ(intersect({0, 0, 4, 4}, {2, 3, 5, 5}), (Region{2, 3, 2, 1}));
  EXPECT_TRUE(intersect({0, 0, 2, 2}, {5, 5, 1, 1}).empty());
}

TEST(Mask, CountAndFraction) {
  BinaryMask m(4, 5);
  m.set(0, 0, true);
  m.set(3, 4, true);
  EXPECT_EQ(m.count(), 2u);
  EXPECT_DOUBLE_EQ(m.area_fraction(), 0.1);
}

TEST(Rng, SameKeySameDraws) {
  RngStream a = derive_stream(42, {3, 1});
  RngStream b = derive_stream(42, {3, 1});
  for (int i = 0; i < 64; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, NeighbouringIdsDiffer) {
  RngStream a = derive_stream(7, {0});
  RngStream b = derive_stream(7, {1});
  int equal = 0;
  for (int i = 0; i < 64; ++i) equal += a.next_u64() == b.next_u64();
  EXPECT_EQ(equal, 0);
}

TEST(Rng, ThousandDistinctPrefixes) {
  std::set<std::string> prefixes;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    // Mix id lengths and values, including paths that share prefixes.
    std::vector<std::uint64_t> id;
    if (i % 3 == 0) id = {i};
    else if (i % 3 == 1) id = {i / 3, 0};
    else id = {i / 3, 1, i};
    RngStream s = derive_stream(11, id);
    std::string bytes(128, '\0');
    for (int k = 0; k < 16; ++k) {
      const std::uint64_t v = s.next_u64();
      std::memcpy(bytes.data() + 8 * k, &v, 8);
    }
    prefixes.insert(bytes);
  }
  EXPECT_EQ(prefixes.size(), 1000u);
}

TEST(Rng, ChildExtendsPath) {
  RngStream s = derive_stream(1, {2, 3});
  const std::uint64_t first = s.next_u64();
  RngStream again = derive_stream(1, {2, 3});
  EXPECT_EQ(first, again.next_u64());
  RngStream c1 = derive_stream(1, {2}).child(3);
  EXPECT_EQ(c1.stream_id(), (std::vector<std::uint64_t>{2, 3}));
  EXPECT_EQ(c1.next_u64(), first);
}

TEST(Rng, DistributionRanges) {
  RngStream s = derive_stream(5, {});
  double sum = 0, sq = 0;
  for (int i = 0; i < 20000; ++i) {
    const double u = s.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const int k = s.uniform_int(-2, 3);
    ASSERT_GE(k, -2);
    ASSERT_LE(k, 3);
    const double z = s.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / 20000, 0.0, 0.05);
  EXPECT_NEAR(sq / 20000, 1.0, 0.05);
}

}  // namespace
}  // namespace patchbench
