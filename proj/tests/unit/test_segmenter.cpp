// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <queue>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "patchbench/attack.hpp"
#include "patchbench/defense.hpp"
#include "patchbench/error.hpp"
#include "patchbench/synthetic.hpp"
#include "test_models.hpp"

namespace patchbench {
namespace {

using testing::random_image;

ProbabilityMap prob_from(const std::vector<double>& v, int h, int w) { return {h, w, v}; }

TEST(Segment, RangeAndShape) {
  const SegmenterParams p = init_segmenter(1);
  for (std::uint64_t i = 0; i < 50; ++i) {
    const int h = 16 + static_cast<int>(i % 5) * 3, w = 20 + static_cast<int>(i % 3) * 7;
    const ProbabilityMap m = segment(p, random_image(h, w, i));
    ASSERT_EQ(m.height, h);
    ASSERT_EQ(m.width, w);
    ASSERT_EQ(m.values.size(), static_cast<std::size_t>(h * w));
    for (double v : m.values) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(Segment, TrainedIsQuietOnCleanFixtures) {
  const auto& seg = testing::trained_segmenter();
  double total = 0;
  const auto fixtures = fixture_set(0);
  for (const auto& s : fixtures) total += shape_complete(segment(seg, s.image), 0.5).area_fraction();
  EXPECT_LE(total / fixtures.size(), 0.05);
}

TEST(Segment, TrainedFindsPastedPatches) {
  const auto& seg = testing::trained_segmenter();
  const auto fixtures = fixture_set(0);
  double iou = 0;
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    RngStream rng = derive_stream(0, {0x696f75, i});
    AttackConfig cfg;
    Patch patch = init_patch(64, 64, cfg, rng);
    patch.position = {rng.uniform_int(0, 64 - patch.height()), rng.uniform_int(0, 64 - patch.width())};
    const Image x = apply_patch(fixtures[i].image, patch);
    const ProbabilityMap p = segment(seg, x);
    const Region rect = patch.rect();
    int inter = 0, uni = 0;
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        const bool pred = p.at(r, c) >= 0.5;
        const bool truth = r >= rect.top && r < rect.bottom() && c >= rect.left && c < rect.right();
        inter += pred && truth;
        uni += pred || truth;
      }
    iou += static_cast<double>(inter) / uni;
  }
  EXPECT_GE(iou / fixtures.size(), 0.7);
}

TEST(Bce, AnalyticValues) {
  EXPECT_LE(bce_loss(std::vector<double>{1.0}, std::vector<std::uint8_t>{1}), 1e-6);
  EXPECT_LE(bce_loss(std::vector<double>{0.0}, std::vector<std::uint8_t>{0}), 1e-6);
  EXPECT_NEAR(bce_loss(std::vector<double>{0.5}, std::vector<std::uint8_t>{1}), 0.693147, 1e-6);
  EXPECT_NEAR(bce_loss(std::vector<double>{0.5}, std::vector<std::uint8_t>{1}), std::log(2.0), 1e-12);
}

TEST(Bce, MatchesSummation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rng = derive_stream(seed, {1});
    std::vector<double> p(64);
    std::vector<std::uint8_t> y(64);
    for (int i = 0; i < 64; ++i) {
      p[i] = rng.uniform();
      y[i] = rng.uniform() < 0.5;
    }
    double sum = 0;
    for (int i = 0; i < 64; ++i) {
      const double q = std::min(std::max(p[i], 1e-7), 1 - 1e-7);
      sum += y[i] ? std::log(q) : std::log(1 - q);
    }
    const double got = bce_loss(p, y);
    EXPECT_NEAR(got, -sum / 64, 1e-9);
    EXPECT_GE(got, 0.0);
  }
}

TEST(Bce, ShapeMismatch) {
  try {
    bce_loss(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
  }
}

bool same_params(const SegmenterParams& a, const SegmenterParams& b) {
  const auto x = a.arrays();
  const auto y = b.arrays();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (*x[i] != *y[i]) return false;
  return true;
}

TEST(TrainSegmenter, ZeroEpochsIsInitialisation) {
  const auto data = make_segmenter_corpus(4, 16, 1, 9);
  SegmenterTrainingConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 5;
  EXPECT_TRUE(same_params(train_segmenter(data, cfg), init_segmenter(5)));
}

TEST(TrainSegmenter, DeterministicForSeed) {
  const auto data = make_segmenter_corpus(8, 16, 1, 9);
  SegmenterTrainingConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 5;
  EXPECT_TRUE(same_params(train_segmenter(data, cfg), train_segmenter(data, cfg)));
}

TEST(TrainSegmenter, EmptyDatasetIsDataError) {
  try {
    train_segmenter({}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(TrainSegmenter, HeldOutLossHalves) {
  const auto& trained = testing::trained_segmenter();
  const SegmenterParams init = init_segmenter(trained.seed);
  const auto held = make_segmenter_corpus(100, 64, 12345, 0x68656c64);
  double before = 0, after = 0;
  for (const auto& s : held) {
    before += bce_loss(segment(init, s.image), s.truth);
    after += bce_loss(segment(trained, s.image), s.truth);
  }
  EXPECT_LE(after, 0.5 * before);
}

TEST(SegmenterFile, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "pb_seg_test.bin";
  const SegmenterParams p = init_segmenter(31);
  save_segmenter(p, path);
  const SegmenterParams q = load_segmenter(path);
  std::filesystem::remove(path);
  EXPECT_TRUE(same_params(p, q));
  EXPECT_EQ(p.seed, q.seed);
}

TEST(ShapeComplete, EmptyStaysEmpty) {
  const auto m = shape_complete(prob_from(std::vector<double>(100, 0.1), 10, 10), 0.5);
  EXPECT_FALSE(m.any());
}

TEST(ShapeComplete, FillsInteriorHole) {
  std::vector<double> v(20 * 20, 0.0);
  for (int r = 4; r < 14; ++r)
    for (int c = 5; c < 15; ++c) v[r * 20 + c] = 0.9;
  for (int r = 8; r < 10; ++r)
    for (int c = 9; c < 11; ++c) v[r * 20 + c] = 0.0;
  ShapeCompletionConfig cfg;
  cfg.dilation_iterations = 0;
  const auto m = shape_complete(prob_from(v, 20, 20), 0.5, cfg);
  for (int r = 4; r < 14; ++r)
    for (int c = 5; c < 15; ++c) EXPECT_TRUE(m.at(r, c)) << r << "," << c;
  const auto dilated = shape_complete(prob_from(v, 20, 20), 0.5);
  for (int r = 4; r < 14; ++r)
    for (int c = 5; c < 15; ++c) EXPECT_TRUE(dilated.at(r, c));
}

TEST(ShapeComplete, RejectsBadThreshold) {
  const auto p = prob_from(std::vector<double>(4, 0.5), 2, 2);
  EXPECT_THROW(shape_complete(p, 0.0), Error);
  EXPECT_THROW(shape_complete(p, 1.0), Error);
}

// Straightforward morphology: threshold, label with BFS, drop small
// components, dilate with a 3x3 square, then flood the background from the
// border and fill whatever it cannot reach.
BinaryMask morphology_oracle(const ProbabilityMap& p, double thr, int min_comp, int iters) {
  const int h = p.height, w = p.width;
  std::vector<int> bin(h * w), keep(h * w, 0), seen(h * w, 0);
  for (int i = 0; i < h * w; ++i) bin[i] = p.values[i] >= thr;
  for (int s = 0; s < h * w; ++s) {
    if (!bin[s] || seen[s]) continue;
    std::vector<int> comp;
    std::queue<int> q;
    q.push(s);
    seen[s] = 1;
    while (!q.empty()) {
      const int k = q.front();
      q.pop();
      comp.push_back(k);
      const int r = k / w, c = k % w;
      const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (auto& n : nb) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= h || n[1] >= w) continue;
        const int j = n[0] * w + n[1];
        if (bin[j] && !seen[j]) {
          seen[j] = 1;
          q.push(j);
        }
      }
    }
    if (static_cast<int>(comp.size()) >= min_comp)
      for (int k : comp) keep[k] = 1;
  }
  for (int it = 0; it < iters; ++it) {
    std::vector<int> next(h * w, 0);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr >= 0 && cc >= 0 && rr < h && cc < w && keep[rr * w + cc]) next[r * w + c] = 1;
          }
    keep = next;
  }
  std::vector<int> outside(h * w, 0);
  std::queue<int> q;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if ((r == 0 || c == 0 || r == h - 1 || c == w - 1) && !keep[r * w + c]) {
        outside[r * w + c] = 1;
        q.push(r * w + c);
      }
  while (!q.empty()) {
    const int k = q.front();
    q.pop();
    const int r = k / w, c = k % w;
    const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
    for (auto& n : nb) {
      if (n[0] < 0 || n[1] < 0 || n[0] >= h || n[1] >= w) continue;
      const int j = n[0] * w + n[1];
      if (!keep[j] && !outside[j]) {
        outside[j] = 1;
        q.push(j);
      }
    }
  }
  BinaryMask out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out.set(r, c, !outside[r * w + c]);
  return out;
}

TEST(ShapeComplete, MatchesMorphologyOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng = derive_stream(seed, {0x626c6f62});
    const int h = 24 + rng.uniform_int(0, 8), w = 24 + rng.uniform_int(0, 8);
    std::vector<double> v(h * w, 0.0);
    const int blobs = rng.uniform_int(1, 5);
    for (int b = 0; b < blobs; ++b) {
      const double cy = rng.uniform(0, h), cx = rng.uniform(0, w), rad = rng.uniform(1, 6);
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
          const double d = std::hypot(r - cy, c - cx) / rad;
          if (d < 1) v[r * w + c] = std::max(v[r * w + c], 1 - d * d * rng.uniform(0.5, 1.0));
        }
    }
    for (double& x : v)
      if (rng.uniform() < 0.03) x = 0.95;  // speckle
    const ProbabilityMap p = prob_from(v, h, w);
    for (int iters : {0, 1, 2}) {
      ShapeCompletionConfig cfg;
      cfg.dilation_iterations = iters;
      const BinaryMask got = shape_complete(p, 0.5, cfg);
      EXPECT_EQ(got, morphology_oracle(p, 0.5, 10, iters)) << "seed " << seed << " iters " << iters;
      // Superset of the size-filtered binarised input.
      const BinaryMask base = morphology_oracle(p, 0.5, 10, 0);
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          ASSERT_TRUE(!base.at(r, c) || got.at(r, c)) << r << "," << c;
    }
  }
}

}  // namespace
}  // namespace patchbench
