// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "patchbench/attack.hpp"
#include "patchbench/defense.hpp"
#include "patchbench/error.hpp"
#include "patchbench/eval.hpp"
#include "patchbench/synthetic.hpp"
#include "test_models.hpp"

namespace patchbench {
namespace {

using testing::random_image;

BinaryMask random_mask(int h, int w, double p, std::uint64_t seed) {
  RngStream rng = derive_stream(seed, {0x6d});
  BinaryMask m(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) m.set(r, c, rng.uniform() < p);
  return m;
}

// Segmenter whose head is a constant: every pixel gets sigmoid(bias).
SegmenterParams constant_segmenter(double bias) {
  SegmenterParams p = init_segmenter(1);
  std::fill(p.head.weight.begin(), p.head.weight.end(), 0.0);
  std::fill(p.head.bias.begin(), p.head.bias.end(), bias);
  return p;
}

TEST(RemovePatch, EmptyMaskIsIdentity) {
  const Image img = random_image(12, 10, 1);
  EXPECT_EQ(remove_patch(img, BinaryMask(12, 10)), img);
}

TEST(RemovePatch, FullMaskZeroesEverything) {
  const Image out = remove_patch(random_image(12, 10, 2), BinaryMask(12, 10, true));
  for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(RemovePatch, MatchesElementwiseOracle) {
  const Image img = random_image(20, 20, 3);
  const BinaryMask m = random_mask(20, 20, 0.4, 4);
  const Image out = remove_patch(img, m);
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 20; ++c)
      for (int ch = 0; ch < 3; ++ch) ASSERT_EQ(out.at(r, c, ch), m.at(r, c) ? 0.0f : img.at(r, c, ch));
}

TEST(RemovePatch, ShapeMismatch) {
  try {
    remove_patch(Image(4, 4), BinaryMask(4, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
  }
}

TEST(Masking, AllBranchesKeepUnmaskedPixels) {
  const Image img = random_image(64, 64, 5);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    BinaryMask m = random_mask(64, 64, 0.15, 10 + seed);
    const Image removed = remove_patch(img, m);
    const Image filled = inpaint(img, m, 3);
    RngStream rng = derive_stream(seed, {2});
    const Image diffused =
        diffusion_restore(img, m, testing::trained_denoiser(), testing::toy_schedule(), rng);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        if (m.at(r, c)) continue;
        for (int ch = 0; ch < 3; ++ch) {
          ASSERT_EQ(removed.at(r, c, ch), img.at(r, c, ch));
          ASSERT_EQ(filled.at(r, c, ch), img.at(r, c, ch));
          ASSERT_EQ(diffused.at(r, c, ch), img.at(r, c, ch));
        }
      }
  }
}

TEST(RunDefenses, EmptyMaskLeavesDetectionsUnchanged) {
  const auto det = testing::trained_detector();
  const Image adv = fixture_set(0, 1)[0].image;
  RngStream rng = derive_stream(0, {});
  const DefenseReport rep = run_defenses(adv, *det, constant_segmenter(-40), testing::trained_denoiser(),
                                         testing::toy_schedule(), {}, rng);
  EXPECT_FALSE(rep.mask.any());
  EXPECT_EQ(rep.mask_area_fraction, 0.0);
  ASSERT_EQ(rep.branches.size(), 3u);
  const auto base = det->detect(adv);
  for (const auto& b : rep.branches) {
    EXPECT_FALSE(b.error.has_value()) << b.name;
    ASSERT_TRUE(b.output.has_value());
    EXPECT_EQ(*b.output, adv);
    EXPECT_EQ(b.detections, base);
  }
}

TEST(RunDefenses, BranchFailureIsRecordedNotThrown) {
  const auto det = testing::trained_detector();
  const Image adv = fixture_set(0, 1)[0].image;
  RngStream rng = derive_stream(0, {});
  const DefenseReport rep = run_defenses(adv, *det, constant_segmenter(40), testing::trained_denoiser(),
                                         testing::toy_schedule(), {}, rng);
  EXPECT_EQ(rep.mask_area_fraction, 1.0);
  ASSERT_EQ(rep.branches.size(), 3u);
  EXPECT_EQ(rep.branches[0].name, "removal");
  EXPECT_FALSE(rep.branches[0].error.has_value());
  EXPECT_EQ(rep.branches[1].name, "inpaint");
  ASSERT_TRUE(rep.branches[1].error.has_value());
  EXPECT_TRUE(rep.branches[1].detections.empty());
  EXPECT_EQ(rep.branches[1].class_id, -1);
  EXPECT_EQ(rep.branches[2].name, "diffusion");
  EXPECT_FALSE(rep.branches[2].error.has_value());
}

TEST(RunDefenses, ReportSchema) {
  const auto det = testing::trained_detector();
  const Image adv = fixture_set(0, 1)[0].image;
  RngStream rng = derive_stream(0, {});
  const DefenseReport rep = run_defenses(adv, *det, testing::trained_segmenter(),
                                         testing::trained_denoiser(), testing::toy_schedule(), {}, rng);
  const auto j = nlohmann::json::parse(defense_report_to_json(rep));
  ASSERT_TRUE(j.contains("branches"));
  ASSERT_TRUE(j.contains("mask_area_fraction"));
  EXPECT_TRUE(j["mask_area_fraction"].is_number());
  ASSERT_EQ(j["branches"].size(), 3u);
  const char* names[] = {"removal", "inpaint", "diffusion"};
  for (int k = 0; k < 3; ++k) {
    const auto& b = j["branches"][k];
    EXPECT_EQ(b["name"], names[k]);
    EXPECT_TRUE(b["class_id"].is_number_integer());
    EXPECT_TRUE(b["confidence"].is_number());
  }
  const DefenseReport back = defense_report_from_json(defense_report_to_json(rep));
  ASSERT_EQ(back.branches.size(), 3u);
  EXPECT_EQ(back.mask_area_fraction, rep.mask_area_fraction);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(back.branches[k].name, rep.branches[k].name);
    EXPECT_EQ(back.branches[k].class_id, rep.branches[k].class_id);
    EXPECT_EQ(back.branches[k].confidence, rep.branches[k].confidence);
  }
}

TEST(RunDefenses, BranchesRecoverPatchedFixtures) {
  const auto det = testing::trained_detector();
  const auto fixtures = fixture_set(1);
  int recovered[3] = {0, 0, 0};
  std::vector<double> patched, diffused;
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    const auto& s = fixtures[i];
    RngStream arng = derive_stream(1, {0x61746b, i});
    const AttackResult atk = run_attack(*det, s.image, s.class_id, {}, arng);
    const double p = score_detection(atk.post_detections, s.class_id);
    RngStream drng = derive_stream(1, {0x646566, i});
    const DefenseReport rep = run_defenses(atk.adversarial, *det, testing::trained_segmenter(),
                                           testing::trained_denoiser(), testing::toy_schedule(), {},
                                           drng);
    patched.push_back(p);
    for (int k = 0; k < 3; ++k)
      recovered[k] += score_detection(rep.branches[k].detections, s.class_id) >= p;
    diffused.push_back(score_detection(rep.branches[2].detections, s.class_id));
  }
  for (int k = 0; k < 3; ++k) EXPECT_GE(recovered[k], 16) << kDefenseBranches[k];
  EXPECT_GT(mean_confidence(diffused), mean_confidence(patched));
}

}  // namespace
}  // namespace patchbench
