// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "patchbench/data.hpp"
#include "patchbench/error.hpp"

namespace patchbench {
namespace {

namespace fs = std::filesystem;
using testing::random_image;

const fs::path kFixtures = PATCHBENCH_FIXTURE_DIR;

Error catch_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "expected an Error";
  return Error(ErrorKind::kValue, "none");
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void touch(const fs::path& p) { std::ofstream(p) << "x"; }

TEST(CocoFilter, HandCountedFixture) {
  const auto entries = filter_single_object_file(kFixtures / "coco_small.json", "/data/coco");
  ASSERT_EQ(entries.size(), 4u);
  const char* ids[] = {"1", "5", "7", "9"};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(entries[i].image_id, ids[i]);
  EXPECT_EQ(entries[0].path, fs::path("/data/coco/000001.png"));
  EXPECT_EQ(entries[0].class_id, 3);
  EXPECT_EQ(entries[0].bbox, (BoundingBox{10, 12, 20, 18}));
  EXPECT_EQ(entries[2].class_id, 2);
  EXPECT_EQ(entries[3].class_id, 4);
}

TEST(CocoFilter, MinAreaIsConfigurable) {
  // Raising the floor to 10% drops the images at 8.8% and 1%.
  const auto entries =
      filter_single_object_file(kFixtures / "coco_small.json", "root", {0.10});
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].image_id, "5");
  EXPECT_EQ(entries[1].image_id, "7");
}

TEST(CocoFilter, NoAnnotations) {
  const std::string doc =
      R"({"images":[{"id":1,"file_name":"a.png","width":10,"height":10}],"annotations":[]})";
  EXPECT_TRUE(filter_single_object(doc, "r").empty());
}

TEST(CocoFilter, TwoAnnotationsExcluded) {
  const std::string doc = R"({"images":[{"id":1,"file_name":"a.png","width":10,"height":10}],
    "annotations":[{"image_id":1,"category_id":0,"bbox":[0,0,5,5]},
                   {"image_id":1,"category_id":0,"bbox":[5,5,5,5]}]})";
  EXPECT_TRUE(filter_single_object(doc, "r").empty());
}

TEST(CocoFilter, ParseErrorReportsLineAndColumn) {
  const Error e = catch_error([] { filter_single_object("{\n  \"images\": [,]\n}", "r"); });
  EXPECT_EQ(e.kind(), ErrorKind::kFormat);
  EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  EXPECT_NE(std::string(e.what()).find("column 14"), std::string::npos) << e.what();
}

TEST(CocoFilter, MissingFieldIsFormatError) {
  const Error e = catch_error([] {
    filter_single_object(R"({"images":[{"id":1,"width":10,"height":10}]})", "r");
  });
  EXPECT_EQ(e.kind(), ErrorKind::kFormat);
  EXPECT_NE(std::string(e.what()).find("file_name"), std::string::npos);
}

TEST(Manifest, RoundTripWithRelativePaths) {
  TempDir dir("pb_manifest_rt");
  fs::create_directories(dir.path() / "img");
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 3; ++i) {
    const fs::path p = dir.path() / "img" / ("im" + std::to_string(i) + ".png");
    touch(p);
    entries.push_back({"id" + std::to_string(i), p, i * 7, {1.0 * i, 2, 3.5, 4}});
  }
  write_manifest(entries, dir.path() / "manifest.jsonl");
  std::ifstream in(dir.path() / "manifest.jsonl");
  std::string first;
  std::getline(in, first);
  EXPECT_NE(first.find("\"img/im0.png\""), std::string::npos) << first;
  const auto back = read_manifest(dir.path() / "manifest.jsonl");
  ASSERT_EQ(back.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].image_id, entries[i].image_id);
    EXPECT_EQ(back[i].class_id, entries[i].class_id);
    EXPECT_EQ(back[i].bbox, entries[i].bbox);
    EXPECT_TRUE(fs::equivalent(back[i].path, entries[i].path));
  }
}

TEST(Manifest, MissingImageIsIntegrityError) {
  TempDir dir("pb_manifest_missing");
  touch(dir.path() / "present.png");
  write_manifest({{"a", dir.path() / "present.png", 0, {}}, {"b", dir.path() / "gone.png", 1, {}}},
                 dir.path() / "m.jsonl");
  const Error e = catch_error([&] { read_manifest(dir.path() / "m.jsonl"); });
  EXPECT_EQ(e.kind(), ErrorKind::kIntegrity);
  EXPECT_NE(std::string(e.what()).find("gone.png"), std::string::npos);
}

TEST(Manifest, MalformedLineNamesLine) {
  TempDir dir("pb_manifest_bad");
  std::ofstream(dir.path() / "m.jsonl") << "{\"image_id\":\"a\"}\n{oops\n";
  const Error e = catch_error([&] { read_manifest(dir.path() / "m.jsonl"); });
  EXPECT_EQ(e.kind(), ErrorKind::kFormat);
  EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos) << e.what();
}

TEST(ImageFiles, PngRoundTripWithinQuantisation) {
  TempDir dir("pb_png");
  const Image img = random_image(17, 23, 1);
  write_png(img, dir.path() / "a.png");
  const Image back = read_png(dir.path() / "a.png");
  ASSERT_EQ(back.height(), 17);
  ASSERT_EQ(back.width(), 23);
  for (std::size_t i = 0; i < img.values().size(); ++i)
    ASSERT_NEAR(back.values()[i], img.values()[i], 0.5 / 255 + 1e-6);
  // Already-quantised images survive exactly.
  write_png(back, dir.path() / "b.png");
  EXPECT_EQ(read_png(dir.path() / "b.png"), back);
}

TEST(ImageFiles, F32RoundTripIsBitExact) {
  TempDir dir("pb_f32");
  const Image img = random_image(31, 9, 2);
  write_f32(img, dir.path() / "a.f32");
  EXPECT_EQ(read_f32(dir.path() / "a.f32"), img);
  std::ofstream(dir.path() / "bad.f32") << "not an image";
  EXPECT_EQ(catch_error([&] { read_f32(dir.path() / "bad.f32"); }).kind(), ErrorKind::kFormat);
  EXPECT_EQ(catch_error([&] { read_png(dir.path() / "missing.png"); }).kind(), ErrorKind::kIo);
}

RunRecord sample_run() {
  RunRecord rec;
  rec.run_id = "golden";
  rec.config_json = "{\"seed\": 7}\n";
  ImageRecord a;
  a.image_id = "a";
  a.true_class = 3;
  a.stages.emplace("original", random_image(16, 16, 3));
  a.stages.emplace("patched", random_image(16, 16, 4));
  a.detections["original"] = {{3, 0.9, {1, 2, 10, 11}}};
  a.detections["patched"] = {{5, 0.6, {0, 0, 16, 16}}};
  a.patch_position = Position{4, 5};
  a.patch_side = 3;
  a.loss_trace = {2.5, 1.25, 0.1};
  BinaryMask m(16, 16);
  m.set(4, 5, true);
  m.set(6, 7, true);
  a.mask = m;
  ImageRecord b;
  b.image_id = "b";
  b.true_class = 1;
  b.stages.emplace("original", random_image(16, 16, 5));
  b.detections["original"] = {};
  rec.images = {a, b};
  rec.report = build_report({{"original", 80, 1, 2}, {"patched", 60, 1, 2}});
  rec.ablation = {{1, 5, {}}, {10, 20, {}}};
  return rec;
}

std::vector<std::string> listed_files(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).generic_string());
  std::sort(out.begin(), out.end());
  return out;
}

TEST(RunRecord, LayoutMatchesGolden) {
  std::ifstream in(kFixtures / "run_layout_golden.txt");
  std::vector<std::string> golden;
  for (std::string line; std::getline(in, line);) golden.push_back(line);
  const RunRecord rec = sample_run();
  EXPECT_EQ(run_layout(rec), golden);
  TempDir dir("pb_layout");
  const fs::path run = save_run(rec, dir.path());
  EXPECT_EQ(run, dir.path() / "run_golden");
  EXPECT_EQ(listed_files(run), golden);
}

TEST(RunRecord, SaveLoadRoundTrip) {
  TempDir dir("pb_run_rt");
  const RunRecord rec = sample_run();
  const RunRecord back = load_run(save_run(rec, dir.path()));
  EXPECT_EQ(back.run_id, rec.run_id);
  EXPECT_EQ(back.config_json, rec.config_json);
  ASSERT_EQ(back.images.size(), 2u);
  const ImageRecord& a = back.images[0];
  EXPECT_EQ(a.image_id, "a");
  EXPECT_EQ(a.true_class, 3);
  EXPECT_EQ(a.stages.at("original"), rec.images[0].stages.at("original"));
  EXPECT_EQ(a.stages.at("patched"), rec.images[0].stages.at("patched"));
  EXPECT_EQ(a.detections, rec.images[0].detections);
  EXPECT_EQ(a.patch_position, rec.images[0].patch_position);
  EXPECT_EQ(a.patch_side, 3);
  EXPECT_EQ(a.loss_trace, rec.images[0].loss_trace);
  ASSERT_TRUE(a.mask.has_value());
  EXPECT_EQ(a.mask->bits(), rec.images[0].mask->bits());
  EXPECT_DOUBLE_EQ(a.stage_score("original"), 0.9);
  EXPECT_EQ(a.stage_score("patched"), 0.0);
  EXPECT_EQ(back.images[1].stages.size(), 1u);
  ASSERT_TRUE(back.report.has_value());
  EXPECT_DOUBLE_EQ(back.report->attack_points, 20.0);
  ASSERT_EQ(back.ablation.size(), 2u);
  EXPECT_EQ(back.ablation[1].mean_conf_drop_pct, 20.0);
}

TEST(RunRecord, DeletedFileIsNamed) {
  TempDir dir("pb_run_missing");
  const fs::path run = save_run(sample_run(), dir.path());
  fs::remove(run / "images" / "a" / "patched.f32");
  fs::remove(run / "config.json");
  const Error e = catch_error([&] { load_run(run); });
  EXPECT_EQ(e.kind(), ErrorKind::kIntegrity);
  const std::string msg = e.what();
  EXPECT_NE(msg.find("images/a/patched.f32"), std::string::npos) << msg;
  EXPECT_NE(msg.find("config.json"), std::string::npos) << msg;
}

TEST(RunRecord, RejectsPathLikeIds) {
  RunRecord rec = sample_run();
  rec.run_id = "../escape";
  EXPECT_EQ(catch_error([&] { save_run(rec, fs::temp_directory_path()); }).kind(), ErrorKind::kValue);
}

}  // namespace
}  // namespace patchbench
