// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// Dataset ingestion, manifests, image files and run-record persistence.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "patchbench/defense.hpp"
#include "patchbench/eval.hpp"
#include "patchbench/image.hpp"

namespace patchbench {

struct ManifestEntry {
  std::string image_id;
  std::filesystem::path path;
  int class_id = 0;
  BoundingBox bbox;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct CocoFilterConfig {
  double min_area_fraction = 0.01;  // of the image area
};

// Keeps images (in file order) with exactly one annotation whose area is at
// least min_area_fraction of the image. Paths are image_root / file_name.
// Parse failures throw kFormat with line and column.
std::vector<ManifestEntry> filter_single_object(const std::string& annotation_json,
                                                const std::filesystem::path& image_root,
                                                const CocoFilterConfig& config = {});
std::vector<ManifestEntry> filter_single_object_file(const std::filesystem::path& annotation_file,
                                                     const std::filesystem::path& image_root,
                                                     const CocoFilterConfig& config = {});

// JSON lines, one entry per line. Relative paths are written relative to
// the manifest's directory and resolved against it on read.
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);
// Throws kFormat (with line number) on malformed lines and kIntegrity when a
// referenced image is missing.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// 8-bit RGB PNG (samples rounded from [0, 1]).
void write_png(const Image& image, const std::filesystem::path& path);
// Any PNG, converted to 8-bit RGB.
Image read_png(const std::filesystem::path& path);
void write_heatmap_png(const Heatmap& heatmap, const std::filesystem::path& path);
void write_mask_png(const BinaryMask& mask, const std::filesystem::path& path);

// Bit-exact float32 sidecar: 8-byte magic, u32 height, u32 width, then
// row-major little-endian samples.
void write_f32(const Image& image, const std::filesystem::path& path);
Image read_f32(const std::filesystem::path& path);

struct ImageRecord {
  std::string image_id;
  int true_class = 0;
  std::map<std::string, Image> stages;  // keys from kStageNames
  std::map<std::string, std::vector<Detection>> detections;
  std::optional<Position> patch_position;
  int patch_side = 0;
  std::vector<double> loss_trace;
  std::optional<DefenseReport> defense;  // branch summaries and mask fraction
  std::optional<BinaryMask> mask;

  // Detection score of a stage (0 when the stage has no detections).
  double stage_score(const std::string& stage) const;
};

struct RunRecord {
  std::string run_id;
  std::string config_json;  // snapshot, stored verbatim
  std::vector<ImageRecord> images;
  std::optional<StageReport> report;
  std::vector<AblationRow> ablation;
};

// Directory of a run below `root`: root / ("run_" + run_id).
std::filesystem::path run_directory(const std::filesystem::path& root, const std::string& run_id);

// Writes run_<id>/config.json, images/<id>/{stage}.png + .f32, record.json,
// loss.csv, mask.png, report.json and ablation.csv (when present). Returns
// the run directory.
std::filesystem::path save_run(const RunRecord& record, const std::filesystem::path& root);
// Throws kIntegrity listing every missing file.
RunRecord load_run(const std::filesystem::path& run_dir);

// Relative paths of every file save_run would write, sorted.
std::vector<std::string> run_layout(const RunRecord& record);

std::string detections_to_json(const std::vector<Detection>& detections);

}  // namespace patchbench
