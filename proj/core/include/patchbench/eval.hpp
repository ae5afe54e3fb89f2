// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// Confidence scoring, aggregation, relative-change arithmetic, stage reports
// and the patch-size ablation sweep.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchbench/attack.hpp"
#include "patchbench/detector.hpp"
#include "patchbench/image.hpp"

namespace patchbench {

// Confidence of the highest-confidence detection if its class matches,
// otherwise 0 (also 0 for no detections).
double score_detection(const std::vector<Detection>& detections, int true_class);

// Arithmetic mean; throws kAggregation on empty input.
double mean_confidence(const std::vector<double>& scores);

// Sample standard deviation / sqrt(N); 0 for a single score.
double standard_error(const std::vector<double>& scores);

// |orig - method| / orig * 100. Throws kDivision when orig is 0.
double relative_change(double orig_mean, double method_mean);

// (method - patched) / orig * 100, signed. Throws kDivision when orig is 0.
double recovery_vs_patched(double method_mean, double patched_mean, double orig_mean);

inline constexpr const char* kStageNames[] = {"original", "patched", "sac", "inpainted",
                                              "diffused"};

struct StageScores {
  std::string name;
  std::vector<double> scores;  // per image, in [0, 1]
  double mean() const { return mean_confidence(scores); }
};

// Stage mean and standard error in percent.
struct StageSummary {
  std::string name;
  double mean = 0;
  double stderr_ = 0;
  std::size_t count = 0;
};

StageSummary summarize(const StageScores& stage);

struct DefenseSummary {
  std::string name;
  double points = 0;        // method - patched, percentage points
  double recovery_pct = 0;  // points / original * 100
};

struct StageReport {
  std::vector<StageSummary> stages;
  double attack_rel_change_pct = 0;
  double attack_points = 0;  // original - patched, percentage points
  std::vector<DefenseSummary> defenses;
};

// Builds the report from stage summaries whose means are already in percent.
// Requires "original" and "patched"; defences are reported in canonical
// stage order. Throws kReport on a missing, unknown or duplicate stage.
StageReport build_report(const std::vector<StageSummary>& stages);
StageReport stage_report(const std::vector<StageScores>& stages);

std::string report_to_json(const StageReport& report);
// Throws kFormat naming the offending field.
StageReport report_from_json(const std::string& text);

// Spearman rank correlation with average ranks for ties. NaN when either
// input is constant; throws kValue on length mismatch or fewer than 2 points.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct LabeledImage {
  std::string id;
  Image image;
  int class_id = 0;
};

struct AblationRow {
  double patch_size_pct = 0;
  double mean_conf_drop_pct = 0;  // clean mean - patched mean, percentage points
  std::optional<std::string> error;
};

// Runs the attack pipeline at each size over the dataset. Image i at size k
// draws from derive_stream(seed, {kAblationStreamTag, k, i}). Failures are
// recorded on the row rather than thrown.
inline constexpr std::uint64_t kAblationStreamTag = 0x61626c;
std::vector<AblationRow> ablation_sweep(const Detector& detector,
                                        const std::vector<LabeledImage>& dataset,
                                        const std::vector<double>& sizes_pct,
                                        const AttackConfig& config, std::uint64_t seed,
                                        int jobs = 1);

std::string ablation_csv(const std::vector<AblationRow>& rows);

struct PlotFiles {
  std::filesystem::path csv;
  std::filesystem::path svg;
  std::filesystem::path meta;
};

// Writes `csv_path`, plus a chart (.svg) and its metadata (.plot.json)
// next to it. Throws kValue on empty rows and kIo on write failure.
PlotFiles emit_plot(const std::vector<AblationRow>& rows, const std::filesystem::path& csv_path);

}  // namespace patchbench
