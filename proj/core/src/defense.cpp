// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/defense.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "patchbench/error.hpp"

namespace patchbench {

using ordered_json = nlohmann::ordered_json;

namespace {

void summarize_branch(BranchResult& branch, const Detector& detector) {
  branch.detections = detector.detect(*branch.output);
  const Detection* top = nullptr;
  for (const auto& d : branch.detections) {
    if (!top || d.confidence > top->confidence) top = &d;
  }
  if (top) {
    branch.class_id = top->class_id;
    branch.confidence = top->confidence;
  }
}

}  // namespace

DefenseReport run_defenses(const Image& adv_image, const Detector& detector,
                           const SegmenterParams& segmenter, const Denoiser& denoiser,
                           const NoiseSchedule& schedule, const DefenseConfig& config,
                           RngStream& rng) {
  DefenseReport report;
  report.mask = shape_complete(segment(segmenter, adv_image), config.binarize_threshold,
                               config.completion);
  report.mask_area_fraction = report.mask.area_fraction();

  for (int b = 0; b < 3; ++b) {
    BranchResult branch;
    branch.name = kDefenseBranches[b];
    try {
      switch (b) {
        case 0: branch.output = remove_patch(adv_image, report.mask); break;
        case 1: branch.output = inpaint(adv_image, report.mask, config.inpaint_radius); break;
        default: {
          RngStream branch_rng = rng.child(2);
          branch.output = diffusion_restore(adv_image, report.mask, denoiser, schedule, branch_rng);
        }
      }
      summarize_branch(branch, detector);
    } catch (const Error& e) {
      branch.error = e.what();
    }
    report.branches.push_back(std::move(branch));
  }
  return report;
}

std::string defense_report_to_json(const DefenseReport& report) {
  ordered_json j;
  j["branches"] = ordered_json::array();
  for (const auto& b : report.branches) {
    ordered_json entry{{"name", b.name}, {"class_id", b.class_id}, {"confidence", b.confidence}};
    if (b.error) entry["error"] = *b.error;
    j["branches"].push_back(std::move(entry));
  }
  j["mask_area_fraction"] = report.mask_area_fraction;
  return j.dump(2) + "\n";
}

DefenseReport defense_report_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kFormat, fmt::format("defense report: byte {}: {}", e.byte, e.what()));
  }
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kFormat, "defense report: " + what); };
  if (!j.is_object() || !j.contains("branches") || !j["branches"].is_array()) fail("missing 'branches'");
  if (!j.contains("mask_area_fraction") || !j["mask_area_fraction"].is_number()) {
    fail("missing 'mask_area_fraction'");
  }
  DefenseReport report;
  report.mask_area_fraction = j["mask_area_fraction"].get<double>();
  for (std::size_t i = 0; i < j["branches"].size(); ++i) {
    const auto& b = j["branches"][i];
    const std::string where = fmt::format("branches[{}]", i);
    if (!b.contains("name") || !b["name"].is_string()) fail(where + ".name");
    if (!b.contains("class_id") || !b["class_id"].is_number_integer()) fail(where + ".class_id");
    if (!b.contains("confidence") || !b["confidence"].is_number()) fail(where + ".confidence");
    BranchResult branch;
    branch.name = b["name"].get<std::string>();
    branch.class_id = b["class_id"].get<int>();
    branch.confidence = b["confidence"].get<double>();
    if (b.contains("error")) branch.error = b["error"].get<std::string>();
    report.branches.push_back(std::move(branch));
  }
  return report;
}

}  // namespace patchbench
