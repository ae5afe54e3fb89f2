// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// Pipeline configuration and the stages behind each CLI subcommand.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "patchbench/attack.hpp"
#include "patchbench/data.hpp"
#include "patchbench/defense.hpp"
#include "patchbench/detector.hpp"

namespace patchbench::cli {

struct PipelineConfig {
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string run_id = "main";

  std::string manifest;  // empty: <out>/manifest.jsonl
  double min_area_fraction = 0.01;
  int synthetic_count = 20;

  std::string detector_endpoint = "toy";  // "toy" or http://host:port
  std::string detector_params;            // trained toy weights; empty: train and cache
  std::string feature_layer;              // empty: detector default
  int detector_epochs = 15;
  int detector_per_class = 500;
  std::uint64_t detector_seed = 0;

  AttackConfig attack;

  std::string segmenter_path;
  int segmenter_train_count = 800;
  int segmenter_epochs = 8;
  std::uint64_t segmenter_seed = 0;
  std::string denoiser_path;
  int denoiser_per_class = 50;
  std::uint64_t denoiser_seed = 0;
  int schedule_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  DefenseConfig defense;

  std::vector<double> ablation_sizes_pct{1, 5, 10, 20, 50};
};

// Every accepted key with its current value, sorted by key.
std::map<std::string, std::string> config_entries(const PipelineConfig& config);

// Applies a flat JSON object of dotted keys. Unknown keys and ill-typed
// values throw kConfig naming the key.
void apply_config_json(PipelineConfig& config, const std::string& json_text);
// Applies one key=value override; the value is parsed as JSON, falling back
// to a plain string.
void apply_override(PipelineConfig& config, const std::string& assignment);
// Range checks across all fields; throws kConfig.
void validate(const PipelineConfig& config);
std::string config_to_json(const PipelineConfig& config);

struct Context {
  PipelineConfig config;
  std::filesystem::path out;
  std::ostream* log = nullptr;  // progress lines; may be null
};

std::filesystem::path manifest_path(const Context& ctx);
std::filesystem::path run_path(const Context& ctx);

// Cache locations of trained models under <out>/models/.
std::filesystem::path detector_cache_path(const Context& ctx);
std::filesystem::path segmenter_cache_path(const Context& ctx);
std::filesystem::path denoiser_cache_path(const Context& ctx);

// Model access. Trained artifacts are cached in <out>/models/ keyed by a
// hash of their training settings.
DetectorHandle load_detector(const Context& ctx);
std::shared_ptr<const ToyDetector> load_toy_detector(const Context& ctx);
SegmenterParams load_segmenter_model(const Context& ctx);
ToyDenoiser load_denoiser_model(const Context& ctx);
NoiseSchedule make_schedule(const PipelineConfig& config);

// Subcommand bodies. Each returns the file it produced.
std::filesystem::path run_dataset_synthetic(const Context& ctx, int count);
std::filesystem::path run_dataset_coco(const Context& ctx, const std::filesystem::path& annotations,
                                       const std::filesystem::path& image_root);
std::filesystem::path run_attack_stage(const Context& ctx);
std::filesystem::path run_defend_stage(const Context& ctx);
std::filesystem::path run_eval_stage(const Context& ctx);
std::filesystem::path run_ablate_stage(const Context& ctx);
void print_report(const Context& ctx, std::ostream& out);

}  // namespace patchbench::cli
