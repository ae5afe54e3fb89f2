// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "pipeline.hpp"

#include <functional>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "patchbench/error.hpp"
#include "patchbench/eval.hpp"
#include "patchbench/io.hpp"
#include "patchbench/parallel.hpp"
#include "patchbench/remote.hpp"
#include "patchbench/synthetic.hpp"

namespace patchbench::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& key, const std::string& problem) {
  throw Error(ErrorKind::kConfig, fmt::format("'{}': {}", key, problem));
}

struct Key {
  std::function<void(PipelineConfig&, const json&, const std::string&)> set;
  std::function<json(const PipelineConfig&)> get;
};

double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) config_error(key, "expected a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) config_error(key, "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    config_error(key, "out of range");
  }
  return static_cast<int>(x);
}

std::uint64_t as_u64(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  config_error(key, "expected a non-negative integer");
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) config_error(key, "expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) config_error(key, "expected a string");
  return v.get<std::string>();
}

template <class T>
Key field(T PipelineConfig::*member) {
  return {[member](PipelineConfig& c, const json& v, const std::string& key) {
            if constexpr (std::is_same_v<T, double>) c.*member = as_double(v, key);
            else if constexpr (std::is_same_v<T, int>) c.*member = as_int(v, key);
            else if constexpr (std::is_same_v<T, std::uint64_t>) c.*member = as_u64(v, key);
            else if constexpr (std::is_same_v<T, bool>) c.*member = as_bool(v, key);
            else c.*member = as_string(v, key);
          },
          [member](const PipelineConfig& c) { return json(c.*member); }};
}

template <class T>
Key attack_field(T AttackConfig::*member) {
  return {[member](PipelineConfig& c, const json& v, const std::string& key) {
            if constexpr (std::is_same_v<T, double>) c.attack.*member = as_double(v, key);
            else if constexpr (std::is_same_v<T, int>) c.attack.*member = as_int(v, key);
            else c.attack.*member = as_bool(v, key);
          },
          [member](const PipelineConfig& c) { return json(c.attack.*member); }};
}

constexpr std::pair<const char*, NormOrder> kNorms[] = {
    {"l1", NormOrder::kL1}, {"l2", NormOrder::kL2}, {"linf", NormOrder::kLinf}};
constexpr std::pair<const char*, PlacementObjective> kObjectives[] = {
    {"min_confidence", PlacementObjective::kMinConfidence}, {"max_loss", PlacementObjective::kMaxLoss}};

template <class E, std::size_t N>
Key enum_field(E AttackConfig::*member, const std::pair<const char*, E> (&names)[N]) {
  return {[member, &names](PipelineConfig& c, const json& v, const std::string& key) {
            const std::string s = as_string(v, key);
            for (const auto& [name, value] : names) {
              if (s == name) {
                c.attack.*member = value;
                return;
              }
            }
            config_error(key, fmt::format("unknown value '{}'", s));
          },
          [member, &names](const PipelineConfig& c) {
            for (const auto& [name, value] : names) {
              if (c.attack.*member == value) return json(name);
            }
            return json(nullptr);
          }};
}

const std::map<std::string, Key>& registry() {
  static const std::map<std::string, Key> keys = [] {
    std::map<std::string, Key> k;
    k["seed"] = field(&PipelineConfig::seed);
    k["jobs"] = field(&PipelineConfig::jobs);
    k["run.id"] = field(&PipelineConfig::run_id);
    k["dataset.manifest"] = field(&PipelineConfig::manifest);
    k["dataset.min_area_fraction"] = field(&PipelineConfig::min_area_fraction);
    k["dataset.synthetic_count"] = field(&PipelineConfig::synthetic_count);
    k["detector.endpoint"] = field(&PipelineConfig::detector_endpoint);
    k["detector.params"] = field(&PipelineConfig::detector_params);
    k["detector.feature_layer"] = field(&PipelineConfig::feature_layer);
    k["detector.train.epochs"] = field(&PipelineConfig::detector_epochs);
    k["detector.train.per_class"] = field(&PipelineConfig::detector_per_class);
    k["detector.train.seed"] = field(&PipelineConfig::detector_seed);
    k["attack.lambda"] = attack_field(&AttackConfig::lambda);
    k["attack.eta"] = attack_field(&AttackConfig::eta);
    k["attack.iterations"] = attack_field(&AttackConfig::iterations);
    k["attack.epsilon"] = attack_field(&AttackConfig::epsilon);
    k["attack.patch_size_fraction"] = attack_field(&AttackConfig::patch_size_fraction);
    k["attack.use_saliency"] = attack_field(&AttackConfig::use_saliency);
    k["attack.saliency_threshold"] = attack_field(&AttackConfig::saliency_threshold);
    k["attack.max_regions"] = attack_field(&AttackConfig::max_regions);
    k["attack.norm"] = enum_field(&AttackConfig::norm, kNorms);
    k["attack.objective"] = enum_field(&AttackConfig::objective, kObjectives);
    k["attack.target_class"] = {
        [](PipelineConfig& c, const json& v, const std::string& key) {
          const int t = as_int(v, key);
          c.attack.target_class = t < 0 ? std::nullopt : std::optional<int>(t);
        },
        [](const PipelineConfig& c) { return json(c.attack.target_class.value_or(-1)); }};
    k["attack.stride"] = {
        [](PipelineConfig& c, const json& v, const std::string& key) {
          const int s = as_int(v, key);
          c.attack.stride = s <= 0 ? std::nullopt : std::optional<int>(s);
        },
        [](const PipelineConfig& c) { return json(c.attack.stride.value_or(0)); }};
    k["defense.segmenter_path"] = field(&PipelineConfig::segmenter_path);
    k["defense.segmenter.train_count"] = field(&PipelineConfig::segmenter_train_count);
    k["defense.segmenter.epochs"] = field(&PipelineConfig::segmenter_epochs);
    k["defense.segmenter.seed"] = field(&PipelineConfig::segmenter_seed);
    k["defense.denoiser_path"] = field(&PipelineConfig::denoiser_path);
    k["defense.denoiser.per_class"] = field(&PipelineConfig::denoiser_per_class);
    k["defense.denoiser.seed"] = field(&PipelineConfig::denoiser_seed);
    k["defense.schedule.steps"] = field(&PipelineConfig::schedule_steps);
    k["defense.schedule.beta_start"] = field(&PipelineConfig::beta_start);
    k["defense.schedule.beta_end"] = field(&PipelineConfig::beta_end);
    k["defense.binarize_threshold"] = {
        [](PipelineConfig& c, const json& v, const std::string& key) {
          c.defense.binarize_threshold = as_double(v, key);
        },
        [](const PipelineConfig& c) { return json(c.defense.binarize_threshold); }};
    k["defense.min_component"] = {
        [](PipelineConfig& c, const json& v, const std::string& key) {
          c.defense.completion.min_component = as_int(v, key);
        },
        [](const PipelineConfig& c) { return json(c.defense.completion.min_component); }};
    k["defense.dilation_iterations"] = {
        [](PipelineConfig& c, const json& v, const std::string& key) {
          c.defense.completion.dilation_iterations = as_int(v, key);
        },
        [](const PipelineConfig& c) { return json(c.defense.completion.dilation_iterations); }};
    k["defense.inpaint_radius"] = {
        [](PipelineConfig& c, const json& v, const std::string& key) {
          c.defense.inpaint_radius = as_int(v, key);
        },
        [](const PipelineConfig& c) { return json(c.defense.inpaint_radius); }};
    k["ablation.sizes_pct"] = {
        [](PipelineConfig& c, const json& v, const std::string& key) {
          if (!v.is_array() || v.empty()) config_error(key, "expected a nonempty array of numbers");
          std::vector<double> sizes;
          for (const auto& x : v) sizes.push_back(as_double(x, key));
          c.ablation_sizes_pct = std::move(sizes);
        },
        [](const PipelineConfig& c) { return json(c.ablation_sizes_pct); }};
    return k;
  }();
  return keys;
}

void apply_value(PipelineConfig& config, const std::string& key, const json& value) {
  const auto& keys = registry();
  const auto it = keys.find(key);
  if (it == keys.end()) config_error(key, "unknown configuration key");
  it->second.set(config, value, key);
}

std::string hash_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

void log_line(const Context& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << '\n';
}

// Trains into a temporary file and renames, so an interrupted run never
// leaves a truncated cache entry.
template <class Load, class Train, class Save>
auto cached(const fs::path& path, const Context& ctx, Load load, Train train, Save save) {
  if (fs::exists(path)) return load(path);
  log_line(ctx, fmt::format("training {}", path.string()));
  auto model = train();
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  save(model, tmp);
  fs::rename(tmp, path);
  return model;
}

constexpr std::uint64_t kAttackStreamTag = 0x61746b;
constexpr std::uint64_t kDefenseStreamTag = 0x646566;
constexpr std::uint64_t kSegmenterCorpusTag = 0x736567;
constexpr std::uint64_t kDenoiserCorpusTag = 0x646e6f;

ToyTrainingConfig detector_training(const PipelineConfig& c) {
  ToyTrainingConfig train;
  train.epochs = c.detector_epochs;
  train.per_class = c.detector_per_class;
  train.seed = c.detector_seed;
  return train;
}

SegmenterTrainingConfig segmenter_training(const PipelineConfig& c) {
  SegmenterTrainingConfig train;
  train.epochs = c.segmenter_epochs;
  train.seed = c.segmenter_seed;
  return train;
}

ToyDenoiserConfig denoiser_training(const PipelineConfig& c) {
  ToyDenoiserConfig train;
  train.seed = c.denoiser_seed;
  return train;
}

struct LoadedImage {
  ManifestEntry entry;
  Image image;
};

std::vector<LoadedImage> load_manifest_images(const Context& ctx) {
  const auto entries = read_manifest(manifest_path(ctx));
  if (entries.empty()) throw Error(ErrorKind::kData, "manifest is empty");
  std::vector<LoadedImage> out(entries.size());
  parallel_for(entries.size(), ctx.config.jobs, [&](std::size_t i) {
    out[i] = {entries[i], read_png(entries[i].path)};
  });
  return out;
}

void ensure_run_config(const Context& ctx) {
  const fs::path dir = run_path(ctx);
  fs::create_directories(dir);
  if (!fs::exists(dir / "config.json")) write_text_file(dir / "config.json", config_to_json(ctx.config));
}

}  // namespace

std::map<std::string, std::string> config_entries(const PipelineConfig& config) {
  std::map<std::string, std::string> out;
  for (const auto& [key, k] : registry()) out[key] = k.get(config).dump();
  return out;
}

void apply_config_json(PipelineConfig& config, const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kConfig, fmt::format("config is not valid JSON (byte {}): {}", e.byte, e.what()));
  }
  if (!doc.is_object()) throw Error(ErrorKind::kConfig, "config must be a JSON object of dotted keys");
  // Validate every key before touching the config.
  for (const auto& [key, value] : doc.items()) {
    if (!registry().count(key)) config_error(key, "unknown configuration key");
  }
  for (const auto& [key, value] : doc.items()) apply_value(config, key, value);
}

void apply_override(PipelineConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::kConfig, fmt::format("override '{}' is not key=value", assignment));
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  apply_value(config, key, value);
}

void validate(const PipelineConfig& c) {
  if (c.jobs < 1) config_error("jobs", "must be >= 1");
  if (c.run_id.empty() || c.run_id.find_first_of("/\\") != std::string::npos || c.run_id == "." ||
      c.run_id == "..") {
    config_error("run.id", "must be a plain name");
  }
  if (!(c.min_area_fraction >= 0 && c.min_area_fraction <= 1)) config_error("dataset.min_area_fraction", "outside [0, 1]");
  if (c.synthetic_count < 1) config_error("dataset.synthetic_count", "must be >= 1");
  if (c.detector_endpoint != "toy" && c.detector_endpoint.rfind("http://", 0) != 0) {
    config_error("detector.endpoint", "expected \"toy\" or an http:// URL");
  }
  if (c.detector_epochs < 0) config_error("detector.train.epochs", "must be >= 0");
  if (c.detector_per_class < 1) config_error("detector.train.per_class", "must be >= 1");
  try {
    c.attack.validate();
  } catch (const Error& e) {
    // Attack messages start with the field name; report the dotted key.
    const std::string what = e.what();
    const std::string prefix = fmt::format("{} error: ", to_string(e.kind()));
    throw Error(ErrorKind::kConfig,
                "attack." + (what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what));
  }
  if (c.segmenter_train_count < 1) config_error("defense.segmenter.train_count", "must be >= 1");
  if (c.segmenter_epochs < 0) config_error("defense.segmenter.epochs", "must be >= 0");
  if (c.denoiser_per_class < 1) config_error("defense.denoiser.per_class", "must be >= 1");
  if (c.schedule_steps < 1) config_error("defense.schedule.steps", "must be >= 1");
  if (!(c.beta_start > 0 && c.beta_start <= c.beta_end)) {
    config_error("defense.schedule.beta_start", "need 0 < beta_start <= beta_end");
  }
  if (!(c.beta_end * 1000.0 / c.schedule_steps < 1)) {
    config_error("defense.schedule.beta_end", "scaled beta must stay below 1");
  }
  if (!(c.defense.binarize_threshold > 0 && c.defense.binarize_threshold < 1)) {
    config_error("defense.binarize_threshold", "outside (0, 1)");
  }
  if (c.defense.completion.min_component < 0) config_error("defense.min_component", "must be >= 0");
  if (c.defense.completion.dilation_iterations < 0) config_error("defense.dilation_iterations", "must be >= 0");
  if (c.defense.inpaint_radius < 1) config_error("defense.inpaint_radius", "must be >= 1");
  for (double s : c.ablation_sizes_pct) {
    if (!(s > 0 && s <= 50)) config_error("ablation.sizes_pct", fmt::format("size {} outside (0, 50]", s));
  }
}

std::string config_to_json(const PipelineConfig& config) {
  nlohmann::ordered_json out;
  for (const auto& [key, k] : registry()) out[key] = k.get(config);
  return out.dump(2) + "\n";
}

fs::path detector_cache_path(const Context& ctx) {
  const auto t = detector_training(ctx.config);
  const std::string key = fmt::format("{} {} {} {} {} {} {}", t.epochs, t.per_class, t.seed, t.batch_size,
                                      t.learning_rate, t.occlusion_probability, t.occlusion_max_fraction);
  return ctx.out / "models" / ("toy-detector-" + hash_hex(key) + ".bin");
}

fs::path segmenter_cache_path(const Context& ctx) {
  const auto t = segmenter_training(ctx.config);
  const std::string key = fmt::format("{} {} {} {} {}", ctx.config.segmenter_train_count, t.epochs, t.seed,
                                      t.batch_size, t.learning_rate);
  return ctx.out / "models" / ("segmenter-" + hash_hex(key) + ".bin");
}

fs::path denoiser_cache_path(const Context& ctx) {
  const auto& c = ctx.config;
  const auto t = denoiser_training(c);
  const std::string key = fmt::format("{} {} {} {} {} {} {}", c.denoiser_per_class, c.schedule_steps,
                                      c.beta_start, c.beta_end, t.noise_draws, t.ridge, t.seed);
  return ctx.out / "models" / ("denoiser-" + hash_hex(key) + ".bin");
}

fs::path manifest_path(const Context& ctx) {
  return ctx.config.manifest.empty() ? ctx.out / "manifest.jsonl" : fs::path(ctx.config.manifest);
}

fs::path run_path(const Context& ctx) { return run_directory(ctx.out, ctx.config.run_id); }

std::shared_ptr<const ToyDetector> load_toy_detector(const Context& ctx) {
  const auto& c = ctx.config;
  if (!c.detector_params.empty()) return std::make_shared<ToyDetector>(load_toy_params(c.detector_params));
  const ToyTrainingConfig train = detector_training(c);
  auto params = cached(
      detector_cache_path(ctx), ctx, [](const fs::path& p) { return load_toy_params(p); },
      [&] { return train_toy_detector(train); },
      [](const ToyDetectorParams& p, const fs::path& path) { save_toy_params(p, path); });
  return std::make_shared<ToyDetector>(std::move(params));
}

DetectorHandle load_detector(const Context& ctx) {
  if (ctx.config.detector_endpoint == "toy") return load_toy_detector(ctx);
  RemoteOptions options;
  if (!ctx.config.feature_layer.empty()) options.feature_layer = ctx.config.feature_layer;
  return std::make_shared<RemoteDetector>(ctx.config.detector_endpoint, options);
}

SegmenterParams load_segmenter_model(const Context& ctx) {
  const auto& c = ctx.config;
  if (!c.segmenter_path.empty()) return load_segmenter(c.segmenter_path);
  const SegmenterTrainingConfig train = segmenter_training(c);
  return cached(
      segmenter_cache_path(ctx), ctx, [](const fs::path& p) { return load_segmenter(p); },
      [&] {
        const auto corpus = make_segmenter_corpus(c.segmenter_train_count, 64, train.seed, kSegmenterCorpusTag);
        return train_segmenter(corpus, train);
      },
      [](const SegmenterParams& p, const fs::path& path) { save_segmenter(p, path); });
}

NoiseSchedule make_schedule(const PipelineConfig& config) {
  return NoiseSchedule::linear(config.schedule_steps, config.beta_start, config.beta_end);
}

ToyDenoiser load_denoiser_model(const Context& ctx) {
  const auto& c = ctx.config;
  if (!c.denoiser_path.empty()) return load_toy_denoiser(c.denoiser_path);
  const ToyDenoiserConfig train = denoiser_training(c);
  return cached(
      denoiser_cache_path(ctx), ctx, [](const fs::path& p) { return load_toy_denoiser(p); },
      [&] {
        std::vector<Image> images;
        for (auto& s : make_shape_corpus(c.denoiser_per_class, 64, train.seed, kDenoiserCorpusTag)) {
          images.push_back(std::move(s.image));
        }
        return train_toy_denoiser(images, make_schedule(c), train);
      },
      [](const ToyDenoiser& d, const fs::path& path) { save_toy_denoiser(d, path); });
}

fs::path run_dataset_synthetic(const Context& ctx, int count) {
  const fs::path image_dir = ctx.out / "dataset";
  fs::create_directories(image_dir);
  const auto samples = fixture_set(ctx.config.seed, count);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string id = fmt::format("synthetic_{:04d}", i);
    const fs::path path = image_dir / (id + ".png");
    write_png(samples[i].image, path);
    entries.push_back({id, path, samples[i].class_id, samples[i].bbox});
  }
  const fs::path manifest = ctx.out / "manifest.jsonl";
  write_manifest(entries, manifest);
  log_line(ctx, fmt::format("wrote {} synthetic images to {}", entries.size(), manifest.string()));
  return manifest;
}

fs::path run_dataset_coco(const Context& ctx, const fs::path& annotations, const fs::path& image_root) {
  CocoFilterConfig filter;
  filter.min_area_fraction = ctx.config.min_area_fraction;
  const auto entries = filter_single_object_file(annotations, fs::absolute(image_root), filter);
  fs::create_directories(ctx.out);
  const fs::path manifest = ctx.out / "manifest.jsonl";
  write_manifest(entries, manifest);
  log_line(ctx, fmt::format("kept {} single-object images in {}", entries.size(), manifest.string()));
  return manifest;
}

fs::path run_attack_stage(const Context& ctx) {
  const auto& c = ctx.config;
  const auto images = load_manifest_images(ctx);
  const DetectorHandle detector = load_detector(ctx);
  std::vector<std::optional<AttackResult>> results(images.size());
  parallel_for(images.size(), c.jobs, [&](std::size_t i) {
    RngStream rng = derive_stream(c.seed, {kAttackStreamTag, static_cast<std::uint64_t>(i)});
    AttackConfig cfg = c.attack;
    cfg.seed = c.seed;
    cfg.jobs = 1;
    results[i] = run_attack(*detector, images[i].image, images[i].entry.class_id, cfg, rng);
  });

  RunRecord record;
  record.run_id = c.run_id;
  record.config_json = config_to_json(c);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const AttackResult& r = *results[i];
    ImageRecord img;
    img.image_id = images[i].entry.image_id;
    img.true_class = images[i].entry.class_id;
    img.stages.emplace("original", images[i].image);
    img.stages.emplace("patched", r.adversarial);
    img.detections["original"] = r.pre_detections;
    img.detections["patched"] = r.post_detections;
    img.patch_position = r.position;
    img.patch_side = r.patch.height();
    img.loss_trace = r.loss_trace;
    log_line(ctx, fmt::format("{}: original {:.4f} -> patched {:.4f}", img.image_id,
                              img.stage_score("original"), img.stage_score("patched")));
    record.images.push_back(std::move(img));
  }
  const fs::path dir = run_path(ctx);
  fs::remove_all(dir);
  return save_run(record, ctx.out);
}

fs::path run_defend_stage(const Context& ctx) {
  const auto& c = ctx.config;
  const fs::path dir = run_path(ctx);
  RunRecord record = load_run(dir);
  const DetectorHandle detector = load_detector(ctx);
  const SegmenterParams segmenter = load_segmenter_model(ctx);
  const ToyDenoiser denoiser = load_denoiser_model(ctx);
  const NoiseSchedule schedule = make_schedule(c);
  static constexpr const char* kBranchStage[] = {"sac", "inpainted", "diffused"};

  parallel_for(record.images.size(), c.jobs, [&](std::size_t i) {
    ImageRecord& img = record.images[i];
    const auto patched = img.stages.find("patched");
    if (patched == img.stages.end()) {
      throw Error(ErrorKind::kIntegrity, fmt::format("image {} has no patched stage", img.image_id));
    }
    RngStream rng = derive_stream(c.seed, {kDefenseStreamTag, static_cast<std::uint64_t>(i)});
    DefenseReport report = run_defenses(patched->second, *detector, segmenter, denoiser, schedule, c.defense, rng);
    for (std::size_t b = 0; b < report.branches.size(); ++b) {
      BranchResult& branch = report.branches[b];
      img.stages.erase(kBranchStage[b]);
      if (branch.output) img.stages.emplace(kBranchStage[b], *branch.output);
      img.detections[kBranchStage[b]] = branch.detections;
      branch.output.reset();
    }
    img.mask = report.mask;
    img.defense = std::move(report);
  });
  for (const auto& img : record.images) {
    std::string line = img.image_id + ":";
    for (const char* stage : kStageNames) line += fmt::format(" {} {:.4f}", stage, img.stage_score(stage));
    log_line(ctx, line);
  }
  record.report.reset();
  fs::remove(dir / "report.json");
  return save_run(record, ctx.out);
}

fs::path run_eval_stage(const Context& ctx) {
  const fs::path dir = run_path(ctx);
  const RunRecord record = load_run(dir);
  std::vector<StageScores> stages;
  for (const char* name : kStageNames) {
    StageScores s{name, {}};
    for (const auto& img : record.images) {
      if (!img.detections.count(name)) {
        throw Error(ErrorKind::kReport, fmt::format("image {} has no '{}' detections; run the missing stage first",
                                                    img.image_id, name));
      }
      s.scores.push_back(img.stage_score(name));
    }
    stages.push_back(std::move(s));
  }
  const StageReport report = stage_report(stages);
  const fs::path path = dir / "report.json";
  write_text_file(path, report_to_json(report));
  return path;
}

fs::path run_ablate_stage(const Context& ctx) {
  const auto& c = ctx.config;
  const auto images = load_manifest_images(ctx);
  const DetectorHandle detector = load_detector(ctx);
  std::vector<LabeledImage> dataset;
  for (const auto& img : images) dataset.push_back({img.entry.image_id, img.image, img.entry.class_id});
  const auto rows = ablation_sweep(*detector, dataset, c.ablation_sizes_pct, c.attack, c.seed, c.jobs);
  for (const auto& r : rows) {
    if (r.error) {
      throw Error(ErrorKind::kData, fmt::format("ablation at {}% failed: {}", r.patch_size_pct, *r.error));
    }
    log_line(ctx, fmt::format("patch {}%: mean confidence drop {:.2f} points", r.patch_size_pct, r.mean_conf_drop_pct));
  }
  ensure_run_config(ctx);
  return emit_plot(rows, run_path(ctx) / "ablation.csv").csv;
}

void print_report(const Context& ctx, std::ostream& out) {
  const RunRecord record = load_run(run_path(ctx));
  out << fmt::format("run {}: {} images\n", record.run_id, record.images.size());
  if (record.report) {
    const auto& r = *record.report;
    out << fmt::format("{:<10} {:>8} {:>8} {:>4}\n", "stage", "mean%", "stderr", "n");
    for (const auto& s : r.stages) {
      out << fmt::format("{:<10} {:>8.2f} {:>8.2f} {:>4}\n", s.name, s.mean, s.stderr_, s.count);
    }
    out << fmt::format("attack: {:.2f}% relative change, {:.2f} points\n", r.attack_rel_change_pct,
                       r.attack_points);
    for (const auto& d : r.defenses) {
      out << fmt::format("{:<10} recovers {:.2f} points ({:.2f}% of original)\n", d.name, d.points,
                         d.recovery_pct);
    }
  } else {
    out << "no report.json; run `eval` first\n";
  }
  if (!record.ablation.empty()) {
    out << "patch size% -> mean confidence drop (points)\n";
    for (const auto& a : record.ablation) {
      out << fmt::format("{:>6.2f} -> {:.2f}\n", a.patch_size_pct, a.mean_conf_drop_pct);
    }
  }
}

}  // namespace patchbench::cli
