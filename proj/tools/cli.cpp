// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "patchbench/error.hpp"
#include "patchbench/io.hpp"
#include "pipeline.hpp"

namespace patchbench::cli {

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "patchbench_out";
  std::optional<int> jobs;
  std::vector<std::string> overrides;
};

bool sets_key(const std::string& config_text, const std::vector<std::string>& overrides,
              const std::string& key) {
  for (const auto& o : overrides) {
    if (o.rfind(key + "=", 0) == 0) return true;
  }
  if (config_text.empty()) return false;
  const auto doc = nlohmann::json::parse(config_text, nullptr, false);
  return doc.is_object() && doc.contains(key);
}

// Precedence: defaults < environment < config file < flags.
Context build_context(const CommonFlags& flags, std::ostream& err) {
  Context ctx;
  const std::string text = flags.config_path.empty() ? "" : read_text_file(flags.config_path);
  if (const char* url = std::getenv("PATCHBENCH_DETECTOR_URL");
      url && *url && !sets_key(text, flags.overrides, "detector.endpoint")) {
    ctx.config.detector_endpoint = url;
  }
  if (!text.empty()) apply_config_json(ctx.config, text);
  for (const auto& o : flags.overrides) apply_override(ctx.config, o);
  if (flags.seed) ctx.config.seed = *flags.seed;
  if (flags.jobs) ctx.config.jobs = *flags.jobs;
  validate(ctx.config);
  ctx.out = flags.out;
  ctx.log = &err;
  return ctx;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial patch attack and defense benchmark", "patchbench"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonFlags flags;
  app.add_option("--config", flags.config_path, "JSON file of dotted configuration keys");
  app.add_option("--seed", flags.seed, "Master seed for every stochastic step");
  app.add_option("--out", flags.out, "Output directory (nothing is written outside it)")
      ->capture_default_str();
  app.add_option("--jobs", flags.jobs, "Worker threads; results do not depend on it")
      ->check(CLI::PositiveNumber);
  app.add_option("--set", flags.overrides, "Override one key: --set attack.eta=0.1")->take_all();

  auto* dataset = app.add_subcommand("dataset", "Build a manifest from COCO annotations or synthetic images");
  std::string annotations;
  std::string image_root;
  std::optional<int> synthetic;
  auto* ann_opt = dataset->add_option("--annotations", annotations, "COCO instances JSON");
  auto* img_opt = dataset->add_option("--images", image_root, "Directory holding the annotated images");
  auto* syn_opt = dataset->add_option("--synthetic", synthetic, "Render N synthetic shape images instead")
                      ->check(CLI::PositiveNumber);
  ann_opt->needs(img_opt);
  img_opt->needs(ann_opt);
  syn_opt->excludes(ann_opt);

  auto* attack = app.add_subcommand("attack", "Optimise and place a patch on every manifest image");
  auto* defend = app.add_subcommand("defend", "Run removal, inpainting and diffusion restoration");
  auto* eval = app.add_subcommand("eval", "Score every stage and write report.json");
  auto* ablate = app.add_subcommand("ablate", "Sweep patch sizes and write ablation.csv");
  auto* report = app.add_subcommand("report", "Print a run's report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitUsage;
  }

  try {
    const Context ctx = build_context(flags, err);
    if (dataset->parsed()) {
      if (synthetic) {
        run_dataset_synthetic(ctx, *synthetic);
      } else if (!annotations.empty()) {
        run_dataset_coco(ctx, annotations, image_root);
      } else {
        run_dataset_synthetic(ctx, ctx.config.synthetic_count);
      }
    } else if (attack->parsed()) {
      out << run_attack_stage(ctx).string() << '\n';
    } else if (defend->parsed()) {
      out << run_defend_stage(ctx).string() << '\n';
    } else if (eval->parsed()) {
      out << run_eval_stage(ctx).string() << '\n';
    } else if (ablate->parsed()) {
      out << run_ablate_stage(ctx).string() << '\n';
    } else if (report->parsed()) {
      print_report(ctx, out);
    }
  } catch (const Error& e) {
    err << "patchbench: " << e.what() << '\n';
    return e.kind() == ErrorKind::kConfig ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "patchbench: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace patchbench::cli
