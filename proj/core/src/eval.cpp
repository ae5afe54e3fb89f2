// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "patchbench/error.hpp"
#include "patchbench/io.hpp"
#include "patchbench/parallel.hpp"

namespace patchbench {

using ordered_json = nlohmann::ordered_json;

double score_detection(const std::vector<Detection>& detections, int true_class) {
  if (detections.empty()) return 0.0;
  const Detection* top = &detections.front();
  for (const auto& d : detections) {
    if (d.confidence > top->confidence) top = &d;
  }
  if (top->class_id != true_class) return 0.0;
  return std::clamp(top->confidence, 0.0, 1.0);
}

double mean_confidence(const std::vector<double>& scores) {
  if (scores.empty()) throw Error(ErrorKind::kAggregation, "mean of an empty score set");
  double sum = 0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

double standard_error(const std::vector<double>& scores) {
  const double m = mean_confidence(scores);
  const std::size_t n = scores.size();
  if (n < 2) return 0.0;
  double ss = 0;
  for (double s : scores) ss += (s - m) * (s - m);
  return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

double relative_change(double orig_mean, double method_mean) {
  if (orig_mean == 0) throw Error(ErrorKind::kDivision, "relative change against a zero mean");
  return std::abs(orig_mean - method_mean) / orig_mean * 100.0;
}

double recovery_vs_patched(double method_mean, double patched_mean, double orig_mean) {
  if (orig_mean == 0) throw Error(ErrorKind::kDivision, "recovery against a zero original mean");
  return (method_mean - patched_mean) / orig_mean * 100.0;
}

StageSummary summarize(const StageScores& stage) {
  return {stage.name, mean_confidence(stage.scores) * 100.0, standard_error(stage.scores) * 100.0,
          stage.scores.size()};
}

namespace {

int stage_rank(const std::string& name) {
  for (int i = 0; i < static_cast<int>(std::size(kStageNames)); ++i) {
    if (name == kStageNames[i]) return i;
  }
  return -1;
}

}  // namespace

StageReport build_report(const std::vector<StageSummary>& stages) {
  std::vector<const StageSummary*> slots(std::size(kStageNames), nullptr);
  for (const auto& s : stages) {
    const int r = stage_rank(s.name);
    if (r < 0) throw Error(ErrorKind::kReport, fmt::format("unknown stage '{}'", s.name));
    if (slots[r]) throw Error(ErrorKind::kReport, fmt::format("duplicate stage '{}'", s.name));
    slots[r] = &s;
  }
  for (int r = 0; r < 2; ++r) {
    if (!slots[r]) {
      throw Error(ErrorKind::kReport, fmt::format("missing stage '{}'", kStageNames[r]));
    }
  }
  StageReport report;
  for (const auto* s : slots) {
    if (s) report.stages.push_back(*s);
  }
  const double orig = slots[0]->mean;
  const double patched = slots[1]->mean;
  report.attack_rel_change_pct = relative_change(orig, patched);
  report.attack_points = orig - patched;
  for (std::size_t r = 2; r < slots.size(); ++r) {
    if (!slots[r]) continue;
    report.defenses.push_back({slots[r]->name, slots[r]->mean - patched,
                               recovery_vs_patched(slots[r]->mean, patched, orig)});
  }
  return report;
}

StageReport stage_report(const std::vector<StageScores>& stages) {
  std::vector<StageSummary> summaries;
  summaries.reserve(stages.size());
  for (const auto& s : stages) summaries.push_back(summarize(s));
  return build_report(summaries);
}

std::string report_to_json(const StageReport& report) {
  ordered_json j;
  j["stages"] = ordered_json::array();
  for (const auto& s : report.stages) {
    j["stages"].push_back({{"name", s.name}, {"mean", s.mean}, {"stderr", s.stderr_}, {"n", s.count}});
  }
  j["attack_rel_change_pct"] = report.attack_rel_change_pct;
  j["attack_points"] = report.attack_points;
  j["defenses"] = ordered_json::array();
  for (const auto& d : report.defenses) {
    j["defenses"].push_back({{"name", d.name}, {"points", d.points}, {"recovery_pct", d.recovery_pct}});
  }
  return j.dump(2) + "\n";
}

namespace {

const ordered_json& require(const ordered_json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw Error(ErrorKind::kFormat, fmt::format("{}: missing field '{}'", where, key));
  }
  return obj.at(key);
}

double require_number(const ordered_json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_number()) throw Error(ErrorKind::kFormat, fmt::format("{}.{}: expected a number", where, key));
  return v.get<double>();
}

std::string require_string(const ordered_json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) throw Error(ErrorKind::kFormat, fmt::format("{}.{}: expected a string", where, key));
  return v.get<std::string>();
}

const ordered_json& require_array(const ordered_json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_array()) throw Error(ErrorKind::kFormat, fmt::format("{}.{}: expected an array", where, key));
  return v;
}

}  // namespace

StageReport report_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kFormat, fmt::format("report: byte {}: {}", e.byte, e.what()));
  }
  StageReport report;
  const auto& stages = require_array(j, "stages", "report");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string where = fmt::format("stages[{}]", i);
    StageSummary s;
    s.name = require_string(stages[i], "name", where);
    s.mean = require_number(stages[i], "mean", where);
    s.stderr_ = require_number(stages[i], "stderr", where);
    if (stages[i].contains("n")) s.count = stages[i].at("n").get<std::size_t>();
    report.stages.push_back(s);
  }
  report.attack_rel_change_pct = require_number(j, "attack_rel_change_pct", "report");
  if (j.contains("attack_points")) report.attack_points = require_number(j, "attack_points", "report");
  const auto& defenses = require_array(j, "defenses", "report");
  for (std::size_t i = 0; i < defenses.size(); ++i) {
    const std::string where = fmt::format("defenses[{}]", i);
    report.defenses.push_back({require_string(defenses[i], "name", where),
                               require_number(defenses[i], "points", where),
                               require_number(defenses[i], "recovery_pct", where)});
  }
  return report;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i + j) / 2.0) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::kValue, "spearman inputs differ in length");
  if (a.size() < 2) throw Error(ErrorKind::kValue, "spearman needs at least two points");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double ma = mean_confidence(ra);
  const double mb = mean_confidence(rb);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

std::vector<AblationRow> ablation_sweep(const Detector& detector,
                                        const std::vector<LabeledImage>& dataset,
                                        const std::vector<double>& sizes_pct,
                                        const AttackConfig& config, std::uint64_t seed, int jobs) {
  if (sizes_pct.empty()) throw Error(ErrorKind::kValue, "ablation needs at least one size");
  for (double s : sizes_pct) {
    if (!(s > 0 && s <= 100)) {
      throw Error(ErrorKind::kValue, fmt::format("patch size {}% outside (0, 100]", s));
    }
  }
  if (dataset.empty()) throw Error(ErrorKind::kValue, "ablation needs a nonempty dataset");

  const std::size_t n = dataset.size();
  std::vector<double> clean(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    clean[i] = score_detection(detector.detect(dataset[i].image), dataset[i].class_id);
  });

  struct Cell {
    double patched = 0;
    std::optional<std::string> error;
  };
  std::vector<Cell> cells(sizes_pct.size() * n);
  parallel_for(cells.size(), jobs, [&](std::size_t idx) {
    const std::size_t k = idx / n;
    const std::size_t i = idx % n;
    AttackConfig cfg = config;
    cfg.patch_size_fraction = sizes_pct[k] / 100.0;
    cfg.jobs = 1;
    RngStream rng = derive_stream(seed, {kAblationStreamTag, k, i});
    try {
      const AttackResult r = run_attack(detector, dataset[i].image, dataset[i].class_id, cfg, rng);
      cells[idx].patched = score_detection(r.post_detections, dataset[i].class_id);
    } catch (const Error& e) {
      cells[idx].error = fmt::format("image '{}': {}", dataset[i].id, e.what());
    }
  });

  std::vector<AblationRow> rows;
  for (std::size_t k = 0; k < sizes_pct.size(); ++k) {
    AblationRow row;
    row.patch_size_pct = sizes_pct[k];
    std::vector<double> patched;
    for (std::size_t i = 0; i < n; ++i) {
      const Cell& c = cells[k * n + i];
      if (c.error) {
        if (!row.error) row.error = c.error;
        continue;
      }
      patched.push_back(c.patched);
    }
    if (!row.error) row.mean_conf_drop_pct = (mean_confidence(clean) - mean_confidence(patched)) * 100.0;
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "patch_size_pct,mean_conf_drop_pct\n";
  for (const auto& r : rows) {
    if (r.error) continue;
    out += fmt::format("{:.6f},{:.6f}\n", r.patch_size_pct, r.mean_conf_drop_pct);
  }
  return out;
}

namespace {

std::string render_svg(const std::vector<AblationRow>& rows) {
  constexpr double kW = 480, kH = 320, kMargin = 48;
  double max_drop = 1.0;
  double lo = std::numeric_limits<double>::max(), hi = 0;
  for (const auto& r : rows) {
    max_drop = std::max(max_drop, r.mean_conf_drop_pct);
    lo = std::min(lo, r.patch_size_pct);
    hi = std::max(hi, r.patch_size_pct);
  }
  const double log_lo = std::floor(std::log10(lo));
  const double log_hi = std::max(std::ceil(std::log10(hi)), log_lo + 1);
  auto px = [&](double drop) { return kMargin + drop / (max_drop * 1.1) * (kW - 2 * kMargin); };
  auto py = [&](double size) {
    return kH - kMargin - (std::log10(size) - log_lo) / (log_hi - log_lo) * (kH - 2 * kMargin);
  };
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\">\n", kW, kH);
  svg += fmt::format(
      "<line x1=\"{0:.0f}\" y1=\"{1:.0f}\" x2=\"{2:.0f}\" y2=\"{1:.0f}\" stroke=\"black\"/>\n",
      kMargin, kH - kMargin, kW - kMargin);
  svg += fmt::format(
      "<line x1=\"{0:.0f}\" y1=\"{1:.0f}\" x2=\"{0:.0f}\" y2=\"{2:.0f}\" stroke=\"black\"/>\n",
      kMargin, kH - kMargin, kMargin);
  for (double e = log_lo; e <= log_hi; e += 1) {
    const double y = py(std::pow(10.0, e));
    svg += fmt::format("<text x=\"4\" y=\"{:.1f}\" font-size=\"10\">{:g}</text>\n", y + 3,
                       std::pow(10.0, e));
  }
  svg += fmt::format(
      "<text x=\"{:.0f}\" y=\"{:.0f}\" font-size=\"11\">mean confidence drop (%)</text>\n",
      kW / 2 - 60, kH - 12);
  svg += fmt::format(
      "<text x=\"12\" y=\"{:.0f}\" font-size=\"11\" transform=\"rotate(-90 12 {:.0f})\">patch size "
      "(%, log)</text>\n",
      kH / 2 + 30, kH / 2 + 30);
  std::string points;
  for (const auto& r : rows) {
    points += fmt::format("{:.2f},{:.2f} ", px(r.mean_conf_drop_pct), py(r.patch_size_pct));
  }
  svg += "<polyline fill=\"none\" stroke=\"steelblue\" points=\"" + points + "\"/>\n";
  for (const auto& r : rows) {
    svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"steelblue\"/>\n",
                       px(r.mean_conf_drop_pct), py(r.patch_size_pct));
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace

PlotFiles emit_plot(const std::vector<AblationRow>& rows, const std::filesystem::path& csv_path) {
  std::vector<AblationRow> ok;
  for (const auto& r : rows) {
    if (!r.error) ok.push_back(r);
  }
  if (ok.empty()) throw Error(ErrorKind::kValue, "no ablation rows to plot");
  PlotFiles files{csv_path, csv_path, csv_path};
  files.svg.replace_extension(".svg");
  files.meta.replace_extension(".plot.json");
  write_text_file(files.csv, ablation_csv(ok));
  write_text_file(files.svg, render_svg(ok));
  ordered_json meta;
  meta["x_axis"] = {{"field", "mean_conf_drop_pct"}, {"label", "mean confidence drop (%)"}, {"scale", "linear"}};
  meta["y_axis"] = {{"field", "patch_size_pct"}, {"label", "patch size (%)"}, {"scale", "log"}};
  meta["points"] = ok.size();
  meta["csv"] = files.csv.filename().string();
  write_text_file(files.meta, meta.dump(2) + "\n");
  return files;
}

}  // namespace patchbench
