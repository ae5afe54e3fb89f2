// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <png.h>

#include "patchbench/error.hpp"
#include "patchbench/io.hpp"

namespace patchbench {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

// Line and column (1-based) of a byte offset.
std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t offset) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

ordered_json parse_json(const std::string& text, const std::string& what) {
  try {
    return ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // nlohmann reports the byte just past the offending token.
    const std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
    const auto [line, col] = line_column(text, offset);
    throw Error(ErrorKind::kFormat, fmt::format("{}: line {}, column {} (offset {}): {}", what,
                                                line, col, offset, e.what()));
  }
}

[[noreturn]] void format_error(const std::string& what) { throw Error(ErrorKind::kFormat, what); }

double number_at(const ordered_json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_number()) format_error(fmt::format("{}: missing number '{}'", where, key));
  return obj[key].get<double>();
}

BoundingBox bbox_from_json(const ordered_json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 4) format_error(where + ": bbox must be [x, y, w, h]");
  for (const auto& x : v) {
    if (!x.is_number()) format_error(where + ": bbox entries must be numbers");
  }
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()};
}

ordered_json bbox_to_json(const BoundingBox& b) { return ordered_json::array({b.x, b.y, b.w, b.h}); }

}  // namespace

std::vector<ManifestEntry> filter_single_object(const std::string& annotation_json,
                                                const fs::path& image_root,
                                                const CocoFilterConfig& config) {
  const ordered_json doc = parse_json(annotation_json, "annotations");
  if (!doc.is_object()) format_error("annotations: top level must be an object");
  const ordered_json empty = ordered_json::array();
  const ordered_json& images = doc.contains("images") ? doc["images"] : empty;
  const ordered_json& annotations = doc.contains("annotations") ? doc["annotations"] : empty;
  if (!images.is_array()) format_error("annotations: 'images' must be an array");
  if (!annotations.is_array()) format_error("annotations: 'annotations' must be an array");

  std::unordered_map<std::int64_t, std::vector<std::size_t>> by_image;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const auto& a = annotations[i];
    const std::string where = fmt::format("annotations[{}]", i);
    if (!a.is_object() || !a.contains("image_id") || !a["image_id"].is_number_integer()) {
      format_error(where + ": missing integer 'image_id'");
    }
    by_image[a["image_id"].get<std::int64_t>()].push_back(i);
  }

  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    const std::string where = fmt::format("images[{}]", i);
    if (!img.is_object() || !img.contains("id") || !img["id"].is_number_integer()) {
      format_error(where + ": missing integer 'id'");
    }
    if (!img.contains("file_name") || !img["file_name"].is_string()) {
      format_error(where + ": missing string 'file_name'");
    }
    const double width = number_at(img, "width", where);
    const double height = number_at(img, "height", where);
    const auto found = by_image.find(img["id"].get<std::int64_t>());
    if (found == by_image.end() || found->second.size() != 1) continue;
    const auto& a = annotations[found->second.front()];
    const std::string awhere = fmt::format("annotations[{}]", found->second.front());
    if (!a.contains("bbox")) format_error(awhere + ": missing 'bbox'");
    const BoundingBox box = bbox_from_json(a["bbox"], awhere);
    const double area = a.contains("area") ? number_at(a, "area", awhere) : box.w * box.h;
    if (area < config.min_area_fraction * width * height) continue;
    if (!a.contains("category_id") || !a["category_id"].is_number_integer()) {
      format_error(awhere + ": missing integer 'category_id'");
    }
    out.push_back({std::to_string(img["id"].get<std::int64_t>()),
                   image_root / img["file_name"].get<std::string>(), a["category_id"].get<int>(),
                   box});
  }
  return out;
}

std::vector<ManifestEntry> filter_single_object_file(const fs::path& annotation_file,
                                                     const fs::path& image_root,
                                                     const CocoFilterConfig& config) {
  return filter_single_object(read_text_file(annotation_file), image_root, config);
}

void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
  const fs::path base = path.parent_path();
  std::string text;
  for (const auto& e : entries) {
    fs::path p = e.path;
    if (p.is_absolute() && !base.empty()) {
      const fs::path rel = p.lexically_relative(fs::absolute(base));
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    } else if (!base.empty()) {
      const fs::path rel = p.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    ordered_json j{{"image_id", e.image_id},
                   {"path", p.generic_string()},
                   {"class_id", e.class_id},
                   {"bbox", bbox_to_json(e.bbox)}};
    text += j.dump() + "\n";
  }
  write_text_file(path, text);
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  const std::string text = read_text_file(path);
  std::vector<ManifestEntry> out;
  std::vector<std::string> missing;
  std::istringstream lines(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(lines, line)) {
    ++number;
    if (line.empty()) continue;
    const std::string where = fmt::format("{} line {}", path.string(), number);
    const ordered_json j = parse_json(line, where);
    if (!j.is_object()) format_error(where + ": expected an object");
    if (!j.contains("image_id") || !j["image_id"].is_string()) format_error(where + ": missing 'image_id'");
    if (!j.contains("path") || !j["path"].is_string()) format_error(where + ": missing 'path'");
    if (!j.contains("class_id") || !j["class_id"].is_number_integer()) format_error(where + ": missing 'class_id'");
    if (!j.contains("bbox")) format_error(where + ": missing 'bbox'");
    ManifestEntry e;
    e.image_id = j["image_id"].get<std::string>();
    e.path = j["path"].get<std::string>();
    if (e.path.is_relative()) e.path = path.parent_path() / e.path;
    e.class_id = j["class_id"].get<int>();
    e.bbox = bbox_from_json(j["bbox"], where);
    if (!fs::exists(e.path)) missing.push_back(e.path.string());
    out.push_back(std::move(e));
  }
  if (!missing.empty()) {
    throw Error(ErrorKind::kIntegrity,
                fmt::format("manifest references missing images: {}", fmt::join(missing, ", ")));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

void write_png_rows(const fs::path& path, int width, int height, int bit_depth, int color_type,
                    const std::vector<std::vector<png_byte>>& rows) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::kIo, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::kIo, "libpng failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (const auto& row : rows) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

png_byte to_byte(double v) {
  return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_png(const Image& image, const fs::path& path) {
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(image.height()));
  for (int r = 0; r < image.height(); ++r) {
    rows[r].resize(static_cast<std::size_t>(image.width()) * kChannels);
    for (int c = 0; c < image.width(); ++c)
      for (int ch = 0; ch < kChannels; ++ch) rows[r][c * kChannels + ch] = to_byte(image.at(r, c, ch));
  }
  write_png_rows(path, image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB, rows);
}

Image read_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error(ErrorKind::kIo, fmt::format("cannot read {}: {}", path.string(), img.message));
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorKind::kFormat, fmt::format("cannot decode {}: {}", path.string(), img.message));
  }
  std::vector<float> values(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) values[i] = static_cast<float>(buffer[i] / 255.0);
  return Image::from_values(static_cast<int>(img.height), static_cast<int>(img.width), std::move(values));
}

void write_heatmap_png(const Heatmap& heatmap, const fs::path& path) {
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(heatmap.height));
  for (int r = 0; r < heatmap.height; ++r) {
    rows[r].resize(static_cast<std::size_t>(heatmap.width));
    for (int c = 0; c < heatmap.width; ++c) rows[r][c] = to_byte(heatmap.at(r, c));
  }
  write_png_rows(path, heatmap.width, heatmap.height, 8, PNG_COLOR_TYPE_GRAY, rows);
}

void write_mask_png(const BinaryMask& mask, const fs::path& path) {
  std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(mask.height()));
  for (int r = 0; r < mask.height(); ++r) {
    rows[r].assign(static_cast<std::size_t>((mask.width() + 7) / 8), 0);
    for (int c = 0; c < mask.width(); ++c) {
      if (mask.at(r, c)) rows[r][c / 8] |= static_cast<png_byte>(0x80 >> (c % 8));
    }
  }
  write_png_rows(path, mask.width(), mask.height(), 1, PNG_COLOR_TYPE_GRAY, rows);
}

namespace {

constexpr char kF32Magic[8] = {'P', 'B', 'F', '3', '2', 0, 0, 1};

}  // namespace

void write_f32(const Image& image, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(kF32Magic, sizeof kF32Magic);
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(image.height()),
                                 static_cast<std::uint32_t>(image.width())};
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(image.values().data()),
            static_cast<std::streamsize>(image.values().size() * sizeof(float)));
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

Image read_f32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  char magic[sizeof kF32Magic];
  std::uint32_t dims[2] = {0, 0};
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || !std::equal(magic, magic + sizeof magic, kF32Magic)) {
    throw Error(ErrorKind::kFormat, path.string() + " is not a float32 image sidecar");
  }
  std::vector<float> values(static_cast<std::size_t>(dims[0]) * dims[1] * kChannels);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!in || in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorKind::kFormat, path.string() + ": sample count does not match its header");
  }
  return Image::from_values(static_cast<int>(dims[0]), static_cast<int>(dims[1]), std::move(values));
}

// ---------------------------------------------------------------------------
// Run records

namespace {

void check_id(const std::string& id, const char* what) {
  if (id.empty() || id == "." || id == ".." || id.find_first_of("/\\") != std::string::npos) {
    throw Error(ErrorKind::kValue, fmt::format("{} '{}' is not a plain file name", what, id));
  }
}

ordered_json detections_json(const std::vector<Detection>& detections) {
  ordered_json arr = ordered_json::array();
  for (const auto& d : detections) {
    arr.push_back({{"class_id", d.class_id}, {"confidence", d.confidence}, {"bbox", bbox_to_json(d.bbox)}});
  }
  return arr;
}

std::vector<Detection> detections_from_json(const ordered_json& arr, const std::string& where) {
  if (!arr.is_array()) format_error(where + ": detections must be an array");
  std::vector<Detection> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string w = fmt::format("{}[{}]", where, i);
    const auto& d = arr[i];
    if (!d.is_object() || !d.contains("class_id") || !d["class_id"].is_number_integer()) {
      format_error(w + ": missing 'class_id'");
    }
    out.push_back({d["class_id"].get<int>(), number_at(d, "confidence", w),
                   bbox_from_json(d.contains("bbox") ? d["bbox"] : ordered_json(), w)});
  }
  return out;
}

std::vector<std::string> stored_stages(const ImageRecord& rec) {
  std::vector<std::string> out;
  for (const char* name : kStageNames) {
    if (rec.stages.count(name)) out.emplace_back(name);
  }
  return out;
}

std::string loss_csv(const std::vector<double>& trace) {
  std::string out = "iter,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out += fmt::format("{},{:.17g}\n", i, trace[i]);
  return out;
}

std::string mask_bits(const BinaryMask& mask) {
  std::string s(mask.bits().size(), '0');
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = mask.bits()[i] ? '1' : '0';
  return s;
}

}  // namespace

std::string detections_to_json(const std::vector<Detection>& detections) {
  return detections_json(detections).dump();
}

double ImageRecord::stage_score(const std::string& stage) const {
  const auto it = detections.find(stage);
  if (it == detections.end()) return 0.0;
  return score_detection(it->second, true_class);
}

fs::path run_directory(const fs::path& root, const std::string& run_id) {
  check_id(run_id, "run id");
  return root / ("run_" + run_id);
}

std::vector<std::string> run_layout(const RunRecord& record) {
  std::vector<std::string> files{"config.json"};
  for (const auto& img : record.images) {
    const std::string base = "images/" + img.image_id + "/";
    for (const auto& stage : stored_stages(img)) {
      files.push_back(base + stage + ".png");
      files.push_back(base + stage + ".f32");
    }
    files.push_back(base + "record.json");
    if (!img.loss_trace.empty()) files.push_back(base + "loss.csv");
    if (img.mask) files.push_back(base + "mask.png");
  }
  if (record.report) files.push_back("report.json");
  if (!record.ablation.empty()) files.push_back("ablation.csv");
  std::sort(files.begin(), files.end());
  return files;
}

fs::path save_run(const RunRecord& record, const fs::path& root) {
  const fs::path dir = run_directory(root, record.run_id);
  fs::create_directories(dir / "images");
  write_text_file(dir / "config.json", record.config_json);
  for (const auto& img : record.images) {
    check_id(img.image_id, "image id");
    const fs::path idir = dir / "images" / img.image_id;
    fs::create_directories(idir);
    ordered_json j;
    j["image_id"] = img.image_id;
    j["true_class"] = img.true_class;
    j["stages"] = stored_stages(img);
    j["detections"] = ordered_json::object();
    for (const char* name : kStageNames) {
      const auto it = img.detections.find(name);
      if (it != img.detections.end()) j["detections"][name] = detections_json(it->second);
    }
    if (img.patch_position) {
      j["patch"] = {{"row", img.patch_position->row}, {"col", img.patch_position->col},
                    {"side", img.patch_side}};
    }
    j["loss_iterations"] = img.loss_trace.size();
    if (img.defense) j["defense"] = ordered_json::parse(defense_report_to_json(*img.defense));
    if (img.mask) {
      j["mask"] = {{"height", img.mask->height()}, {"width", img.mask->width()},
                   {"bits", mask_bits(*img.mask)}};
    }
    write_text_file(idir / "record.json", j.dump(2) + "\n");
    for (const auto& stage : stored_stages(img)) {
      const Image& im = img.stages.at(stage);
      write_png(im, idir / (stage + ".png"));
      write_f32(im, idir / (stage + ".f32"));
    }
    if (!img.loss_trace.empty()) write_text_file(idir / "loss.csv", loss_csv(img.loss_trace));
    if (img.mask) write_mask_png(*img.mask, idir / "mask.png");
  }
  if (record.report) write_text_file(dir / "report.json", report_to_json(*record.report));
  if (!record.ablation.empty()) write_text_file(dir / "ablation.csv", ablation_csv(record.ablation));
  return dir;
}

namespace {

std::vector<double> read_loss_csv(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  if (line != "iter,loss") format_error(path.string() + ": bad header");
  std::vector<double> out;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) format_error(path.string() + ": bad row '" + line + "'");
    out.push_back(std::stod(line.substr(comma + 1)));
  }
  return out;
}

std::vector<AblationRow> read_ablation_csv(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  if (line != "patch_size_pct,mean_conf_drop_pct") format_error(path.string() + ": bad header");
  std::vector<AblationRow> out;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) format_error(path.string() + ": bad row '" + line + "'");
    out.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)), std::nullopt});
  }
  return out;
}

}  // namespace

RunRecord load_run(const fs::path& run_dir) {
  const std::string name = run_dir.filename().string();
  if (name.rfind("run_", 0) != 0) {
    throw Error(ErrorKind::kValue, run_dir.string() + " is not a run_<id> directory");
  }
  std::vector<std::string> missing;
  auto require = [&](const fs::path& p) {
    if (!fs::exists(p)) missing.push_back(fs::relative(p, run_dir).generic_string());
    return fs::exists(p);
  };
  RunRecord record;
  record.run_id = name.substr(4);
  if (require(run_dir / "config.json")) record.config_json = read_text_file(run_dir / "config.json");

  std::vector<fs::path> image_dirs;
  if (fs::exists(run_dir / "images")) {
    for (const auto& entry : fs::directory_iterator(run_dir / "images")) {
      if (entry.is_directory()) image_dirs.push_back(entry.path());
    }
  }
  std::sort(image_dirs.begin(), image_dirs.end());
  for (const auto& idir : image_dirs) {
    if (!require(idir / "record.json")) continue;
    const ordered_json j = parse_json(read_text_file(idir / "record.json"), (idir / "record.json").string());
    ImageRecord img;
    const std::string where = (idir / "record.json").string();
    if (!j.contains("image_id") || !j["image_id"].is_string()) format_error(where + ": missing 'image_id'");
    img.image_id = j["image_id"].get<std::string>();
    img.true_class = static_cast<int>(number_at(j, "true_class", where));
    for (const auto& stage : j.at("stages")) {
      const std::string s = stage.get<std::string>();
      const bool png = require(idir / (s + ".png"));
      const bool f32 = require(idir / (s + ".f32"));
      if (png && f32) img.stages.emplace(s, read_f32(idir / (s + ".f32")));
    }
    if (j.contains("detections")) {
      for (const auto& [stage, dets] : j["detections"].items()) {
        img.detections[stage] = detections_from_json(dets, where + ":" + stage);
      }
    }
    if (j.contains("patch")) {
      img.patch_position = Position{j["patch"].at("row").get<int>(), j["patch"].at("col").get<int>()};
      img.patch_side = j["patch"].at("side").get<int>();
    }
    if (j.value("loss_iterations", 0) > 0 && require(idir / "loss.csv")) {
      img.loss_trace = read_loss_csv(idir / "loss.csv");
    }
    if (j.contains("defense")) img.defense = defense_report_from_json(j["defense"].dump());
    if (j.contains("mask")) {
      const auto& m = j["mask"];
      BinaryMask mask(m.at("height").get<int>(), m.at("width").get<int>());
      const std::string bits = m.at("bits").get<std::string>();
      if (bits.size() != mask.bits().size()) format_error(where + ": mask size mismatch");
      for (std::size_t k = 0; k < bits.size(); ++k) {
        mask.set(static_cast<int>(k / mask.width()), static_cast<int>(k % mask.width()), bits[k] == '1');
      }
      img.mask = std::move(mask);
      require(idir / "mask.png");
    }
    record.images.push_back(std::move(img));
  }
  if (fs::exists(run_dir / "report.json")) {
    record.report = report_from_json(read_text_file(run_dir / "report.json"));
  }
  if (fs::exists(run_dir / "ablation.csv")) record.ablation = read_ablation_csv(run_dir / "ablation.csv");
  if (!missing.empty()) {
    throw Error(ErrorKind::kIntegrity,
                fmt::format("run {} is missing: {}", run_dir.string(), fmt::join(missing, ", ")));
  }
  return record;
}

}  // namespace patchbench
