// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <fmt/format.h>

#include "patchbench/error.hpp"

namespace patchbench {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kBounds: return "bounds";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kValue: return "value";
    case ErrorKind::kCapability: return "capability";
    case ErrorKind::kLookup: return "lookup";
    case ErrorKind::kTransport: return "transport";
    case ErrorKind::kProtocol: return "protocol";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kPlacement: return "placement";
    case ErrorKind::kSize: return "size";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kData: return "data";
    case ErrorKind::kInpaint: return "inpaint";
    case ErrorKind::kStep: return "step";
    case ErrorKind::kAggregation: return "aggregation";
    case ErrorKind::kDivision: return "division";
    case ErrorKind::kReport: return "report";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kIntegrity: return "integrity";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
  }
  return "unknown";
}

namespace {

bool in_unit_range(float v) { return std::isfinite(v) && v >= 0.0f && v <= 1.0f; }

}  // namespace

Image::Image(int height, int width) {
  if (height < 1 || width < 1) {
    throw Error(ErrorKind::kValue, fmt::format("image dimensions must be >= 1, got {}x{}",
                                               height, width));
  }
  pixels_ = Tensor3<float>(height, width, kChannels, 0.0f);
}

Image Image::from_values(int height, int width, std::vector<float> values) {
  Image image(height, width);
  if (values.size() != image.pixels_.size()) {
    throw Error(ErrorKind::kShape, fmt::format("expected {} samples for {}x{}x3, got {}",
                                               image.pixels_.size(), height, width,
                                               values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!in_unit_range(values[i])) {
      throw Error(ErrorKind::kValue,
                  fmt::format("sample {} = {} is outside [0, 1]", i, values[i]));
    }
  }
  image.pixels_.values() = std::move(values);
  return image;
}

Image Image::from_field_clamped(const Field& field) {
  Image image(field.height(), field.width());
  auto& out = image.pixels_.values();
  const auto& in = field.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    double v = std::isfinite(in[i]) ? in[i] : 0.0;
    out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return image;
}

void Image::set(int row, int col, int ch, float value) {
  if (!in_unit_range(value)) {
    throw Error(ErrorKind::kValue, fmt::format("pixel ({}, {}, {}) = {} is outside [0, 1]", row,
                                               col, ch, value));
  }
  pixels_(row, col, ch) = value;
}

Field Image::to_field() const {
  Field field(height(), width(), kChannels);
  std::copy(values().begin(), values().end(), field.values().begin());
  return field;
}

Region intersect(const Region& a, const Region& b) {
  int top = std::max(a.top, b.top);
  int left = std::max(a.left, b.left);
  int bottom = std::min(a.bottom(), b.bottom());
  int right = std::min(a.right(), b.right());
  if (bottom <= top || right <= left) return {top, left, 0, 0};
  return {top, left, bottom - top, right - left};
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double BinaryMask::area_fraction() const noexcept {
  if (bits_.empty()) return 0.0;
  return static_cast<double>(count()) / static_cast<double>(bits_.size());
}

double Heatmap::max() const noexcept {
  if (values.empty()) return 0.0;
  return *std::max_element(values.begin(), values.end());
}

void check_patch_fits(int image_h, int image_w, int patch_h, int patch_w, Position position) {
  if (position.row < 0 || position.row + patch_h > image_h) {
    throw Error(ErrorKind::kBounds,
                fmt::format("patch row {} (height {}) does not fit image height {}",
                            position.row, patch_h, image_h));
  }
  if (position.col < 0 || position.col + patch_w > image_w) {
    throw Error(ErrorKind::kBounds,
                fmt::format("patch col {} (width {}) does not fit image width {}", position.col,
                            patch_w, image_w));
  }
}

Image apply_patch(const Image& image, const Patch& patch) {
  check_patch_fits(image.height(), image.width(), patch.height(), patch.width(), patch.position);
  if (patch.shape &&
      (patch.shape->height() != patch.height() || patch.shape->width() != patch.width())) {
    throw Error(ErrorKind::kShape, "patch shape mask does not match patch dimensions");
  }
  Image out = image;
  for (int i = 0; i < patch.height(); ++i) {
    for (int j = 0; j < patch.width(); ++j) {
      if (!patch.covers(i, j)) continue;
      for (int ch = 0; ch < kChannels; ++ch) {
        out.set(patch.position.row + i, patch.position.col + j, ch, patch.pixels.at(i, j, ch));
      }
    }
  }
  return out;
}

}  // namespace patchbench
