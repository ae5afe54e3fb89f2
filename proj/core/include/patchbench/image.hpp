// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// Domain types shared by every stage of the pipeline: images, patches,
// detections, masks, heatmaps and rectangular regions.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace patchbench {

inline constexpr int kChannels = 3;

// Dense row-major height x width x channels array.
template <class T>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int height, int width, int channels, T fill = T{})
      : height_(height), width_(width), channels_(channels),
        values_(static_cast<std::size_t>(height) * width * channels, fill) {}

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::size_t index(int row, int col, int ch) const noexcept {
    return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
  }
  T& operator()(int row, int col, int ch) noexcept { return values_[index(row, col, ch)]; }
  const T& operator()(int row, int col, int ch) const noexcept {
    return values_[index(row, col, ch)];
  }

  std::vector<T>& values() noexcept { return values_; }
  const std::vector<T>& values() const noexcept { return values_; }

  bool same_shape(const Tensor3& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<T> values_;
};

// Unconstrained real-valued H x W x 3 field (diffusion states, gradients).
using Field = Tensor3<double>;

// RGB image with every sample in [0, 1]. Stored as float32 so that raw
// sidecars and wire payloads reproduce it bit-exactly.
class Image {
 public:
  Image() = default;
  // All-zero image. Throws kValue if either dimension is < 1.
  Image(int height, int width);

  // Validates dimensions, size and range.
  static Image from_values(int height, int width, std::vector<float> values);
  // Clamps every sample into [0, 1].
  static Image from_field_clamped(const Field& field);

  int height() const noexcept { return pixels_.height(); }
  int width() const noexcept { return pixels_.width(); }
  float at(int row, int col, int ch) const noexcept { return pixels_(row, col, ch); }
  // Throws kValue when value is outside [0, 1] or not finite.
  void set(int row, int col, int ch, float value);

  const std::vector<float>& values() const noexcept { return pixels_.values(); }
  Field to_field() const;
  bool same_shape(const Image& other) const noexcept {
    return height() == other.height() && width() == other.width();
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  Tensor3<float> pixels_;
};

struct Position {
  int row = 0;
  int col = 0;
  friend bool operator==(const Position&, const Position&) = default;
};

struct Region {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  int bottom() const noexcept { return top + height; }  // exclusive
  int right() const noexcept { return left + width; }   // exclusive
  bool empty() const noexcept { return height <= 0 || width <= 0; }
  friend bool operator==(const Region&, const Region&) = default;
};

Region intersect(const Region& a, const Region& b);

struct BoundingBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Detection {
  int class_id = 0;
  double confidence = 0;
  BoundingBox bbox;
  friend bool operator==(const Detection&, const Detection&) = default;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, bool fill = false)
      : height_(height), width_(width),
        bits_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {}

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool at(int row, int col) const noexcept {
    return bits_[static_cast<std::size_t>(row) * width_ + col] != 0;
  }
  void set(int row, int col, bool value) noexcept {
    bits_[static_cast<std::size_t>(row) * width_ + col] = value ? 1 : 0;
  }
  std::size_t count() const noexcept;
  bool any() const noexcept { return count() > 0; }
  double area_fraction() const noexcept;
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Saliency map with values in [0, 1]; max is 1 unless the map is all zero.
struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int row, int col) const noexcept {
    return values[static_cast<std::size_t>(row) * width + col];
  }
  double max() const noexcept;
};

// A perturbation placed with its top-left corner at `position`.
struct Patch {
  Image pixels;
  std::optional<BinaryMask> shape;  // absent means a full rectangle
  Position position;

  int height() const noexcept { return pixels.height(); }
  int width() const noexcept { return pixels.width(); }
  bool covers(int row, int col) const noexcept { return !shape || shape->at(row, col); }
  Region rect() const noexcept { return {position.row, position.col, height(), width()}; }
};

// Pastes the patch into a copy of the image. Throws kBounds when the patch
// rectangle does not fit inside the image at its position.
Image apply_patch(const Image& image, const Patch& patch);

// Throws kBounds naming the offending coordinate when the patch rectangle
// does not fit at `position`.
void check_patch_fits(int image_h, int image_w, int patch_h, int patch_w, Position position);

}  // namespace patchbench
