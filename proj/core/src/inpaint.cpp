// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// Fast-marching inpainting: unknown pixels are filled in order of their
// distance from the mask boundary, each from a weighted average of already
// known pixels within a radius.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>

#include <fmt/format.h>

#include "patchbench/defense.hpp"
#include "patchbench/error.hpp"

namespace patchbench {

namespace {

enum Flag : std::uint8_t { kKnown = 0, kBand = 1, kInside = 2 };

constexpr double kInf = std::numeric_limits<double>::infinity();

class Marcher {
 public:
  Marcher(const Image& image, const BinaryMask& mask, int radius)
      : h_(image.height()), w_(image.width()), radius_(radius),
        flag_(static_cast<std::size_t>(h_) * w_, kKnown),
        dist_(static_cast<std::size_t>(h_) * w_, 0.0),
        value_(image.to_field()) {
    for (int r = 0; r < h_; ++r)
      for (int c = 0; c < w_; ++c) {
        if (mask.at(r, c)) {
          flag_[idx(r, c)] = kInside;
          dist_[idx(r, c)] = kInf;
        }
      }
    for (int r = 0; r < h_; ++r)
      for (int c = 0; c < w_; ++c) {
        if (flag_[idx(r, c)] != kKnown) continue;
        if (inside(r - 1, c) || inside(r + 1, c) || inside(r, c - 1) || inside(r, c + 1)) {
          flag_[idx(r, c)] = kBand;
          heap_.emplace(0.0, idx(r, c));
        }
      }
  }

  void run() {
    const int dr[4] = {-1, 0, 1, 0};
    const int dc[4] = {0, -1, 0, 1};
    while (!heap_.empty()) {
      const std::size_t k = heap_.top().second;
      heap_.pop();
      flag_[k] = kKnown;
      const int r = static_cast<int>(k / w_);
      const int c = static_cast<int>(k % w_);
      for (int d = 0; d < 4; ++d) {
        const int nr = r + dr[d];
        const int nc = c + dc[d];
        if (!inside(nr, nc)) continue;
        const std::size_t nk = idx(nr, nc);
        dist_[nk] = std::min({solve(nr - 1, nc, nr, nc - 1), solve(nr + 1, nc, nr, nc - 1),
                              solve(nr - 1, nc, nr, nc + 1), solve(nr + 1, nc, nr, nc + 1)});
        fill(nr, nc);
        flag_[nk] = kBand;
        heap_.emplace(dist_[nk], nk);
      }
    }
  }

  const Field& values() const noexcept { return value_; }

 private:
  std::size_t idx(int r, int c) const noexcept { return static_cast<std::size_t>(r) * w_ + c; }
  bool in_bounds(int r, int c) const noexcept { return r >= 0 && r < h_ && c >= 0 && c < w_; }
  bool inside(int r, int c) const noexcept {
    return in_bounds(r, c) && flag_[idx(r, c)] == kInside;
  }
  bool settled(int r, int c) const noexcept {
    return in_bounds(r, c) && flag_[idx(r, c)] != kInside;
  }

  // Upwind solution of |grad T| = 1 from two axis neighbours.
  double solve(int r1, int c1, int r2, int c2) const {
    const bool a = settled(r1, c1);
    const bool b = settled(r2, c2);
    if (a && b) {
      const double t1 = dist_[idx(r1, c1)];
      const double t2 = dist_[idx(r2, c2)];
      const double diff = t1 - t2;
      if (std::abs(diff) < 1.0) {
        const double root = std::sqrt(2.0 - diff * diff);
        return (t1 + t2 + root) / 2.0;
      }
      return 1.0 + std::min(t1, t2);
    }
    if (a) return 1.0 + dist_[idx(r1, c1)];
    if (b) return 1.0 + dist_[idx(r2, c2)];
    return kInf;
  }

  double axis_gradient(int r, int c, int dr, int dc) const {
    const bool fwd = settled(r + dr, c + dc);
    const bool back = settled(r - dr, c - dc);
    const double here = dist_[idx(r, c)];
    if (fwd && back) return (dist_[idx(r + dr, c + dc)] - dist_[idx(r - dr, c - dc)]) / 2.0;
    if (fwd) return dist_[idx(r + dr, c + dc)] - here;
    if (back) return here - dist_[idx(r - dr, c - dc)];
    return 0.0;
  }

  void fill(int r, int c) {
    const double gy = axis_gradient(r, c, 1, 0);
    const double gx = axis_gradient(r, c, 0, 1);
    const double t = dist_[idx(r, c)];
    double acc[kChannels] = {0, 0, 0};
    double total = 0;
    for (int qr = r - radius_; qr <= r + radius_; ++qr)
      for (int qc = c - radius_; qc <= c + radius_; ++qc) {
        if (!settled(qr, qc)) continue;
        const double ry = r - qr;
        const double rx = c - qc;
        const double len2 = ry * ry + rx * rx;
        if (len2 == 0 || len2 > static_cast<double>(radius_) * radius_) continue;
        const double len = std::sqrt(len2);
        double direction = (ry * gy + rx * gx) / len;
        if (std::abs(direction) <= 0.01) direction = 1e-6;
        const double distance = 1.0 / (len2 * len);
        const double level = 1.0 / (1.0 + std::abs(dist_[idx(qr, qc)] - t));
        const double weight = std::abs(direction * distance * level);
        total += weight;
        for (int ch = 0; ch < kChannels; ++ch) acc[ch] += weight * value_(qr, qc, ch);
      }
    for (int ch = 0; ch < kChannels; ++ch) value_(r, c, ch) = total > 0 ? acc[ch] / total : 0.0;
  }

  using Entry = std::pair<double, std::size_t>;
  int h_, w_, radius_;
  std::vector<std::uint8_t> flag_;
  std::vector<double> dist_;
  Field value_;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> heap_;
};

}  // namespace

Image inpaint(const Image& image, const BinaryMask& mask, int radius) {
  if (mask.height() != image.height() || mask.width() != image.width()) {
    throw Error(ErrorKind::kShape, fmt::format("mask {}x{} does not match image {}x{}",
                                               mask.height(), mask.width(), image.height(),
                                               image.width()));
  }
  if (radius < 1) throw Error(ErrorKind::kValue, fmt::format("inpaint radius {} < 1", radius));
  const std::size_t masked = mask.count();
  if (masked == 0) return image;
  if (masked == mask.bits().size()) {
    throw Error(ErrorKind::kInpaint, "mask covers the whole image; nothing to propagate from");
  }
  Marcher marcher(image, mask, radius);
  marcher.run();
  std::vector<float> out = image.values();
  const Field& filled = marcher.values();
  for (int r = 0; r < image.height(); ++r)
    for (int c = 0; c < image.width(); ++c) {
      if (!mask.at(r, c)) continue;
      for (int ch = 0; ch < kChannels; ++ch) {
        const std::size_t k = (static_cast<std::size_t>(r) * image.width() + c) * kChannels + ch;
        out[k] = static_cast<float>(std::clamp(filled(r, c, ch), 0.0, 1.0));
      }
    }
  return Image::from_values(image.height(), image.width(), std::move(out));
}

}  // namespace patchbench
