// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "patchbench/rng.hpp"
#include "patchbench/synthetic.hpp"

namespace patchbench::testing {

Image random_image(int h, int w, std::uint64_t seed) {
  RngStream rng = derive_stream(seed, {0x6f7261636c65ULL});
  std::vector<float> v(static_cast<std::size_t>(h) * w * kChannels);
  for (float& x : v) x = static_cast<float>(rng.uniform());
  return Image::from_values(h, w, std::move(v));
}

double fd_input_gradient(const ToyDetector& detector, const Image& image, int label, int row,
                         int col, int ch, double step) {
  nn::Tensor x = image.to_field();
  for (double& v : x.values()) v -= detector.params().input_offset;
  nn::Tensor plus = x, minus = x;
  plus(row, col, ch) += step;
  minus(row, col, ch) -= step;
  const double lp = reference_cross_entropy(detector.params(), plus, label);
  const double lm = reference_cross_entropy(detector.params(), minus, label);
  return (lp - lm) / (2 * step);
}

double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0 ? 0 : std::abs(a - b) / scale;
}

namespace {

double swish(double v) { return v / (1 + std::exp(-v)); }

Tensor3<double> conv_loops(const Tensor3<double>& in, const nn::Conv2d& conv) {
  const int k = conv.kernel, s = conv.stride, p = conv.pad;
  const int oh = (in.height() + 2 * p - k) / s + 1;
  const int ow = (in.width() + 2 * p - k) / s + 1;
  Tensor3<double> out(oh, ow, conv.out_channels);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int co = 0; co < conv.out_channels; ++co) {
        double acc = conv.bias[co];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy * s + ky - p, ix = ox * s + kx - p;
            if (iy < 0 || ix < 0 || iy >= in.height() || ix >= in.width()) continue;
            for (int ci = 0; ci < conv.in_channels; ++ci) {
              const std::size_t row = static_cast<std::size_t>((ky * k + kx) * conv.in_channels + ci);
              acc += conv.weight[row * conv.out_channels + co] * in(iy, ix, ci);
            }
          }
        out(oy, ox, co) = swish(acc);
      }
  return out;
}

}  // namespace

std::vector<double> reference_logits(const ToyDetectorParams& params, const Tensor3<double>& input) {
  const Tensor3<double> a2 = conv_loops(conv_loops(input, params.conv1), params.conv2);
  const double beta = params.arch.pool_sharpness;
  const int n = a2.height() * a2.width();
  std::vector<double> pooled(a2.channels());
  for (int c = 0; c < a2.channels(); ++c) {
    double peak = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < a2.height(); ++r)
      for (int q = 0; q < a2.width(); ++q) peak = std::max(peak, a2(r, q, c));
    double sum = 0;
    for (int r = 0; r < a2.height(); ++r)
      for (int q = 0; q < a2.width(); ++q) sum += std::exp(beta * (a2(r, q, c) - peak));
    pooled[c] = peak + std::log(sum / n) / beta;
  }
  auto dense = [](const nn::Dense& d, const std::vector<double>& in) {
    std::vector<double> out(d.out_features);
    for (int o = 0; o < d.out_features; ++o) {
      double acc = d.bias[o];
      for (int i = 0; i < d.in_features; ++i) acc += in[i] * d.weight[static_cast<std::size_t>(i) * d.out_features + o];
      out[o] = acc;
    }
    return out;
  };
  std::vector<double> h = dense(params.fc1, pooled);
  for (double& v : h) v = swish(v);
  return dense(params.fc2, h);
}

double reference_cross_entropy(const ToyDetectorParams& params, const Tensor3<double>& input, int label) {
  const std::vector<double> z = reference_logits(params, input);
  // log(sum_j exp(z_j - z_y)) without cancelling against z_y.
  double rest = 0;
  for (std::size_t j = 0; j < z.size(); ++j)
    if (static_cast<int>(j) != label) rest += std::exp(z[j] - z[label]);
  return std::log1p(rest);
}

Tensor3<double> reference_conv2_features(const ToyDetectorParams& params, const Image& image) {
  Tensor3<double> x(image.height(), image.width(), kChannels);
  for (int r = 0; r < image.height(); ++r)
    for (int c = 0; c < image.width(); ++c)
      for (int ch = 0; ch < kChannels; ++ch)
        x(r, c, ch) = static_cast<double>(image.at(r, c, ch)) - params.input_offset;
  return conv_loops(conv_loops(x, params.conv1), params.conv2);
}

std::vector<double> power_iteration_saliency(const FeatureMaps& features, int iterations) {
  const auto& d = features.data;
  const int n = d.height() * d.width(), c = d.channels();
  std::vector<double> gram(static_cast<std::size_t>(c) * c, 0.0);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < c; ++a)
      for (int b = 0; b < c; ++b)
        gram[a * c + b] += d.values()[i * c + a] * d.values()[i * c + b];
  std::vector<double> v(c, 1.0 / std::sqrt(static_cast<double>(c)));
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> next(c, 0.0);
    for (int a = 0; a < c; ++a)
      for (int b = 0; b < c; ++b) next[a] += gram[a * c + b] * v[b];
    double norm = 0;
    for (double x : next) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0) break;
    double change = 0;
    for (int a = 0; a < c; ++a) {
      next[a] /= norm;
      change = std::max(change, std::abs(next[a] - v[a]));
    }
    v = next;
    if (change == 0) break;
  }
  std::vector<double> proj(n, 0.0);
  double peak = 0;
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < c; ++a) proj[i] += d.values()[i * c + a] * v[a];
    proj[i] = std::abs(proj[i]);
    peak = std::max(peak, proj[i]);
  }
  if (peak > 0)
    for (double& x : proj) x /= peak;
  return proj;
}

Position brute_force_placement(const Detector& detector, const Image& image, const Patch& patch,
                               const std::vector<Position>& positions, int true_class) {
  Position best{};
  double best_score = std::numeric_limits<double>::infinity();
  for (const Position& pos : positions) {
    Image out(image.height(), image.width());
    for (int r = 0; r < image.height(); ++r)
      for (int c = 0; c < image.width(); ++c)
        for (int ch = 0; ch < kChannels; ++ch) {
          const int pr = r - pos.row, pc = c - pos.col;
          const bool inside = pr >= 0 && pc >= 0 && pr < patch.height() && pc < patch.width() &&
                              patch.covers(pr, pc);
          out.set(r, c, ch, inside ? patch.pixels.at(pr, pc, ch) : image.at(r, c, ch));
        }
    const auto dets = detector.detect(out);
    double score = 0;
    if (!dets.empty()) {
      const auto top = std::max_element(dets.begin(), dets.end(), [](const auto& a, const auto& b) {
        return a.confidence < b.confidence;
      });
      score = top->class_id == true_class ? top->confidence : 0.0;
    }
    if (score < best_score) {
      best_score = score;
      best = pos;
    }
  }
  return best;
}

PlacementCase placement_case(std::uint64_t seed) {
  RngStream rng = derive_stream(seed, {0x706c6163ULL});
  PlacementCase pc;
  const int cls = rng.uniform_int(0, kShapeClassCount - 1);
  pc.image = render_shape(cls, 64, rng).image;
  pc.true_class = cls;
  const int side = rng.uniform_int(6, 16);
  pc.patch.pixels = random_image(side, side, seed ^ 0x9e3779b9ULL);
  const int stride = rng.uniform_int(2, 5);
  // Region extent that yields between 1 and 8 anchors per axis. A nonzero
  // remainder adds one last-fit anchor.
  auto extent = [&](int max_anchors) {
    const int n = rng.uniform_int(1, max_anchors);
    const int rem = n == max_anchors ? 0 : rng.uniform_int(0, stride - 1);
    return std::min(64, side + (n - 1) * stride + rem);
  };
  Region region;
  region.height = extent(8);
  region.width = extent(8);
  region.top = rng.uniform_int(0, 64 - region.height);
  region.left = rng.uniform_int(0, 64 - region.width);
  pc.grid = candidate_positions(region, side, side, stride);
  return pc;
}

}  // namespace patchbench::testing
