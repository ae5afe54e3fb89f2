// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "patchbench/defense.hpp"
#include "patchbench/error.hpp"
#include "patchbench/synthetic.hpp"

namespace patchbench {

namespace {

constexpr char kMagic[8] = {'P', 'B', 'S', 'E', 'G', '0', '0', '1'};
constexpr double kBceClamp = 1e-7;

}  // namespace

std::vector<std::vector<double>*> SegmenterParams::arrays() {
  return {&enc1.weight, &enc1.bias, &enc2.weight, &enc2.bias, &bottleneck.weight,
          &bottleneck.bias, &dec2.weight, &dec2.bias, &dec1.weight, &dec1.bias,
          &head.weight, &head.bias};
}

std::vector<const std::vector<double>*> SegmenterParams::arrays() const {
  return {&enc1.weight, &enc1.bias, &enc2.weight, &enc2.bias, &bottleneck.weight,
          &bottleneck.bias, &dec2.weight, &dec2.bias, &dec1.weight, &dec1.bias,
          &head.weight, &head.bias};
}

bool SegmenterParams::all_finite() const {
  for (const auto* a : arrays())
    for (double v : *a)
      if (!std::isfinite(v)) return false;
  return true;
}

SegmenterParams zero_segmenter_like(const SegmenterParams& params) {
  SegmenterParams z = params;
  for (auto* a : z.arrays()) std::fill(a->begin(), a->end(), 0.0);
  return z;
}

SegmenterParams init_segmenter(std::uint64_t seed) {
  SegmenterParams p;
  p.enc1 = nn::Conv2d::make(3, 4, 3, 1, 1);
  p.enc2 = nn::Conv2d::make(4, 8, 3, 2, 1);
  p.bottleneck = nn::Conv2d::make(8, 8, 3, 2, 1);
  p.dec2 = nn::Conv2d::make(16, 8, 3, 1, 1);
  p.dec1 = nn::Conv2d::make(12, 4, 3, 1, 1);
  p.head = nn::Conv2d::make(4, 1, 1, 1, 0);
  p.seed = seed;
  RngStream rng = derive_stream(seed, {0x7365676dULL});
  for (nn::Conv2d* c : {&p.enc1, &p.enc2, &p.bottleneck, &p.dec2, &p.dec1, &p.head}) {
    nn::he_init(*c, rng);
  }
  return p;
}

void save_segmenter(const SegmenterParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&params.seed), sizeof params.seed);
  out.write(reinterpret_cast<const char*>(&params.input_offset), sizeof params.input_offset);
  const std::uint8_t trained = params.trained ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&trained), 1);
  for (const auto* a : params.arrays()) nn::write_doubles(out, *a);
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

SegmenterParams load_segmenter(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + sizeof magic, kMagic)) {
    throw Error(ErrorKind::kFormat, path.string() + " is not a segmenter parameter file");
  }
  SegmenterParams params = init_segmenter(0);
  in.read(reinterpret_cast<char*>(&params.seed), sizeof params.seed);
  in.read(reinterpret_cast<char*>(&params.input_offset), sizeof params.input_offset);
  std::uint8_t trained = 0;
  in.read(reinterpret_cast<char*>(&trained), 1);
  params.trained = trained != 0;
  for (auto* a : params.arrays()) nn::read_doubles(in, *a);
  if (!params.all_finite()) throw Error(ErrorKind::kNumeric, path.string() + " holds non-finite values");
  return params;
}

namespace {

struct SegForward {
  nn::Tensor x;
  nn::Tensor z1, e1, z2, e2, zb, b, u2, c2, zd2, d2, u1, c1, zd1, d1, logit;
};

// Centred input, zero-padded to multiples of 4.
nn::Tensor prepare_input(const SegmenterParams& params, const Image& image) {
  const int h = (image.height() + 3) / 4 * 4;
  const int w = (image.width() + 3) / 4 * 4;
  nn::Tensor x(h, w, kChannels, 0.0);
  for (int i = 0; i < image.height(); ++i)
    for (int j = 0; j < image.width(); ++j)
      for (int c = 0; c < kChannels; ++c) x(i, j, c) = image.at(i, j, c) - params.input_offset;
  return x;
}

SegForward forward(const SegmenterParams& p, nn::Tensor x) {
  SegForward f;
  f.x = std::move(x);
  f.z1 = p.enc1.forward(f.x);
  f.e1 = nn::silu(f.z1);
  f.z2 = p.enc2.forward(f.e1);
  f.e2 = nn::silu(f.z2);
  f.zb = p.bottleneck.forward(f.e2);
  f.b = nn::silu(f.zb);
  f.u2 = nn::upsample2(f.b);
  f.c2 = nn::concat_channels(f.u2, f.e2);
  f.zd2 = p.dec2.forward(f.c2);
  f.d2 = nn::silu(f.zd2);
  f.u1 = nn::upsample2(f.d2);
  f.c1 = nn::concat_channels(f.u1, f.e1);
  f.zd1 = p.dec1.forward(f.c1);
  f.d1 = nn::silu(f.zd1);
  f.logit = p.head.forward(f.d1);
  return f;
}

void backward(const SegmenterParams& p, const SegForward& f, const nn::Tensor& dlogit,
              SegmenterParams& g) {
  nn::Tensor dd1 = p.head.backward(f.d1, dlogit, g.head);
  nn::Tensor dzd1 = nn::silu_backward(f.zd1, dd1);
  nn::Tensor dc1 = p.dec1.backward(f.c1, dzd1, g.dec1);
  nn::Tensor du1, de1_skip;
  nn::split_channels(dc1, f.u1.channels(), du1, de1_skip);
  nn::Tensor dd2 = nn::upsample2_backward(du1);
  nn::Tensor dzd2 = nn::silu_backward(f.zd2, dd2);
  nn::Tensor dc2 = p.dec2.backward(f.c2, dzd2, g.dec2);
  nn::Tensor du2, de2_skip;
  nn::split_channels(dc2, f.u2.channels(), du2, de2_skip);
  nn::Tensor db = nn::upsample2_backward(du2);
  nn::Tensor dzb = nn::silu_backward(f.zb, db);
  nn::Tensor de2 = p.bottleneck.backward(f.e2, dzb, g.bottleneck);
  for (std::size_t i = 0; i < de2.values().size(); ++i) de2.values()[i] += de2_skip.values()[i];
  nn::Tensor dz2 = nn::silu_backward(f.z2, de2);
  nn::Tensor de1 = p.enc2.backward(f.e1, dz2, g.enc2);
  for (std::size_t i = 0; i < de1.values().size(); ++i) de1.values()[i] += de1_skip.values()[i];
  nn::Tensor dz1 = nn::silu_backward(f.z1, de1);
  p.enc1.backward(f.x, dz1, g.enc1);
}

}  // namespace

ProbabilityMap segment(const SegmenterParams& params, const Image& image) {
  const SegForward f = forward(params, prepare_input(params, image));
  ProbabilityMap out{image.height(), image.width(), {}};
  out.values.resize(static_cast<std::size_t>(image.height()) * image.width());
  for (int i = 0; i < image.height(); ++i)
    for (int j = 0; j < image.width(); ++j) {
      out.values[static_cast<std::size_t>(i) * image.width() + j] = nn::sigmoid(f.logit(i, j, 0));
    }
  return out;
}

double bce_loss(const std::vector<double>& pred, const std::vector<std::uint8_t>& truth) {
  if (pred.size() != truth.size()) {
    throw Error(ErrorKind::kShape,
                fmt::format("bce: {} predictions for {} labels", pred.size(), truth.size()));
  }
  if (pred.empty()) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred[i], kBceClamp, 1.0 - kBceClamp);
    sum += truth[i] ? std::log(p) : std::log1p(-p);
  }
  return -sum / static_cast<double>(pred.size());
}

double bce_loss(const ProbabilityMap& pred, const BinaryMask& truth) {
  if (pred.height != truth.height() || pred.width != truth.width()) {
    throw Error(ErrorKind::kShape, fmt::format("bce: {}x{} map vs {}x{} mask", pred.height,
                                               pred.width, truth.height(), truth.width()));
  }
  return bce_loss(pred.values, truth.bits());
}

std::vector<SegmenterSample> make_segmenter_corpus(int count, int size, std::uint64_t seed,
                                                   std::uint64_t tag) {
  std::vector<SegmenterSample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    RngStream rng = derive_stream(seed, {0x73636f72ULL, tag, static_cast<std::uint64_t>(i)});
    ShapeSample shape = render_shape(i % kShapeClassCount, size, rng);
    BinaryMask truth(size, size);
    if (i % 4 == 3) {
      out.push_back({std::move(shape.image), std::move(truth)});
      continue;
    }
    const double fraction = rng.uniform(0.01, 0.25);
    const int side = std::max(2, static_cast<int>(std::sqrt(fraction * size * size)));
    const int top = rng.uniform_int(0, size - side);
    const int left = rng.uniform_int(0, size - side);
    const int style = rng.uniform_int(0, 2);
    // Styles: uniform noise, saturated 0/1 noise, 2x2 block noise.
    std::vector<float> values(static_cast<std::size_t>(side) * side * kChannels);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c)
        for (int ch = 0; ch < kChannels; ++ch) {
          const std::size_t k = (static_cast<std::size_t>(r) * side + c) * kChannels + ch;
          if (style == 2 && (r % 2 != 0 || c % 2 != 0)) {
            values[k] = values[(static_cast<std::size_t>(r - r % 2) * side + (c - c % 2)) * kChannels + ch];
          } else if (style == 1) {
            values[k] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
          } else {
            values[k] = static_cast<float>(rng.uniform());
          }
        }
    Patch patch{Image::from_values(side, side, std::move(values)), std::nullopt, {top, left}};
    for (int r = top; r < top + side; ++r)
      for (int c = left; c < left + side; ++c) truth.set(r, c, true);
    out.push_back({apply_patch(shape.image, patch), std::move(truth)});
  }
  return out;
}

SegmenterParams train_segmenter(const std::vector<SegmenterSample>& dataset,
                                const SegmenterTrainingConfig& config) {
  if (dataset.empty()) throw Error(ErrorKind::kData, "segmenter training set is empty");
  for (const auto& s : dataset) {
    if (s.truth.height() != s.image.height() || s.truth.width() != s.image.width()) {
      throw Error(ErrorKind::kShape, "segmenter sample mask does not match its image");
    }
  }
  SegmenterParams params = init_segmenter(config.seed);
  nn::Adam adam(config.learning_rate);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream shuffle_rng = derive_stream(config.seed, {0x73687566ULL, 0x736567ULL});
  const std::size_t batch = static_cast<std::size_t>(std::max(config.batch_size, 1));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(
                                  shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);
    }
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      SegmenterParams grad = zero_segmenter_like(params);
      for (std::size_t k = start; k < end; ++k) {
        const SegmenterSample& s = dataset[order[k]];
        const SegForward f = forward(params, prepare_input(params, s.image));
        nn::Tensor dlogit(f.logit.height(), f.logit.width(), 1, 0.0);
        const double n = static_cast<double>(s.image.height()) * s.image.width();
        for (int i = 0; i < s.image.height(); ++i)
          for (int j = 0; j < s.image.width(); ++j) {
            const double p = nn::sigmoid(f.logit(i, j, 0));
            dlogit(i, j, 0) = (p - (s.truth.at(i, j) ? 1.0 : 0.0)) / n;
          }
        backward(params, f, dlogit, grad);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto* a : grad.arrays())
        for (double& v : *a) v *= scale;
      adam.step(params.arrays(), std::as_const(grad).arrays());
    }
  }
  params.trained = config.epochs > 0;
  return params;
}

namespace {

// 4-connected components of `mask`, as lists of flat indices.
std::vector<std::vector<std::size_t>> components(const BinaryMask& mask) {
  const int h = mask.height();
  const int w = mask.width();
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(h) * w, 0);
  std::vector<std::vector<std::size_t>> out;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t start = static_cast<std::size_t>(r) * w + c;
      if (!mask.at(r, c) || seen[start]) continue;
      std::vector<std::size_t> comp;
      std::deque<std::size_t> queue{start};
      seen[start] = 1;
      while (!queue.empty()) {
        const std::size_t k = queue.front();
        queue.pop_front();
        comp.push_back(k);
        const int kr = static_cast<int>(k / w);
        const int kc = static_cast<int>(k % w);
        const int dr[4] = {-1, 1, 0, 0};
        const int dc[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int nr = kr + dr[d];
          const int nc = kc + dc[d];
          if (nr < 0 || nr >= h || nc < 0 || nc >= w || !mask.at(nr, nc)) continue;
          const std::size_t nk = static_cast<std::size_t>(nr) * w + nc;
          if (seen[nk]) continue;
          seen[nk] = 1;
          queue.push_back(nk);
        }
      }
      out.push_back(std::move(comp));
    }
  return out;
}

BinaryMask dilate3x3(const BinaryMask& in) {
  BinaryMask out(in.height(), in.width());
  for (int r = 0; r < in.height(); ++r)
    for (int c = 0; c < in.width(); ++c) {
      bool hit = false;
      for (int dr = -1; dr <= 1 && !hit; ++dr)
        for (int dc = -1; dc <= 1 && !hit; ++dc) {
          const int nr = r + dr;
          const int nc = c + dc;
          hit = nr >= 0 && nr < in.height() && nc >= 0 && nc < in.width() && in.at(nr, nc);
        }
      out.set(r, c, hit);
    }
  return out;
}

// Background pixels not 4-connected to the border become foreground.
BinaryMask fill_holes(const BinaryMask& in) {
  const int h = in.height();
  const int w = in.width();
  std::vector<std::uint8_t> outside(static_cast<std::size_t>(h) * w, 0);
  std::deque<std::pair<int, int>> queue;
  auto seed = [&](int r, int c) {
    const std::size_t k = static_cast<std::size_t>(r) * w + c;
    if (in.at(r, c) || outside[k]) return;
    outside[k] = 1;
    queue.emplace_back(r, c);
  };
  for (int r = 0; r < h; ++r) {
    seed(r, 0);
    seed(r, w - 1);
  }
  for (int c = 0; c < w; ++c) {
    seed(0, c);
    seed(h - 1, c);
  }
  while (!queue.empty()) {
    const auto [r, c] = queue.front();
    queue.pop_front();
    if (r > 0) seed(r - 1, c);
    if (r + 1 < h) seed(r + 1, c);
    if (c > 0) seed(r, c - 1);
    if (c + 1 < w) seed(r, c + 1);
  }
  BinaryMask out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out.set(r, c, !outside[static_cast<std::size_t>(r) * w + c]);
  return out;
}

}  // namespace

BinaryMask shape_complete(const ProbabilityMap& prob, double threshold,
                          const ShapeCompletionConfig& config) {
  if (!(threshold > 0 && threshold < 1)) {
    throw Error(ErrorKind::kValue, fmt::format("binarize threshold {} outside (0, 1)", threshold));
  }
  BinaryMask binary(prob.height, prob.width);
  for (int r = 0; r < prob.height; ++r)
    for (int c = 0; c < prob.width; ++c) binary.set(r, c, prob.at(r, c) >= threshold);
  BinaryMask kept(prob.height, prob.width);
  for (const auto& comp : components(binary)) {
    if (static_cast<int>(comp.size()) < config.min_component) continue;
    for (std::size_t k : comp) {
      kept.set(static_cast<int>(k / prob.width), static_cast<int>(k % prob.width), true);
    }
  }
  if (!kept.any()) return kept;
  for (int i = 0; i < config.dilation_iterations; ++i) kept = dilate3x3(kept);
  return fill_holes(kept);
}

Image remove_patch(const Image& image, const BinaryMask& mask) {
  if (mask.height() != image.height() || mask.width() != image.width()) {
    throw Error(ErrorKind::kShape, fmt::format("mask {}x{} does not match image {}x{}",
                                               mask.height(), mask.width(), image.height(),
                                               image.width()));
  }
  std::vector<float> values = image.values();
  for (int r = 0; r < image.height(); ++r)
    for (int c = 0; c < image.width(); ++c) {
      if (!mask.at(r, c)) continue;
      for (int ch = 0; ch < kChannels; ++ch) {
        values[(static_cast<std::size_t>(r) * image.width() + c) * kChannels + ch] = 0.0f;
      }
    }
  return Image::from_values(image.height(), image.width(), std::move(values));
}

}  // namespace patchbench
