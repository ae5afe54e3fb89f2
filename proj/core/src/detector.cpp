// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "patchbench/error.hpp"
#include "patchbench/rng.hpp"
#include "patchbench/synthetic.hpp"

namespace patchbench {

std::vector<double> Detector::class_probabilities(const Image&) const {
  throw Error(ErrorKind::kCapability, "detector does not expose class probabilities");
}

LossGradient Detector::cross_entropy_gradient(const Image&, int) const {
  throw Error(ErrorKind::kCapability, "detector does not expose input gradients");
}

Field Detector::input_gradient(const Image& image, int label, AttackMode) const {
  if (!capabilities().has_gradients) {
    throw Error(ErrorKind::kCapability, "detector does not expose input gradients");
  }
  return cross_entropy_gradient(image, label).gradient;
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<std::vector<double>*> ToyDetectorParams::arrays() {
  return {&conv1.weight, &conv1.bias, &conv2.weight, &conv2.bias,
          &fc1.weight,   &fc1.bias,   &fc2.weight,   &fc2.bias};
}

std::vector<const std::vector<double>*> ToyDetectorParams::arrays() const {
  return {&conv1.weight, &conv1.bias, &conv2.weight, &conv2.bias,
          &fc1.weight,   &fc1.bias,   &fc2.weight,   &fc2.bias};
}

bool ToyDetectorParams::all_finite() const {
  for (const auto* a : arrays())
    for (double v : *a)
      if (!std::isfinite(v)) return false;
  return true;
}

ToyDetectorParams zero_toy_params(const ToyArchitecture& arch) {
  if (arch.input_size < 4 || arch.input_size % 4 != 0 || arch.kernel < 1 || arch.kernel % 2 == 0) {
    throw Error(ErrorKind::kConfig,
                "toy detector needs an input size divisible by 4 and an odd kernel");
  }
  ToyDetectorParams p;
  p.arch = arch;
  const int pad = arch.kernel / 2;
  p.conv1 = nn::Conv2d::make(kChannels, arch.conv1_channels, arch.kernel, 2, pad);
  p.conv2 = nn::Conv2d::make(arch.conv1_channels, arch.conv2_channels, arch.kernel, 2, pad);
  p.fc1 = nn::Dense::make(arch.conv2_channels, arch.hidden);
  p.fc2 = nn::Dense::make(arch.hidden, arch.class_count);
  return p;
}

ToyDetectorParams init_toy_params(const ToyArchitecture& arch, std::uint64_t seed) {
  ToyDetectorParams p = zero_toy_params(arch);
  p.seed = seed;
  p.input_offset = 0.5;
  RngStream rng = derive_stream(seed, {0x70617261ULL});
  nn::he_init(p.conv1, rng);
  nn::he_init(p.conv2, rng);
  nn::he_init(p.fc1, rng);
  nn::he_init(p.fc2, rng);
  return p;
}

namespace {
constexpr char kMagic[8] = {'P', 'B', 'T', 'O', 'Y', '0', '0', '1'};
}

void save_toy_params(const ToyDetectorParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::int32_t dims[6] = {params.arch.input_size, params.arch.kernel,
                                params.arch.conv1_channels,
                                params.arch.conv2_channels, params.arch.hidden,
                                params.arch.class_count};
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(&params.seed), sizeof params.seed);
  out.write(reinterpret_cast<const char*>(&params.arch.pool_sharpness),
            sizeof params.arch.pool_sharpness);
  out.write(reinterpret_cast<const char*>(&params.input_offset), sizeof params.input_offset);
  for (const auto* a : params.arrays()) nn::write_doubles(out, *a);
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

ToyDetectorParams load_toy_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + sizeof magic, kMagic)) {
    throw Error(ErrorKind::kFormat, path.string() + " is not a toy detector parameter file");
  }
  std::int32_t dims[6];
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  ToyArchitecture arch{dims[0], dims[1], dims[2], dims[3], dims[4], dims[5]};
  ToyDetectorParams params = zero_toy_params(arch);
  in.read(reinterpret_cast<char*>(&params.seed), sizeof params.seed);
  in.read(reinterpret_cast<char*>(&params.arch.pool_sharpness), sizeof params.arch.pool_sharpness);
  in.read(reinterpret_cast<char*>(&params.input_offset), sizeof params.input_offset);
  for (auto* a : params.arrays()) nn::read_doubles(in, *a);
  return params;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ToyDetector::Forward {
  nn::Tensor z1, a1, z2, a2;
  std::vector<double> pooled, h_pre, h, logits, probs;
};

ToyDetector::ToyDetector(ToyDetectorParams params) : params_(std::move(params)) {
  if (!params_.all_finite()) throw Error(ErrorKind::kNumeric, "toy detector has non-finite params");
}

Capabilities ToyDetector::capabilities() const {
  return {true, true, params_.arch.class_count};
}

nn::Tensor ToyDetector::check_input(const Image& image) const {
  const int size = params_.arch.input_size;
  if (image.height() != size || image.width() != size) {
    throw Error(ErrorKind::kShape, fmt::format("toy detector expects {}x{} input, got {}x{}",
                                               size, size, image.height(), image.width()));
  }
  nn::Tensor input = image.to_field();
  for (double& v : input.values()) v -= params_.input_offset;
  return input;
}

ToyDetector::Forward ToyDetector::run(const nn::Tensor& input) const {
  Forward f;
  f.z1 = params_.conv1.forward(input);
  f.a1 = nn::silu(f.z1);
  f.z2 = params_.conv2.forward(f.a1);
  f.a2 = nn::silu(f.z2);
  f.pooled = nn::global_lse_pool(f.a2, params_.arch.pool_sharpness);
  f.h_pre = params_.fc1.forward(f.pooled);
  f.h = nn::silu(f.h_pre);
  f.logits = params_.fc2.forward(f.h);
  f.probs = nn::softmax(f.logits);
  return f;
}

namespace {

double cross_entropy(const std::vector<double>& probs, int label) {
  return -std::log(std::max(probs[label], 1e-300));
}

// Backpropagates dL/dlogits through the network. Parameter gradients land in
// `grad`; returns dL/dinput.
nn::Tensor backprop(const ToyDetectorParams& p, const nn::Tensor& input,
                    const std::vector<double>& dlogits, const nn::Tensor& z1,
                    const nn::Tensor& a1, const nn::Tensor& z2, const nn::Tensor& a2,
                    const std::vector<double>& pooled, const std::vector<double>& h_pre, const std::vector<double>& h,
                    ToyDetectorParams& grad) {
  std::vector<double> dh = p.fc2.backward(h, dlogits, grad.fc2);
  std::vector<double> dh_pre = nn::silu_backward(h_pre, dh);
  std::vector<double> dpooled = p.fc1.backward(pooled, dh_pre, grad.fc1);
  nn::Tensor da2 = nn::global_lse_pool_backward(a2, p.arch.pool_sharpness, dpooled);
  nn::Tensor dz2 = nn::silu_backward(z2, da2);
  nn::Tensor da1 = p.conv2.backward(a1, dz2, grad.conv2);
  nn::Tensor dz1 = nn::silu_backward(z1, da1);
  return p.conv1.backward(input, dz1, grad.conv1);
}

}  // namespace

std::vector<double> ToyDetector::class_probabilities(const Image& image) const {
  return run(check_input(image)).probs;
}

std::vector<Detection> ToyDetector::detect(const Image& image) const {
  Forward f = run(check_input(image));
  const int best = static_cast<int>(std::max_element(f.probs.begin(), f.probs.end()) -
                                    f.probs.begin());
  // Box = extent of feature cells whose channel-summed activation reaches
  // half of the peak, mapped back through the total stride.
  const nn::Tensor& a = f.a2;
  std::vector<double> energy(static_cast<std::size_t>(a.height()) * a.width(), 0.0);
  for (int r = 0; r < a.height(); ++r)
    for (int c = 0; c < a.width(); ++c)
      for (int ch = 0; ch < a.channels(); ++ch) energy[r * a.width() + c] += a(r, c, ch);
  const double peak = *std::max_element(energy.begin(), energy.end());
  const double stride = static_cast<double>(image.height()) / a.height();
  BoundingBox box{0, 0, static_cast<double>(image.width()), static_cast<double>(image.height())};
  if (peak > 0) {
    int top = a.height(), left = a.width(), bottom = -1, right = -1;
    for (int r = 0; r < a.height(); ++r)
      for (int c = 0; c < a.width(); ++c)
        if (energy[r * a.width() + c] >= 0.5 * peak) {
          top = std::min(top, r);
          left = std::min(left, c);
          bottom = std::max(bottom, r);
          right = std::max(right, c);
        }
    box = {left * stride, top * stride, (right - left + 1) * stride, (bottom - top + 1) * stride};
  }
  return {Detection{best, f.probs[best], box}};
}

FeatureMaps ToyDetector::feature_maps(const Image& image, std::string_view layer_id) const {
  if (layer_id != kConv1 && layer_id != kConv2) {
    throw Error(ErrorKind::kLookup, fmt::format("toy detector has no layer '{}'", layer_id));
  }
  nn::Tensor input = check_input(image);
  nn::Tensor a1 = nn::silu(params_.conv1.forward(input));
  if (layer_id == kConv1) return {std::string(layer_id), std::move(a1)};
  return {std::string(layer_id), nn::silu(params_.conv2.forward(a1))};
}

LossGradient ToyDetector::cross_entropy_gradient(const Image& image, int label) const {
  if (label < 0 || label >= params_.arch.class_count) {
    throw Error(ErrorKind::kLookup, fmt::format("label {} out of range", label));
  }
  nn::Tensor input = check_input(image);
  Forward f = run(input);
  std::vector<double> dlogits = f.probs;
  dlogits[label] -= 1.0;
  ToyDetectorParams scratch = zero_toy_params(params_.arch);
  LossGradient out;
  out.cross_entropy = cross_entropy(f.probs, label);
  out.gradient = backprop(params_, input, dlogits, f.z1, f.a1, f.z2, f.a2, f.pooled,
                          f.h_pre, f.h, scratch);
  out.probabilities = std::move(f.probs);
  return out;
}

double ToyDetector::accumulate_parameter_gradient(const nn::Tensor& input, int label,
                                                  ToyDetectorParams& grad) const {
  Forward f = run(input);
  std::vector<double> dlogits = f.probs;
  dlogits[label] -= 1.0;
  backprop(params_, input, dlogits, f.z1, f.a1, f.z2, f.a2, f.pooled, f.h_pre, f.h, grad);
  return cross_entropy(f.probs, label);
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Pastes a square of uniform noise covering up to `max_fraction` of the input.
void occlude(nn::Tensor& x, const ToyTrainingConfig& config, double offset, RngStream& rng) {
  const double fraction = rng.uniform(0.0, config.occlusion_max_fraction);
  const int side = std::max(1, static_cast<int>(std::sqrt(fraction * x.height() * x.width())));
  const int top = rng.uniform_int(0, x.height() - side);
  const int left = rng.uniform_int(0, x.width() - side);
  for (int i = top; i < top + side; ++i)
    for (int j = left; j < left + side; ++j)
      for (int c = 0; c < x.channels(); ++c) x(i, j, c) = rng.uniform() - offset;
}

}  // namespace

ToyDetectorParams train_toy_detector(const ToyTrainingConfig& config) {
  if (config.per_class < 1) throw Error(ErrorKind::kData, "empty training corpus");
  std::vector<ShapeSample> corpus =
      make_shape_corpus(config.per_class, config.arch.input_size, config.seed, kTrainCorpusTag);
  std::vector<nn::Tensor> inputs;
  inputs.reserve(corpus.size());
  ToyDetectorParams params = init_toy_params(config.arch, config.seed);
  for (const auto& s : corpus) {
    inputs.push_back(s.image.to_field());
    for (double& v : inputs.back().values()) v -= params.input_offset;
  }

  nn::Adam adam(config.learning_rate);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream shuffle_rng = derive_stream(config.seed, {0x73687566ULL});

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(
                                  shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);
    }
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      ToyDetector model(params);
      ToyDetectorParams grad = zero_toy_params(config.arch);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        if (config.occlusion_probability > 0) {
          RngStream aug = derive_stream(config.seed, {0x6f63636cULL, static_cast<std::uint64_t>(epoch), idx});
          if (aug.uniform() < config.occlusion_probability) {
            nn::Tensor x = inputs[idx];
            occlude(x, config, params.input_offset, aug);
            model.accumulate_parameter_gradient(x, corpus[idx].class_id, grad);
            continue;
          }
        }
        model.accumulate_parameter_gradient(inputs[idx], corpus[idx].class_id, grad);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (auto* a : grad.arrays())
        for (double& v : *a) v *= scale;
      adam.step(params.arrays(), std::as_const(grad).arrays());
    }
  }
  return params;
}

}  // namespace patchbench
