// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "patchbench/image.hpp"
#include "patchbench/nn.hpp"

namespace patchbench {

enum class DetectorKind { kToy, kRemote };
enum class AttackMode { kTargeted, kUntargeted };

struct Capabilities {
  bool has_gradients = false;
  bool has_features = false;
  int class_count = 0;
  friend bool operator==(const Capabilities&, const Capabilities&) = default;
};

struct FeatureMaps {
  std::string layer_id;
  Tensor3<double> data;  // H_f x W_f x C_f
};

// Cross-entropy of the class distribution against one label, with its
// gradient with respect to every input sample.
struct LossGradient {
  double cross_entropy = 0;
  Field gradient;
  std::vector<double> probabilities;
};

// Uniform detector contract. Implementations are immutable after
// construction and safe to share across threads.
class Detector {
 public:
  virtual ~Detector() = default;

  virtual DetectorKind kind() const = 0;
  virtual Capabilities capabilities() const = 0;
  virtual std::vector<Detection> detect(const Image& image) const = 0;

  // Throws kCapability when features are unsupported and kLookup for an
  // unknown layer.
  virtual FeatureMaps feature_maps(const Image& image, std::string_view layer_id) const = 0;
  virtual std::string default_feature_layer() const = 0;

  // Gradient-capable detectors only; the base versions throw kCapability.
  virtual std::vector<double> class_probabilities(const Image& image) const;
  virtual LossGradient cross_entropy_gradient(const Image& image, int label) const;

  // d CE(label) / d pixels. For targeted attacks `label` is the target (the
  // caller descends); for untargeted attacks it is the true class (the
  // caller ascends).
  Field input_gradient(const Image& image, int label, AttackMode mode) const;
};

using DetectorHandle = std::shared_ptr<const Detector>;

struct ToyArchitecture {
  int input_size = 64;
  int kernel = 5;
  int conv1_channels = 8;
  int conv2_channels = 16;
  int hidden = 32;
  int class_count = 4;
  double pool_sharpness = 10.0;
  friend bool operator==(const ToyArchitecture&, const ToyArchitecture&) = default;
};

// (x - input_offset) -> conv1 (k x k, stride 2) -> SiLU -> conv2 (k x k,
// stride 2) -> SiLU -> global log-sum-exp pool -> fc1 -> SiLU -> fc2 ->
// softmax. conv2's activations are the feature layer.
struct ToyDetectorParams {
  ToyArchitecture arch;
  double input_offset = 0.0;
  nn::Conv2d conv1;
  nn::Conv2d conv2;
  nn::Dense fc1;
  nn::Dense fc2;
  std::uint64_t seed = 0;

  std::vector<std::vector<double>*> arrays();
  std::vector<const std::vector<double>*> arrays() const;
  bool all_finite() const;
};

ToyDetectorParams init_toy_params(const ToyArchitecture& arch, std::uint64_t seed);
// Same shapes as `init_toy_params`; every weight, bias and the input offset
// are zero.
ToyDetectorParams zero_toy_params(const ToyArchitecture& arch);

void save_toy_params(const ToyDetectorParams& params, const std::filesystem::path& path);
ToyDetectorParams load_toy_params(const std::filesystem::path& path);

struct ToyTrainingConfig {
  ToyArchitecture arch;
  int per_class = 500;
  int epochs = 15;
  int batch_size = 32;
  double learning_rate = 5e-3;
  // Random-noise occluders pasted on training inputs (true label kept).
  // Without them a 1% patch already fools the detector.
  double occlusion_probability = 0.5;
  double occlusion_max_fraction = 0.25;
  std::uint64_t seed = 0;
};

ToyDetectorParams train_toy_detector(const ToyTrainingConfig& config);

class ToyDetector final : public Detector {
 public:
  static constexpr std::string_view kConv1 = "conv1";
  static constexpr std::string_view kConv2 = "conv2";

  explicit ToyDetector(ToyDetectorParams params);

  const ToyDetectorParams& params() const noexcept { return params_; }

  DetectorKind kind() const override { return DetectorKind::kToy; }
  Capabilities capabilities() const override;
  std::vector<Detection> detect(const Image& image) const override;
  FeatureMaps feature_maps(const Image& image, std::string_view layer_id) const override;
  std::string default_feature_layer() const override { return std::string(kConv2); }
  std::vector<double> class_probabilities(const Image& image) const override;
  LossGradient cross_entropy_gradient(const Image& image, int label) const override;

  // Training entry point: accumulates parameter gradients of CE(label) for a
  // raw input tensor into `grad` and returns the loss.
  double accumulate_parameter_gradient(const nn::Tensor& input, int label,
                                       ToyDetectorParams& grad) const;

 private:
  struct Forward;
  Forward run(const nn::Tensor& input) const;
  nn::Tensor check_input(const Image& image) const;

  ToyDetectorParams params_;
};

}  // namespace patchbench
