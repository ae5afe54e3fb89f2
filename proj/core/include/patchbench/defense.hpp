// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// Mask-based defences: a patch segmenter with shape completion, pixel
// removal, fast-marching isophote inpainting and masked diffusion
// restoration.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "patchbench/detector.hpp"
#include "patchbench/image.hpp"
#include "patchbench/nn.hpp"
#include "patchbench/rng.hpp"

namespace patchbench {

// ---------------------------------------------------------------------------
// Segmenter

// Per-pixel probability map in [0, 1].
struct ProbabilityMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int row, int col) const noexcept {
    return values[static_cast<std::size_t>(row) * width + col];
  }
};

// Encoder-decoder with two stride-2 stages, two upsampling stages with skip
// connections, and a 1x1 sigmoid head.
struct SegmenterParams {
  nn::Conv2d enc1;        // 3 -> 4, full resolution
  nn::Conv2d enc2;        // 4 -> 8, stride 2
  nn::Conv2d bottleneck;  // 8 -> 8, stride 2
  nn::Conv2d dec2;        // (8 up + 8 skip) -> 8
  nn::Conv2d dec1;        // (8 up + 4 skip) -> 4
  nn::Conv2d head;        // 4 -> 1, 1x1
  double input_offset = 0.5;
  std::uint64_t seed = 0;
  bool trained = false;

  std::vector<std::vector<double>*> arrays();
  std::vector<const std::vector<double>*> arrays() const;
  bool all_finite() const;
};

SegmenterParams init_segmenter(std::uint64_t seed);
SegmenterParams zero_segmenter_like(const SegmenterParams& params);

void save_segmenter(const SegmenterParams& params, const std::filesystem::path& path);
SegmenterParams load_segmenter(const std::filesystem::path& path);

// Inputs whose sides are not multiples of 4 are zero-padded internally; the
// output always matches the input size.
ProbabilityMap segment(const SegmenterParams& params, const Image& image);

// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
// Throws kShape on length mismatch.
double bce_loss(const std::vector<double>& pred, const std::vector<std::uint8_t>& truth);
double bce_loss(const ProbabilityMap& pred, const BinaryMask& truth);

struct SegmenterSample {
  Image image;
  BinaryMask truth;
};

// Shape images carrying random noise patches (truth = patch rectangle);
// every fourth sample is left clean with an empty mask.
std::vector<SegmenterSample> make_segmenter_corpus(int count, int size, std::uint64_t seed,
                                                   std::uint64_t tag);

struct SegmenterTrainingConfig {
  int epochs = 8;
  int batch_size = 16;
  double learning_rate = 5e-3;
  std::uint64_t seed = 0;
};

// Adam on mean BCE. Throws kData on an empty dataset.
SegmenterParams train_segmenter(const std::vector<SegmenterSample>& dataset,
                                const SegmenterTrainingConfig& config);

struct ShapeCompletionConfig {
  int min_component = 10;  // pixels, 4-connected
  int dilation_iterations = 2;
};

// Binarise (p >= threshold), drop small components, 3x3 dilation, fill
// enclosed holes. Throws kValue unless 0 < threshold < 1.
BinaryMask shape_complete(const ProbabilityMap& prob, double threshold,
                          const ShapeCompletionConfig& config = {});

// ---------------------------------------------------------------------------
// Removal and inpainting

// Masked pixels set to 0. Throws kShape on size mismatch.
Image remove_patch(const Image& image, const BinaryMask& mask);

// Fast-marching isophote inpainting. Throws kShape on size mismatch, kValue
// for radius < 1 and kInpaint when the mask leaves no known pixel.
Image inpaint(const Image& image, const BinaryMask& mask, int radius = 3);

// ---------------------------------------------------------------------------
// Diffusion

class NoiseSchedule {
 public:
  // Linear betas. With scale_to_steps the endpoints are multiplied by
  // 1000 / steps so short chains still end near pure noise.
  static NoiseSchedule linear(int steps, double beta_start = 1e-4, double beta_end = 0.02,
                              bool scale_to_steps = true);
  // betas[t - 1] = beta_t; each must lie in [0, 1). Throws kValue.
  static NoiseSchedule from_betas(std::vector<double> betas);

  int steps() const noexcept { return static_cast<int>(beta_.size()) - 1; }
  double beta(int t) const { return beta_.at(t); }
  double alpha(int t) const { return 1.0 - beta_.at(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(t); }  // alpha_bar(0) = 1

 private:
  std::vector<double> beta_;       // index 0 unused (0)
  std::vector<double> alpha_bar_;  // cumulative product
};

enum class DenoiserKind { kToyTrained, kAnalyticGaussian };

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual DenoiserKind kind() const = 0;
  // Predicted noise, same shape as x_t.
  virtual Field predict(const Field& x_t, int t) const = 0;
};

// Optimal noise predictor for data drawn i.i.d. from N(mean, variance).
class AnalyticGaussianDenoiser final : public Denoiser {
 public:
  AnalyticGaussianDenoiser(double mean, double variance, NoiseSchedule schedule);
  DenoiserKind kind() const override { return DenoiserKind::kAnalyticGaussian; }
  Field predict(const Field& x_t, int t) const override;

 private:
  double mean_;
  double variance_;
  NoiseSchedule schedule_;
};

// Per-step linear predictor fitted by ridge least squares. Features per
// sample: the (2r+1)^2 same-channel neighbourhood, box means at kBoxRadii,
// the image-wide channel mean and a bias.
class ToyDenoiser final : public Denoiser {
 public:
  static constexpr int kRadius = 2;
  static constexpr int kBoxRadii[2] = {4, 8};
  static constexpr int kFeatures = (2 * kRadius + 1) * (2 * kRadius + 1) + 2 + 2;

  explicit ToyDenoiser(std::vector<std::vector<double>> weights);
  DenoiserKind kind() const override { return DenoiserKind::kToyTrained; }
  Field predict(const Field& x_t, int t) const override;
  const std::vector<std::vector<double>>& weights() const noexcept { return weights_; }

 private:
  std::vector<std::vector<double>> weights_;  // [t][feature], t in 1..T at index t - 1
};

struct ToyDenoiserConfig {
  int noise_draws = 2;  // forward samples per image and step
  double ridge = 1e-6;
  std::uint64_t seed = 0;
};

// Throws kData on an empty image set.
ToyDenoiser train_toy_denoiser(const std::vector<Image>& images, const NoiseSchedule& schedule,
                               const ToyDenoiserConfig& config);

void save_toy_denoiser(const ToyDenoiser& denoiser, const std::filesystem::path& path);
ToyDenoiser load_toy_denoiser(const std::filesystem::path& path);

// Pixel <-> diffusion-space mapping; identity by default.
struct LatentCodec {
  std::function<Field(const Field&)> encode;
  std::function<Field(const Field&)> decode;
  static LatentCodec identity();
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. Throws kStep unless
// 1 <= t <= T (t = 0 is accepted and returns x0).
Field forward_diffuse(const Field& x0, int t, const NoiseSchedule& schedule, RngStream& rng);
Field forward_diffuse(const Field& x0, int t, const NoiseSchedule& schedule, const Field& noise);

// x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) + sqrt(beta_t) z.
// The rng overload draws z (z = 0 at t = 1). Throws kStep unless 1 <= t <= T.
Field reverse_step(const Field& x_t, int t, const Denoiser& denoiser,
                   const NoiseSchedule& schedule, RngStream& rng);
Field reverse_step(const Field& x_t, int t, const Denoiser& denoiser,
                   const NoiseSchedule& schedule, const Field& z);

// Reverse chain from T with the unmasked region re-noised from the original
// at every step; unmasked output pixels are bit-identical to the input.
Image diffusion_restore(const Image& image, const BinaryMask& mask, const Denoiser& denoiser,
                        const NoiseSchedule& schedule, RngStream& rng,
                        const LatentCodec& codec = LatentCodec::identity());

// ---------------------------------------------------------------------------
// Pipeline

struct DefenseConfig {
  double binarize_threshold = 0.5;
  ShapeCompletionConfig completion;
  int inpaint_radius = 3;
};

inline constexpr const char* kDefenseBranches[] = {"removal", "inpaint", "diffusion"};

struct BranchResult {
  std::string name;
  std::optional<Image> output;
  std::vector<Detection> detections;
  int class_id = -1;  // top detection, -1 when none
  double confidence = 0;
  std::optional<std::string> error;
};

struct DefenseReport {
  BinaryMask mask;
  double mask_area_fraction = 0;
  std::vector<BranchResult> branches;  // removal, inpaint, diffusion
};

// Segment -> shape-complete -> three branches, each detected. Branch
// failures are recorded on the branch. The diffusion branch draws from
// rng.child(2).
DefenseReport run_defenses(const Image& adv_image, const Detector& detector,
                           const SegmenterParams& segmenter, const Denoiser& denoiser,
                           const NoiseSchedule& schedule, const DefenseConfig& config,
                           RngStream& rng);

std::string defense_report_to_json(const DefenseReport& report);
// Reads back the branch summaries and mask fraction (not the images).
DefenseReport defense_report_from_json(const std::string& text);

}  // namespace patchbench
