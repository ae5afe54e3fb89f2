// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "patchbench/defense.hpp"
#include "patchbench/error.hpp"
#include "test_models.hpp"

namespace patchbench {
namespace {

using testing::random_image;

Field normal_field(int h, int w, int c, std::uint64_t seed) {
  RngStream rng = derive_stream(seed, {0x6e});
  Field f(h, w, c);
  for (double& v : f.values()) v = rng.normal();
  return f;
}

struct Moments {
  double mean = 0;
  double var = 0;
};

Moments moments(const Field& f) {
  double s = 0, sq = 0;
  for (double v : f.values()) s += v;
  const double n = static_cast<double>(f.size());
  const double m = s / n;
  for (double v : f.values()) sq += (v - m) * (v - m);
  return {m, sq / (n - 1)};
}

class ZeroDenoiser final : public Denoiser {
 public:
  DenoiserKind kind() const override { return DenoiserKind::kToyTrained; }
  Field predict(const Field& x, int) const override {
    return Field(x.height(), x.width(), x.channels(), 0.0);
  }
};

// Returns the exact noise used to produce x_t.
class OracleDenoiser final : public Denoiser {
 public:
  explicit OracleDenoiser(Field eps) : eps_(std::move(eps)) {}
  DenoiserKind kind() const override { return DenoiserKind::kToyTrained; }
  Field predict(const Field&, int) const override { return eps_; }

 private:
  Field eps_;
};

TEST(Schedule, LinearEndpointsAndCumulative) {
  const auto s = NoiseSchedule::linear(50);
  EXPECT_EQ(s.steps(), 50);
  EXPECT_NEAR(s.beta(1), 1e-4 * 20, 1e-15);
  EXPECT_NEAR(s.beta(50), 0.02 * 20, 1e-15);
  double ab = 1;
  for (int t = 1; t <= 50; ++t) {
    ab *= 1 - s.beta(t);
    EXPECT_NEAR(s.alpha_bar(t), ab, 1e-15);
  }
  const auto unscaled = NoiseSchedule::linear(1000, 1e-4, 0.02, false);
  EXPECT_DOUBLE_EQ(unscaled.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(unscaled.beta(1000), 0.02);
  EXPECT_THROW(NoiseSchedule::from_betas({0.5, 1.0}), Error);
}

TEST(ForwardDiffuse, UnitAlphaBarIsIdentity) {
  const auto s = NoiseSchedule::from_betas({0.0, 0.0});
  const Field x0 = random_image(8, 8, 1).to_field();
  RngStream rng = derive_stream(1, {});
  EXPECT_EQ(forward_diffuse(x0, 2, s, rng), x0);
}

TEST(ForwardDiffuse, VanishingAlphaBarIsNoise) {
  const auto s = NoiseSchedule::from_betas({std::nextafter(1.0, 0.0)});
  const Field x0 = random_image(8, 8, 2).to_field();
  const Field eps = normal_field(8, 8, 3, 4);
  const Field xt = forward_diffuse(x0, 1, s, eps);
  for (std::size_t i = 0; i < xt.size(); ++i) EXPECT_NEAR(xt.values()[i], eps.values()[i], 1e-7);
}

TEST(ForwardDiffuse, MonteCarloMarginals) {
  constexpr double kSamples = 1e5;
  const auto s = testing::toy_schedule();
  int mean_checks = 0;
  for (int t : {1, 2, 5, 10, 25, 50}) {
    const double ab = s.alpha_bar(t);
    RngStream rng = derive_stream(9, {static_cast<std::uint64_t>(t)});
    const Moments zero = moments(forward_diffuse(Field(100, 1000, 1, 0.0), t, s, rng));
    EXPECT_NEAR(zero.var, 1 - ab, 0.02 * (1 - ab)) << t;
    const Moments shifted = moments(forward_diffuse(Field(100, 1000, 1, 0.8), t, s, rng));
    EXPECT_NEAR(shifted.var, 1 - ab, 0.02 * (1 - ab)) << t;
    // A 2% band on the mean is only resolvable when it spans 4 standard errors.
    const double mu = std::sqrt(ab) * 0.8;
    if (0.02 * mu >= 4 * std::sqrt((1 - ab) / kSamples)) {
      EXPECT_NEAR(shifted.mean, mu, 0.02 * mu) << t;
      ++mean_checks;
    }
  }
  EXPECT_GE(mean_checks, 3);
}

TEST(ForwardDiffuse, StepRange) {
  const auto s = NoiseSchedule::linear(10, 1e-4, 0.02, false);
  const Field x0(2, 2, 3, 0.5);
  RngStream rng = derive_stream(0, {});
  EXPECT_EQ(forward_diffuse(x0, 0, s, rng), x0);
  try {
    forward_diffuse(x0, 11, s, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kStep);
  }
  EXPECT_THROW(forward_diffuse(x0, -1, s, rng), Error);
}

TEST(ReverseStep, ZeroDenoiserUnitAlphaIsIdentity) {
  const auto s = NoiseSchedule::from_betas({0.0, 0.1});
  const Field x = normal_field(4, 4, 3, 5);
  const Field z(4, 4, 3, 0.0);
  EXPECT_EQ(reverse_step(x, 1, ZeroDenoiser(), s, z), x);
}

TEST(ReverseStep, OracleNoiseInvertsFirstStep) {
  for (double beta : {1e-4, 0.02, 0.3}) {
    const auto s = NoiseSchedule::from_betas({beta, 0.1});
    const Field x0 = random_image(6, 6, 7).to_field();
    const Field eps = normal_field(6, 6, 3, 8);
    const Field x1 = forward_diffuse(x0, 1, s, eps);
    const Field back = reverse_step(x1, 1, OracleDenoiser(eps), s, Field(6, 6, 3, 0.0));
    for (std::size_t i = 0; i < back.size(); ++i) ASSERT_NEAR(back.values()[i], x0.values()[i], 1e-6);
  }
}

TEST(ReverseStep, StepRange) {
  const auto s = NoiseSchedule::linear(10, 1e-4, 0.02, false);
  const Field x(2, 2, 3, 0.0);
  RngStream rng = derive_stream(0, {});
  try {
    reverse_step(x, 0, ZeroDenoiser(), s, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kStep);
  }
  EXPECT_THROW(reverse_step(x, 11, ZeroDenoiser(), s, rng), Error);
}

Moments analytic_chain(const NoiseSchedule& s, double mean, double var) {
  const AnalyticGaussianDenoiser den(mean, var, s);
  RngStream rng = derive_stream(11, {static_cast<std::uint64_t>(s.steps())});
  Field x = normal_field(100, 100, 1, 12);
  for (int t = s.steps(); t >= 1; --t) x = reverse_step(x, t, den, s, rng);
  return moments(x);
}

TEST(ReverseChain, AnalyticDenoiserRecoversGaussian) {
  const double mean = 0.3, var = 0.04;
  const Moments m = analytic_chain(NoiseSchedule::linear(1000, 1e-4, 0.02, false), mean, var);
  EXPECT_NEAR(m.mean, mean, 0.05 * mean);
  EXPECT_NEAR(m.var, var, 0.05 * var);
}

TEST(ReverseChain, ShortScheduleKeepsMean) {
  // With sigma_t = sqrt(beta_t) and only 50 large steps the chain overshoots
  // the data variance; the mean is still recovered.
  const Moments m = analytic_chain(testing::toy_schedule(), 0.3, 0.04);
  EXPECT_NEAR(m.mean, 0.3, 0.05 * 0.3);
  EXPECT_GT(m.var, 0.04);
}

Image constant_image(int h, int w, float v) {
  return Image::from_values(h, w, std::vector<float>(static_cast<std::size_t>(h) * w * 3, v));
}

BinaryMask square_mask(int h, int w, int top, int left, int side) {
  BinaryMask m(h, w);
  for (int r = top; r < top + side; ++r)
    for (int c = left; c < left + side; ++c) m.set(r, c, true);
  return m;
}

TEST(DiffusionRestore, EmptyMaskIsIdentity) {
  const Image img = random_image(16, 16, 3);
  RngStream rng = derive_stream(0, {});
  EXPECT_EQ(diffusion_restore(img, BinaryMask(16, 16), ZeroDenoiser(), testing::toy_schedule(), rng),
            img);
}

TEST(DiffusionRestore, ConstantImageWithConstantDenoiser) {
  const auto s = testing::toy_schedule();
  std::vector<Image> constants;
  for (int k = 0; k < 16; ++k) constants.push_back(constant_image(32, 32, static_cast<float>(k / 15.0)));
  const ToyDenoiser den = train_toy_denoiser(constants, s, {});
  for (float value : {0.3f, 0.75f}) {
    const Image img = constant_image(32, 32, value);
    const BinaryMask m = square_mask(32, 32, 10, 10, 10);
    RngStream rng = derive_stream(5, {1});
    const Image out = diffusion_restore(img, m, den, s, rng);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c)
        for (int ch = 0; ch < 3; ++ch) {
          if (m.at(r, c)) {
            EXPECT_NEAR(out.at(r, c, ch), value, 0.1);
          } else {
            ASSERT_EQ(out.at(r, c, ch), value);
          }
        }
  }
}

TEST(DiffusionRestore, UnmaskedBitExactWithTrainedDenoiser) {
  const Image img = random_image(64, 64, 4);
  const BinaryMask m = square_mask(64, 64, 20, 30, 15);
  RngStream rng = derive_stream(2, {});
  const Image out = diffusion_restore(img, m, testing::trained_denoiser(), testing::toy_schedule(), rng);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c)
      if (!m.at(r, c)) {
        for (int ch = 0; ch < 3; ++ch) ASSERT_EQ(out.at(r, c, ch), img.at(r, c, ch));
      }
}

TEST(DiffusionRestore, SeededIsDeterministic) {
  const Image img = random_image(32, 32, 5);
  const BinaryMask m = square_mask(32, 32, 4, 4, 8);
  RngStream a = derive_stream(3, {1});
  RngStream b = derive_stream(3, {1});
  const auto& den = testing::trained_denoiser();
  const auto s = testing::toy_schedule();
  EXPECT_EQ(diffusion_restore(img, m, den, s, a), diffusion_restore(img, m, den, s, b));
}

TEST(ToyDenoiser, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "pb_den_test.bin";
  const ToyDenoiser& den = testing::trained_denoiser();
  save_toy_denoiser(den, path);
  const ToyDenoiser back = load_toy_denoiser(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.weights(), den.weights());
}

TEST(ToyDenoiser, EmptyTrainingSetIsDataError) {
  try {
    train_toy_denoiser({}, NoiseSchedule::linear(5, 1e-4, 0.02, false), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(ToyDenoiser, BeatsZeroPredictorOnHeldOutNoise) {
  const auto s = testing::toy_schedule();
  const auto& den = testing::trained_denoiser();
  const Field x0 = random_image(64, 64, 6).to_field();
  for (int t : {5, 25, 50}) {
    const Field eps = normal_field(64, 64, 3, 100 + t);
    const Field pred = den.predict(forward_diffuse(x0, t, s, eps), t);
    double err = 0, base = 0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
      err += (pred.values()[i] - eps.values()[i]) * (pred.values()[i] - eps.values()[i]);
      base += eps.values()[i] * eps.values()[i];
    }
    EXPECT_LT(err, base) << t;
  }
}

}  // namespace
}  // namespace patchbench
