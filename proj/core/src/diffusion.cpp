// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "patchbench/defense.hpp"
#include "patchbench/error.hpp"

namespace patchbench {

namespace {

constexpr char kDenoiserMagic[8] = {'P', 'B', 'D', 'N', 'S', '0', '0', '2'};

void check_step(int t, const NoiseSchedule& schedule, bool allow_zero) {
  if (t < (allow_zero ? 0 : 1) || t > schedule.steps()) {
    throw Error(ErrorKind::kStep,
                fmt::format("step {} outside [{}, {}]", t, allow_zero ? 0 : 1, schedule.steps()));
  }
}

Field standard_normal_like(const Field& shape, RngStream& rng) {
  Field z(shape.height(), shape.width(), shape.channels());
  for (double& v : z.values()) v = rng.normal();
  return z;
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end,
                                    bool scale_to_steps) {
  if (steps < 1) throw Error(ErrorKind::kValue, fmt::format("schedule needs >= 1 step, got {}", steps));
  const double scale = scale_to_steps ? 1000.0 / steps : 1.0;
  const double lo = beta_start * scale;
  const double hi = beta_end * scale;
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    betas[i] = steps == 1 ? lo : lo + (hi - lo) * i / (steps - 1);
  }
  return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw Error(ErrorKind::kValue, "schedule needs at least one beta");
  NoiseSchedule s;
  s.beta_.assign(1, 0.0);
  s.alpha_bar_.assign(1, 1.0);
  for (std::size_t i = 0; i < betas.size(); ++i) {
    const double b = betas[i];
    if (!(b >= 0 && b < 1)) {
      throw Error(ErrorKind::kValue, fmt::format("beta_{} = {} outside [0, 1)", i + 1, b));
    }
    s.beta_.push_back(b);
    s.alpha_bar_.push_back(s.alpha_bar_.back() * (1.0 - b));
  }
  return s;
}

AnalyticGaussianDenoiser::AnalyticGaussianDenoiser(double mean, double variance,
                                                   NoiseSchedule schedule)
    : mean_(mean), variance_(variance), schedule_(std::move(schedule)) {
  if (!(variance >= 0)) throw Error(ErrorKind::kValue, "data variance must be >= 0");
}

Field AnalyticGaussianDenoiser::predict(const Field& x_t, int t) const {
  check_step(t, schedule_, false);
  const double ab = schedule_.alpha_bar(t);
  const double denom = ab * variance_ + (1.0 - ab);
  const double gain = denom > 0 ? std::sqrt(1.0 - ab) / denom : 0.0;
  const double centre = std::sqrt(ab) * mean_;
  Field eps(x_t.height(), x_t.width(), x_t.channels());
  for (std::size_t i = 0; i < eps.values().size(); ++i) {
    eps.values()[i] = gain * (x_t.values()[i] - centre);
  }
  return eps;
}

ToyDenoiser::ToyDenoiser(std::vector<std::vector<double>> weights) : weights_(std::move(weights)) {
  for (const auto& w : weights_) {
    if (w.size() != static_cast<std::size_t>(kFeatures)) {
      throw Error(ErrorKind::kShape, fmt::format("denoiser step has {} weights, expected {}",
                                                 w.size(), kFeatures));
    }
  }
}

namespace {

// Mean of channel `ch` over the in-bounds part of a (2r+1)^2 window, for
// every pixel, via an integral image.
std::vector<double> box_mean(const Field& x, int ch, int radius) {
  const int h = x.height();
  const int w = x.width();
  std::vector<double> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
  auto at = [&](int r, int c) -> double& { return sat[static_cast<std::size_t>(r) * (w + 1) + c]; };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) at(r + 1, c + 1) = x(r, c, ch) + at(r, c + 1) + at(r + 1, c) - at(r, c);
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int r0 = std::max(r - radius, 0), r1 = std::min(r + radius + 1, h);
      const int c0 = std::max(c - radius, 0), c1 = std::min(c + radius + 1, w);
      out[static_cast<std::size_t>(r) * w + c] =
          (at(r1, c1) - at(r0, c1) - at(r1, c0) + at(r0, c0)) / ((r1 - r0) * (c1 - c0));
    }
  return out;
}

// One row per sample (row-major, channel fastest): the same-channel
// neighbourhood with edge replication, box means at kBoxRadii, the
// image-wide channel mean, and a bias.
Eigen::MatrixXd features(const Field& x) {
  const int h = x.height();
  const int w = x.width();
  const int n = x.channels();
  Eigen::MatrixXd phi(static_cast<Eigen::Index>(x.size()), ToyDenoiser::kFeatures);
  for (int ch = 0; ch < n; ++ch) {
    std::vector<std::vector<double>> boxes;
    for (int radius : ToyDenoiser::kBoxRadii) boxes.push_back(box_mean(x, ch, radius));
    double global = 0;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) global += x(r, c, ch);
    global /= static_cast<double>(h) * w;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const auto row = static_cast<Eigen::Index>(x.index(r, c, ch));
        int f = 0;
        for (int dr = -ToyDenoiser::kRadius; dr <= ToyDenoiser::kRadius; ++dr)
          for (int dc = -ToyDenoiser::kRadius; dc <= ToyDenoiser::kRadius; ++dc) {
            phi(row, f++) = x(std::clamp(r + dr, 0, h - 1), std::clamp(c + dc, 0, w - 1), ch);
          }
        for (const auto& b : boxes) phi(row, f++) = b[static_cast<std::size_t>(r) * w + c];
        phi(row, f++) = global;
        phi(row, f) = 1.0;
      }
  }
  return phi;
}

}  // namespace

Field ToyDenoiser::predict(const Field& x_t, int t) const {
  if (t < 1 || t > static_cast<int>(weights_.size())) {
    throw Error(ErrorKind::kStep, fmt::format("step {} outside [1, {}]", t, weights_.size()));
  }
  const auto& w = weights_[static_cast<std::size_t>(t) - 1];
  const Eigen::VectorXd eps = features(x_t) * Eigen::Map<const Eigen::VectorXd>(w.data(), kFeatures);
  Field out(x_t.height(), x_t.width(), x_t.channels());
  std::copy(eps.data(), eps.data() + eps.size(), out.values().begin());
  return out;
}

ToyDenoiser train_toy_denoiser(const std::vector<Image>& images, const NoiseSchedule& schedule,
                               const ToyDenoiserConfig& config) {
  if (images.empty()) throw Error(ErrorKind::kData, "denoiser training set is empty");
  constexpr int kF = ToyDenoiser::kFeatures;
  std::vector<std::vector<double>> weights;
  weights.reserve(static_cast<std::size_t>(schedule.steps()));
  for (int t = 1; t <= schedule.steps(); ++t) {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(kF, kF);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(kF);
    double rows = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const Field x0 = images[i].to_field();
      for (int d = 0; d < config.noise_draws; ++d) {
        RngStream rng = derive_stream(config.seed, {0x646e7331ULL, static_cast<std::uint64_t>(t), i,
                                                    static_cast<std::uint64_t>(d)});
        const Field eps = standard_normal_like(x0, rng);
        const Eigen::MatrixXd phi = features(forward_diffuse(x0, t, schedule, eps));
        gram.noalias() += phi.transpose() * phi;
        rhs.noalias() += phi.transpose() *
                         Eigen::Map<const Eigen::VectorXd>(eps.values().data(), phi.rows());
        rows += static_cast<double>(phi.rows());
      }
    }
    gram /= rows;
    rhs /= rows;
    gram.diagonal().array() += config.ridge;
    const Eigen::VectorXd w = gram.ldlt().solve(rhs);
    weights.emplace_back(w.data(), w.data() + kF);
  }
  return ToyDenoiser(std::move(weights));
}

void save_toy_denoiser(const ToyDenoiser& denoiser, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(kDenoiserMagic, sizeof kDenoiserMagic);
  const std::int32_t steps = static_cast<std::int32_t>(denoiser.weights().size());
  out.write(reinterpret_cast<const char*>(&steps), sizeof steps);
  for (const auto& w : denoiser.weights()) nn::write_doubles(out, w);
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

ToyDenoiser load_toy_denoiser(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  char magic[sizeof kDenoiserMagic];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + sizeof magic, kDenoiserMagic)) {
    throw Error(ErrorKind::kFormat, path.string() + " is not a denoiser parameter file");
  }
  std::int32_t steps = 0;
  in.read(reinterpret_cast<char*>(&steps), sizeof steps);
  if (!in || steps < 1) throw Error(ErrorKind::kFormat, path.string() + ": bad step count");
  std::vector<std::vector<double>> weights(static_cast<std::size_t>(steps),
                                           std::vector<double>(ToyDenoiser::kFeatures));
  for (auto& w : weights) nn::read_doubles(in, w);
  return ToyDenoiser(std::move(weights));
}

LatentCodec LatentCodec::identity() {
  auto id = [](const Field& f) { return f; };
  return {id, id};
}

Field forward_diffuse(const Field& x0, int t, const NoiseSchedule& schedule, const Field& noise) {
  check_step(t, schedule, true);
  if (!noise.same_shape(x0)) throw Error(ErrorKind::kShape, "noise shape differs from x0");
  const double ab = schedule.alpha_bar(t);
  if (ab == 1.0) return x0;
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Field xt(x0.height(), x0.width(), x0.channels());
  for (std::size_t i = 0; i < xt.values().size(); ++i) {
    xt.values()[i] = a * x0.values()[i] + b * noise.values()[i];
  }
  return xt;
}

Field forward_diffuse(const Field& x0, int t, const NoiseSchedule& schedule, RngStream& rng) {
  check_step(t, schedule, true);
  if (schedule.alpha_bar(t) == 1.0) return x0;
  return forward_diffuse(x0, t, schedule, standard_normal_like(x0, rng));
}

Field reverse_step(const Field& x_t, int t, const Denoiser& denoiser,
                   const NoiseSchedule& schedule, const Field& z) {
  check_step(t, schedule, false);
  if (!z.same_shape(x_t)) throw Error(ErrorKind::kShape, "noise shape differs from x_t");
  const Field eps = denoiser.predict(x_t, t);
  if (!eps.same_shape(x_t)) throw Error(ErrorKind::kShape, "denoiser changed the shape");
  const double beta = schedule.beta(t);
  const double one_minus_ab = 1.0 - schedule.alpha_bar(t);
  const double eps_coef = beta == 0 ? 0.0 : beta / std::sqrt(one_minus_ab);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
  const double sigma = std::sqrt(beta);
  Field out(x_t.height(), x_t.width(), x_t.channels());
  for (std::size_t i = 0; i < out.values().size(); ++i) {
    out.values()[i] = inv_sqrt_alpha * (x_t.values()[i] - eps_coef * eps.values()[i]) +
                      sigma * z.values()[i];
  }
  return out;
}

Field reverse_step(const Field& x_t, int t, const Denoiser& denoiser,
                   const NoiseSchedule& schedule, RngStream& rng) {
  check_step(t, schedule, false);
  const Field z = t == 1 ? Field(x_t.height(), x_t.width(), x_t.channels(), 0.0)
                         : standard_normal_like(x_t, rng);
  return reverse_step(x_t, t, denoiser, schedule, z);
}

Image diffusion_restore(const Image& image, const BinaryMask& mask, const Denoiser& denoiser,
                        const NoiseSchedule& schedule, RngStream& rng, const LatentCodec& codec) {
  if (mask.height() != image.height() || mask.width() != image.width()) {
    throw Error(ErrorKind::kShape, fmt::format("mask {}x{} does not match image {}x{}",
                                               mask.height(), mask.width(), image.height(),
                                               image.width()));
  }
  if (!mask.any()) return image;
  const Field x0 = codec.encode(image.to_field());
  if (x0.height() != mask.height() || x0.width() != mask.width()) {
    throw Error(ErrorKind::kShape, "latent codec must preserve the spatial size");
  }
  auto reinject = [&](Field& x, const Field& known) {
    for (int r = 0; r < x.height(); ++r)
      for (int c = 0; c < x.width(); ++c) {
        if (mask.at(r, c)) continue;
        for (int ch = 0; ch < x.channels(); ++ch) x(r, c, ch) = known(r, c, ch);
      }
  };
  const int T = schedule.steps();
  Field x = standard_normal_like(x0, rng);
  reinject(x, forward_diffuse(x0, T, schedule, rng));
  for (int t = T; t >= 1; --t) {
    x = reverse_step(x, t, denoiser, schedule, rng);
    reinject(x, forward_diffuse(x0, t - 1, schedule, rng));
  }
  const Image decoded = Image::from_field_clamped(codec.decode(x));
  std::vector<float> out = image.values();
  for (int r = 0; r < image.height(); ++r)
    for (int c = 0; c < image.width(); ++c) {
      if (!mask.at(r, c)) continue;
      for (int ch = 0; ch < kChannels; ++ch) {
        out[(static_cast<std::size_t>(r) * image.width() + c) * kChannels + ch] =
            decoded.at(r, c, ch);
      }
    }
  return Image::from_values(image.height(), image.width(), std::move(out));
}

}  // namespace patchbench
