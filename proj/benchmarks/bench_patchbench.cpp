// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// Microbenchmarks for the hot paths. Detector weights are random (untrained);
// only timing matters here.

#include <benchmark/benchmark.h>

#include "patchbench/defense.hpp"
#include "patchbench/detector.hpp"
#include "patchbench/placement.hpp"
#include "patchbench/rng.hpp"
#include "patchbench/saliency.hpp"
#include "patchbench/synthetic.hpp"

namespace patchbench {
namespace {

const ToyDetector& detector() {
  static const ToyDetector det(init_toy_params(ToyArchitecture{}, 11));
  return det;
}

const Image& sample() {
  static const Image img = fixture_set(3, 1)[0].image;
  return img;
}

Image noise_image(int h, int w, std::uint64_t seed) {
  RngStream rng = derive_stream(seed, {});
  std::vector<float> v(static_cast<std::size_t>(h) * w * 3);
  for (float& x : v) x = static_cast<float>(rng.uniform());
  return Image::from_values(h, w, std::move(v));
}

void BM_Detect(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(detector().detect(sample()));
}
BENCHMARK(BM_Detect);

void BM_InputGradient(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(detector().input_gradient(sample(), 1, AttackMode::kUntargeted));
}
BENCHMARK(BM_InputGradient);

void BM_EigenCam(benchmark::State& state) {
  const FeatureMaps maps = detector().feature_maps(sample(), ToyDetector::kConv2);
  for (auto _ : state) benchmark::DoNotOptimize(eigencam(maps));
}
BENCHMARK(BM_EigenCam);

void BM_GridSearch(benchmark::State& state) {
  const int side = 6;
  Patch patch{noise_image(side, side, 5), std::nullopt, {}};
  const PlacementGrid grid = candidate_positions({0, 0, 64, 64}, side, side,
                                                 static_cast<int>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(grid_search(detector(), sample(), patch, grid, 0));
}
BENCHMARK(BM_GridSearch)->Arg(8)->Arg(4);

void BM_Inpaint(benchmark::State& state) {
  BinaryMask mask(64, 64);
  for (int r = 20; r < 36; ++r)
    for (int c = 24; c < 40; ++c) mask.set(r, c, true);
  for (auto _ : state) benchmark::DoNotOptimize(inpaint(sample(), mask));
}
BENCHMARK(BM_Inpaint);

void BM_ReverseStep(benchmark::State& state) {
  const NoiseSchedule schedule = NoiseSchedule::linear(100);
  const AnalyticGaussianDenoiser denoiser(0.5, 0.05, schedule);
  const Field x = sample().to_field();
  RngStream rng = derive_stream(9, {});
  for (auto _ : state) benchmark::DoNotOptimize(reverse_step(x, 50, denoiser, schedule, rng));
}
BENCHMARK(BM_ReverseStep);

}  // namespace
}  // namespace patchbench

BENCHMARK_MAIN();
