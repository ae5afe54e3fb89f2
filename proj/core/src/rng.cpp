// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/rng.hpp"

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace patchbench {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Folds the path length in first so that [a] and [a, 0] key different streams.
std::uint64_t stream_key(std::uint64_t master_seed, const std::vector<std::uint64_t>& path) {
  std::uint64_t h = splitmix64(master_seed ^ 0x70617463686265ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(path.size()));
  for (std::uint64_t component : path) h = splitmix64(h ^ splitmix64(component));
  return h;
}

}  // namespace

RngStream::RngStream(std::uint64_t master_seed, std::vector<std::uint64_t> stream_id)
    : master_seed_(master_seed), stream_id_(std::move(stream_id)),
      engine_(stream_key(master_seed_, stream_id_)) {}

double RngStream::uniform() { return boost::random::uniform_01<double>()(engine_); }

int RngStream::uniform_int(int lo, int hi) {
  return boost::random::uniform_int_distribution<int>(lo, hi)(engine_);
}

double RngStream::normal() { return boost::random::normal_distribution<double>()(engine_); }

RngStream RngStream::child(std::uint64_t component) const {
  auto path = stream_id_;
  path.push_back(component);
  return RngStream(master_seed_, std::move(path));
}

RngStream derive_stream(std::uint64_t master_seed, std::vector<std::uint64_t> stream_id) {
  return RngStream(master_seed, std::move(stream_id));
}

}  // namespace patchbench
