// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace patchbench {

// Deterministic random stream keyed by (master seed, stream path). The engine
// and the distributions are fully specified, so the same key yields the same
// sequence on every platform.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::vector<std::uint64_t> stream_id);

  std::uint64_t master_seed() const noexcept { return master_seed_; }
  const std::vector<std::uint64_t>& stream_id() const noexcept { return stream_id_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);
  double normal();

  // Child stream whose id is this stream's id extended by `component`.
  RngStream child(std::uint64_t component) const;

 private:
  std::uint64_t master_seed_;
  std::vector<std::uint64_t> stream_id_;
  std::mt19937_64 engine_;
};

RngStream derive_stream(std::uint64_t master_seed, std::vector<std::uint64_t> stream_id);
inline RngStream derive_stream(std::uint64_t master_seed,
                               std::initializer_list<std::uint64_t> stream_id) {
  return derive_stream(master_seed, std::vector<std::uint64_t>(stream_id));
}

}  // namespace patchbench
