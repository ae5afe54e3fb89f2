// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// Populates the shared test model cache.

#include <iostream>

#include "test_models.hpp"

int main() {
  using namespace patchbench::testing;
  std::cout << "detector:  " << detector_path().string() << '\n';
  std::cout << "segmenter: " << segmenter_path().string() << '\n';
  std::cout << "denoiser:  " << denoiser_path().string() << '\n';
  return 0;
}
