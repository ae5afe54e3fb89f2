// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal layer kit with explicit forward/backward passes. Tensors are HWC
// row-major doubles; every operation is deterministic.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "patchbench/image.hpp"
#include "patchbench/rng.hpp"

namespace patchbench::nn {

using Tensor = Tensor3<double>;

struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  // (kernel * kernel * in_channels) x out_channels, row-major; the row index
  // is (ky * kernel + kx) * in_channels + ci.
  std::vector<double> weight;
  std::vector<double> bias;

  static Conv2d make(int in_channels, int out_channels, int kernel, int stride, int pad);
  int out_extent(int in_extent) const { return (in_extent + 2 * pad - kernel) / stride + 1; }

  Tensor forward(const Tensor& x) const;
  // Accumulates parameter gradients into `grad` (same layout) and returns dL/dx.
  Tensor backward(const Tensor& x, const Tensor& dy, Conv2d& grad) const;
};

struct Dense {
  int in_features = 0;
  int out_features = 0;
  std::vector<double> weight;  // in_features x out_features, row-major
  std::vector<double> bias;

  static Dense make(int in_features, int out_features);

  std::vector<double> forward(const std::vector<double>& x) const;
  std::vector<double> backward(const std::vector<double>& x, const std::vector<double>& dy,
                               Dense& grad) const;
};

void he_init(Conv2d& layer, RngStream& rng);
void he_init(Dense& layer, RngStream& rng);

// x * sigmoid(x); smooth everywhere so finite-difference checks are stable.
double silu(double x);
double silu_grad(double x);
Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& dy);
std::vector<double> silu(const std::vector<double>& x);
std::vector<double> silu_backward(const std::vector<double>& x, const std::vector<double>& dy);

double sigmoid(double x);

// 2x2 average pooling (odd trailing rows/cols are dropped).
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& x, const Tensor& dy);

// Smooth global max: (1/beta) * log(mean_p exp(beta * x_pc)) per channel.
std::vector<double> global_lse_pool(const Tensor& x, double beta);
Tensor global_lse_pool_backward(const Tensor& x, double beta, const std::vector<double>& dy);

// Nearest-neighbour 2x upsampling.
Tensor upsample2(const Tensor& x);
Tensor upsample2_backward(const Tensor& dy);

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& d, int a_channels, Tensor& da, Tensor& db);

std::vector<double> softmax(const std::vector<double>& logits);

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  // `params` and `grads` must list arrays in the same order on every call.
  void step(const std::vector<std::vector<double>*>& params,
            const std::vector<const std::vector<double>*>& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

void write_doubles(std::ostream& out, const std::vector<double>& values);
void read_doubles(std::istream& in, std::vector<double>& values);

}  // namespace patchbench::nn
