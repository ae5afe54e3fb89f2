// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/nn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include <Eigen/Dense>

#include "patchbench/error.hpp"

namespace patchbench::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Rows are output pixels, columns the receptive field in (ky, kx, ci) order.
RowMatrix im2col(const Conv2d& conv, const Tensor& x, int out_h, int out_w) {
  const int k = conv.kernel;
  const int cin = conv.in_channels;
  RowMatrix col = RowMatrix::Zero(static_cast<Eigen::Index>(out_h) * out_w, k * k * cin);
  for (int r = 0; r < out_h; ++r) {
    for (int c = 0; c < out_w; ++c) {
      double* row = col.row(static_cast<Eigen::Index>(r) * out_w + c).data();
      for (int ky = 0; ky < k; ++ky) {
        int y = r * conv.stride - conv.pad + ky;
        if (y < 0 || y >= x.height()) continue;
        for (int kx = 0; kx < k; ++kx) {
          int xx = c * conv.stride - conv.pad + kx;
          if (xx < 0 || xx >= x.width()) continue;
          const double* src = &x(y, xx, 0);
          std::copy(src, src + cin, row + (ky * k + kx) * cin);
        }
      }
    }
  }
  return col;
}

void col2im_add(const Conv2d& conv, const RowMatrix& dcol, int out_h, int out_w, Tensor& dx) {
  const int k = conv.kernel;
  const int cin = conv.in_channels;
  for (int r = 0; r < out_h; ++r) {
    for (int c = 0; c < out_w; ++c) {
      const double* row = dcol.row(static_cast<Eigen::Index>(r) * out_w + c).data();
      for (int ky = 0; ky < k; ++ky) {
        int y = r * conv.stride - conv.pad + ky;
        if (y < 0 || y >= dx.height()) continue;
        for (int kx = 0; kx < k; ++kx) {
          int xx = c * conv.stride - conv.pad + kx;
          if (xx < 0 || xx >= dx.width()) continue;
          double* dst = &dx(y, xx, 0);
          const double* src = row + (ky * k + kx) * cin;
          for (int ci = 0; ci < cin; ++ci) dst[ci] += src[ci];
        }
      }
    }
  }
}

}  // namespace

Conv2d Conv2d::make(int in_channels, int out_channels, int kernel, int stride, int pad) {
  Conv2d conv;
  conv.in_channels = in_channels;
  conv.out_channels = out_channels;
  conv.kernel = kernel;
  conv.stride = stride;
  conv.pad = pad;
  conv.weight.assign(static_cast<std::size_t>(kernel) * kernel * in_channels * out_channels, 0.0);
  conv.bias.assign(out_channels, 0.0);
  return conv;
}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.channels() != in_channels) {
    throw Error(ErrorKind::kShape, "conv input channel count mismatch");
  }
  const int out_h = out_extent(x.height());
  const int out_w = out_extent(x.width());
  RowMatrix col = im2col(*this, x, out_h, out_w);
  ConstMatrixMap w(weight.data(), kernel * kernel * in_channels, out_channels);
  Eigen::Map<const Eigen::RowVectorXd> b(bias.data(), out_channels);
  Tensor y(out_h, out_w, out_channels);
  MatrixMap out(y.values().data(), static_cast<Eigen::Index>(out_h) * out_w, out_channels);
  out.noalias() = col * w;
  out.rowwise() += b;
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy, Conv2d& grad) const {
  const int out_h = dy.height();
  const int out_w = dy.width();
  RowMatrix col = im2col(*this, x, out_h, out_w);
  ConstMatrixMap w(weight.data(), kernel * kernel * in_channels, out_channels);
  ConstMatrixMap g(dy.values().data(), static_cast<Eigen::Index>(out_h) * out_w, out_channels);
  MatrixMap dw(grad.weight.data(), kernel * kernel * in_channels, out_channels);
  Eigen::Map<Eigen::RowVectorXd> db(grad.bias.data(), out_channels);
  dw.noalias() += col.transpose() * g;
  db += g.colwise().sum();
  RowMatrix dcol = g * w.transpose();
  Tensor dx(x.height(), x.width(), x.channels(), 0.0);
  col2im_add(*this, dcol, out_h, out_w, dx);
  return dx;
}

Dense Dense::make(int in_features, int out_features) {
  Dense d;
  d.in_features = in_features;
  d.out_features = out_features;
  d.weight.assign(static_cast<std::size_t>(in_features) * out_features, 0.0);
  d.bias.assign(out_features, 0.0);
  return d;
}

std::vector<double> Dense::forward(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != in_features) {
    throw Error(ErrorKind::kShape, "dense input size mismatch");
  }
  std::vector<double> y(bias);
  Eigen::Map<const Eigen::RowVectorXd> xv(x.data(), in_features);
  ConstMatrixMap w(weight.data(), in_features, out_features);
  Eigen::Map<Eigen::RowVectorXd> yv(y.data(), out_features);
  yv.noalias() += xv * w;
  return y;
}

std::vector<double> Dense::backward(const std::vector<double>& x, const std::vector<double>& dy,
                                    Dense& grad) const {
  Eigen::Map<const Eigen::RowVectorXd> xv(x.data(), in_features);
  Eigen::Map<const Eigen::RowVectorXd> g(dy.data(), out_features);
  ConstMatrixMap w(weight.data(), in_features, out_features);
  MatrixMap dw(grad.weight.data(), in_features, out_features);
  dw.noalias() += xv.transpose() * g;
  for (int o = 0; o < out_features; ++o) grad.bias[o] += dy[o];
  std::vector<double> dx(in_features);
  Eigen::Map<Eigen::RowVectorXd> dxv(dx.data(), in_features);
  dxv.noalias() = g * w.transpose();
  return dx;
}

void he_init(Conv2d& layer, RngStream& rng) {
  const double fan_in = static_cast<double>(layer.kernel) * layer.kernel * layer.in_channels;
  const double bound = std::sqrt(6.0 / fan_in);
  for (double& w : layer.weight) w = rng.uniform(-bound, bound);
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

void he_init(Dense& layer, RngStream& rng) {
  const double bound = std::sqrt(6.0 / layer.in_features);
  for (double& w : layer.weight) w = rng.uniform(-bound, bound);
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

double silu_grad(double x) {
  double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

Tensor silu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = silu(v);
  return y;
}

Tensor silu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx.values()[i] *= silu_grad(x.values()[i]);
  return dx;
}

std::vector<double> silu(const std::vector<double>& x) {
  std::vector<double> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](double v) { return silu(v); });
  return y;
}

std::vector<double> silu_backward(const std::vector<double>& x, const std::vector<double>& dy) {
  std::vector<double> dx(dy.size());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[i] * silu_grad(x[i]);
  return dx;
}

Tensor avg_pool2(const Tensor& x) {
  Tensor y(x.height() / 2, x.width() / 2, x.channels(), 0.0);
  for (int r = 0; r < y.height(); ++r)
    for (int c = 0; c < y.width(); ++c)
      for (int ch = 0; ch < y.channels(); ++ch)
        y(r, c, ch) = 0.25 * (x(2 * r, 2 * c, ch) + x(2 * r, 2 * c + 1, ch) +
                              x(2 * r + 1, 2 * c, ch) + x(2 * r + 1, 2 * c + 1, ch));
  return y;
}

Tensor avg_pool2_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx(x.height(), x.width(), x.channels(), 0.0);
  for (int r = 0; r < dy.height(); ++r)
    for (int c = 0; c < dy.width(); ++c)
      for (int ch = 0; ch < dy.channels(); ++ch) {
        double g = 0.25 * dy(r, c, ch);
        dx(2 * r, 2 * c, ch) += g;
        dx(2 * r, 2 * c + 1, ch) += g;
        dx(2 * r + 1, 2 * c, ch) += g;
        dx(2 * r + 1, 2 * c + 1, ch) += g;
      }
  return dx;
}

namespace {

// Per-channel softmax weights over spatial positions plus the pooled value.
void lse_weights(const Tensor& x, double beta, std::vector<double>& pooled, Tensor* weights) {
  const int n = x.height() * x.width();
  const int channels = x.channels();
  std::vector<double> peak(channels, -std::numeric_limits<double>::infinity());
  for (int p = 0; p < n; ++p)
    for (int ch = 0; ch < channels; ++ch)
      peak[ch] = std::max(peak[ch], x.values()[static_cast<std::size_t>(p) * channels + ch]);
  std::vector<double> sum(channels, 0.0);
  if (weights) *weights = Tensor(x.height(), x.width(), channels);
  for (int p = 0; p < n; ++p)
    for (int ch = 0; ch < channels; ++ch) {
      const std::size_t i = static_cast<std::size_t>(p) * channels + ch;
      const double e = std::exp(beta * (x.values()[i] - peak[ch]));
      sum[ch] += e;
      if (weights) weights->values()[i] = e;
    }
  pooled.assign(channels, 0.0);
  for (int ch = 0; ch < channels; ++ch) {
    pooled[ch] = peak[ch] + (std::log(sum[ch]) - std::log(static_cast<double>(n))) / beta;
  }
  if (weights) {
    for (int p = 0; p < n; ++p)
      for (int ch = 0; ch < channels; ++ch)
        weights->values()[static_cast<std::size_t>(p) * channels + ch] /= sum[ch];
  }
}

}  // namespace

std::vector<double> global_lse_pool(const Tensor& x, double beta) {
  std::vector<double> pooled;
  lse_weights(x, beta, pooled, nullptr);
  return pooled;
}

Tensor global_lse_pool_backward(const Tensor& x, double beta, const std::vector<double>& dy) {
  std::vector<double> pooled;
  Tensor w;
  lse_weights(x, beta, pooled, &w);
  const int channels = x.channels();
  for (std::size_t i = 0; i < w.size(); ++i) w.values()[i] *= dy[i % channels];
  return w;
}

Tensor upsample2(const Tensor& x) {
  Tensor y(x.height() * 2, x.width() * 2, x.channels());
  for (int r = 0; r < y.height(); ++r)
    for (int c = 0; c < y.width(); ++c)
      for (int ch = 0; ch < y.channels(); ++ch) y(r, c, ch) = x(r / 2, c / 2, ch);
  return y;
}

Tensor upsample2_backward(const Tensor& dy) {
  Tensor dx(dy.height() / 2, dy.width() / 2, dy.channels(), 0.0);
  for (int r = 0; r < dy.height(); ++r)
    for (int c = 0; c < dy.width(); ++c)
      for (int ch = 0; ch < dy.channels(); ++ch) dx(r / 2, c / 2, ch) += dy(r, c, ch);
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw Error(ErrorKind::kShape, "concat spatial mismatch");
  }
  Tensor y(a.height(), a.width(), a.channels() + b.channels());
  for (int r = 0; r < a.height(); ++r)
    for (int c = 0; c < a.width(); ++c) {
      for (int ch = 0; ch < a.channels(); ++ch) y(r, c, ch) = a(r, c, ch);
      for (int ch = 0; ch < b.channels(); ++ch) y(r, c, a.channels() + ch) = b(r, c, ch);
    }
  return y;
}

void split_channels(const Tensor& d, int a_channels, Tensor& da, Tensor& db) {
  const int b_channels = d.channels() - a_channels;
  da = Tensor(d.height(), d.width(), a_channels);
  db = Tensor(d.height(), d.width(), b_channels);
  for (int r = 0; r < d.height(); ++r)
    for (int c = 0; c < d.width(); ++c) {
      for (int ch = 0; ch < a_channels; ++ch) da(r, c, ch) = d(r, c, ch);
      for (int ch = 0; ch < b_channels; ++ch) db(r, c, ch) = d(r, c, a_channels + ch);
    }
}

std::vector<double> softmax(const std::vector<double>& logits) {
  double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] = std::exp(logits[i] - peak));
  for (double& v : p) v /= sum;
  return p;
}

void Adam::step(const std::vector<std::vector<double>*>& params,
                const std::vector<const std::vector<double>*>& grads) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    const auto& g = *grads[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void write_doubles(std::ostream& out, const std::vector<double>& values) {
  std::uint64_t n = values.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::istream& in, std::vector<double>& values) {
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || n != values.size()) {
    throw Error(ErrorKind::kFormat, "parameter array size mismatch in model file");
  }
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw Error(ErrorKind::kFormat, "truncated model file");
}

}  // namespace patchbench::nn
