// Copyright 2026 The patchbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchbench/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "patchbench/error.hpp"

namespace patchbench {

namespace {

Eigen::MatrixXd activation_matrix(const FeatureMaps& features, double& scale) {
  const auto& t = features.data;
  const Eigen::Index rows = static_cast<Eigen::Index>(t.height()) * t.width();
  const Eigen::Index cols = t.channels();
  Eigen::MatrixXd o(rows, cols);
  scale = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double v = t.values()[static_cast<std::size_t>(r * cols + c)];
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::kNumeric,
                    fmt::format("non-finite activation at flat index {}", r * cols + c));
      }
      o(r, c) = v;
      scale = std::max(scale, std::abs(v));
    }
  }
  if (scale > 0) o /= scale;
  return o;
}

}  // namespace

SvdResult leading_singular_triplet(const FeatureMaps& features) {
  double scale = 0;
  Eigen::MatrixXd o = activation_matrix(features, scale);
  SvdResult result;
  result.u.assign(static_cast<std::size_t>(o.rows()), 0.0);
  result.v.assign(static_cast<std::size_t>(o.cols()), 0.0);
  if (scale == 0) {
    // Any unit vectors are singular vectors of the zero matrix.
    if (!result.u.empty()) result.u[0] = 1.0;
    if (!result.v.empty()) result.v[0] = 1.0;
    return result;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(o, Eigen::ComputeThinU | Eigen::ComputeThinV);
  result.sigma = svd.singularValues()(0) * scale;
  for (Eigen::Index i = 0; i < o.rows(); ++i) result.u[i] = svd.matrixU()(i, 0);
  for (Eigen::Index i = 0; i < o.cols(); ++i) result.v[i] = svd.matrixV()(i, 0);
  return result;
}

Heatmap eigencam(const FeatureMaps& features) {
  double scale = 0;
  Eigen::MatrixXd o = activation_matrix(features, scale);
  Heatmap map;
  map.height = features.data.height();
  map.width = features.data.width();
  map.values.assign(static_cast<std::size_t>(o.rows()), 0.0);
  if (scale == 0) return map;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(o, Eigen::ComputeThinV);
  Eigen::VectorXd projection = (o * svd.matrixV().col(0)).cwiseAbs();
  const double peak = projection.maxCoeff();
  if (peak == 0) return map;
  for (Eigen::Index i = 0; i < projection.size(); ++i) {
    map.values[i] = std::round(projection(i) / peak / kHeatmapResolution) * kHeatmapResolution;
  }
  return map;
}

Heatmap upsample(const Heatmap& heatmap, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) {
    throw Error(ErrorKind::kValue, "upsample target must be at least 1x1");
  }
  Heatmap out;
  out.height = target_h;
  out.width = target_w;
  out.values.assign(static_cast<std::size_t>(target_h) * target_w, 0.0);
  const auto source_coord = [](int i, int target, int source) {
    return target == 1 ? 0.0 : static_cast<double>(i) * (source - 1) / (target - 1);
  };
  for (int r = 0; r < target_h; ++r) {
    const double y = source_coord(r, target_h, heatmap.height);
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, heatmap.height - 1);
    const double fy = y - y0;
    for (int c = 0; c < target_w; ++c) {
      const double x = source_coord(c, target_w, heatmap.width);
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, heatmap.width - 1);
      const double fx = x - x0;
      const double top = heatmap.at(y0, x0) * (1 - fx) + heatmap.at(y0, x1) * fx;
      const double bottom = heatmap.at(y1, x0) * (1 - fx) + heatmap.at(y1, x1) * fx;
      out.values[static_cast<std::size_t>(r) * target_w + c] = top * (1 - fy) + bottom * fy;
    }
  }
  const double peak = out.max();
  if (peak > 0 && peak != 1.0) {
    for (double& v : out.values) v /= peak;
  }
  return out;
}

std::vector<SalientRegion> salient_components(const Heatmap& heatmap, double threshold_fraction) {
  if (!(threshold_fraction > 0 && threshold_fraction <= 1)) {
    throw Error(ErrorKind::kValue, "threshold fraction must lie in (0, 1]");
  }
  const double threshold = threshold_fraction * heatmap.max();
  const int h = heatmap.height;
  const int w = heatmap.width;
  auto hot = [&](int r, int c) {
    const double v = heatmap.at(r, c);
    return v > 0 && v >= threshold;
  };
  std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
  std::vector<SalientRegion> regions;
  for (int r0 = 0; r0 < h; ++r0) {
    for (int c0 = 0; c0 < w; ++c0) {
      if (!hot(r0, c0) || label[r0 * w + c0] >= 0) continue;
      const int id = static_cast<int>(regions.size());
      int top = r0, left = c0, bottom = r0, right = c0;
      double mass = 0;
      std::deque<std::pair<int, int>> queue{{r0, c0}};
      label[r0 * w + c0] = id;
      while (!queue.empty()) {
        auto [r, c] = queue.front();
        queue.pop_front();
        mass += heatmap.at(r, c);
        top = std::min(top, r);
        bottom = std::max(bottom, r);
        left = std::min(left, c);
        right = std::max(right, c);
        constexpr int kDr[4] = {-1, 1, 0, 0};
        constexpr int kDc[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int nr = r + kDr[k];
          const int nc = c + kDc[k];
          if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
          if (label[nr * w + nc] >= 0 || !hot(nr, nc)) continue;
          label[nr * w + nc] = id;
          queue.emplace_back(nr, nc);
        }
      }
      regions.push_back({{top, left, bottom - top + 1, right - left + 1}, mass});
    }
  }
  std::stable_sort(regions.begin(), regions.end(),
                   [](const SalientRegion& a, const SalientRegion& b) { return a.mass > b.mass; });
  return regions;
}

std::vector<Region> extract_salient_regions(const Heatmap& heatmap, double threshold_fraction) {
  std::vector<Region> out;
  for (const auto& s : salient_components(heatmap, threshold_fraction)) out.push_back(s.rect);
  return out;
}

}  // namespace patchbench
