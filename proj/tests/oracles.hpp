/*
 *  Copyright 2026 The kernelmap Authors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 */

#pragma once

#include "kmap/core.hpp"
#include "kmap/model.hpp"

#include <cmath>

namespace kmap::testing {

// Ranks recomputed from scratch for every pair: rank of j from i is one plus
// the number of points strictly closer, or equally close with a smaller index.
inline double trust_oracle(const MatrixXd& x, const Points2& y, std::size_t n) {
  const std::size_t count = static_cast<std::size_t>(x.rows());
  auto dist = [](const auto& m, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double d = m(static_cast<Eigen::Index>(a), c) - m(static_cast<Eigen::Index>(b), c);
      s += d * d;
    }
    return s;
  };
  auto rank = [&](const auto& m, std::size_t i, std::size_t j) {
    std::size_t r = 1;
    const double dij = dist(m, i, j);
    for (std::size_t k = 0; k < count; ++k) {
      if (k == i || k == j) continue;
      const double dik = dist(m, i, k);
      if (dik < dij || (dik == dij && k < j)) ++r;
    }
    return r;
  };
  long long total = 0;
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < count; ++j) {
      if (j == i || rank(y, i, j) > n) continue;
      const std::size_t r = rank(x, i, j);
      if (r > n) total += static_cast<long long>(r - n);
    }
  }
  const double nn = static_cast<double>(n), nc = static_cast<double>(count);
  return 1.0 - 2.0 / (nc * nn * (2.0 * nc - 3.0 * nn - 1.0)) * static_cast<double>(total);
}

/// Plain-loop Nadaraya-Watson value with kernel weight w(k, u) on squared distance u.
template <typename Weight>
double nw_oracle(double qx, double qy, const Points2& anchors, const std::vector<double>& values, Weight&& w) {
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index k = 0; k < anchors.rows(); ++k) {
    const double dx = qx - anchors(k, 0);
    const double dy = qy - anchors(k, 1);
    const double weight = w(static_cast<std::size_t>(k), dx * dx + dy * dy);
    num += weight * values[static_cast<std::size_t>(k)];
    den += weight;
  }
  return num / den;
}

/// Smallest |ReLU input| over the hidden layers of a train-mode pass. Central
/// differences are only valid when this exceeds the step by a wide margin.
inline double kink_margin(const ModelState<double>& model, const MatrixXd& x) {
  const auto cache = forward_train(model, x);
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < cache.layers.size(); ++l) {
    const auto& layer = model.mlp.layers[l];
    const MatrixXd pre =
        (cache.layers[l].normalized.array().rowwise() * layer.gamma.transpose().array()).rowwise() +
        layer.beta.transpose().array();
    m = std::min(m, pre.cwiseAbs().minCoeff());
  }
  return m;
}

}  // namespace kmap::testing
