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
#include "kmap/dataset.hpp"

#include <Eigen/QR>

#include <numeric>
#include <sstream>
#include <utility>

namespace kmap {

/// Embeddings that are a random rotation of 2D latent coordinates padded with
/// Gaussian noise, scored by a smooth two-bump function of the latents.
struct SyntheticSpec {
  std::size_t n = 2000;
  std::size_t dim = 16;
  double pad_noise = 0.1;
  double score_noise = 0.5;
  double base = 10.0;
  double bump_height = 4.0;
  double dip_depth = 3.0;
  double bump_width = 0.25;
  double dip_width = 0.3;
  std::uint64_t seed = 1;
};

inline double two_bump(double z0, double z1, const SyntheticSpec& spec) {
  const double a = (z0 + 0.4) * (z0 + 0.4) + (z1 - 0.3) * (z1 - 0.3);
  const double b = (z0 - 0.45) * (z0 - 0.45) + (z1 + 0.35) * (z1 + 0.35);
  return spec.base + spec.bump_height * std::exp(-a / (2.0 * spec.bump_width * spec.bump_width)) -
         spec.dip_depth * std::exp(-b / (2.0 * spec.dip_width * spec.dip_width));
}

/// Latent coordinates (N x 2) alongside the dataset, for oracles.
struct SyntheticData {
  Dataset data;
  MatrixXd latent;
};

inline SyntheticData make_synthetic(const SyntheticSpec& spec) {
  if (spec.dim < 2) fail(ErrorCode::invalid_dimension, "synthetic dimension must be at least 2");
  Rng rng(spec.seed);
  MatrixXd g(spec.dim, spec.dim);
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = rng.normal();
  }
  const MatrixXd rotation = Eigen::HouseholderQR<MatrixXd>(g).householderQ();
  SyntheticData out;
  out.latent.resize(static_cast<Eigen::Index>(spec.n), 2);
  out.data.x.resize(static_cast<Eigen::Index>(spec.n), static_cast<Eigen::Index>(spec.dim));
  out.data.s.resize(spec.n);
  Vector<double> v(spec.dim);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const double z0 = rng.uniform(-1.0, 1.0);
    const double z1 = rng.uniform(-1.0, 1.0);
    out.latent(row, 0) = z0;
    out.latent(row, 1) = z1;
    v(0) = z0;
    v(1) = z1;
    for (std::size_t k = 2; k < spec.dim; ++k) v(static_cast<Eigen::Index>(k)) = spec.pad_noise * rng.normal();
    out.data.x.row(row) = (rotation * v).cast<float>().transpose();
    out.data.s[i] = static_cast<float>(two_bump(z0, z1, spec) + spec.score_noise * rng.normal());
    out.data.ids.push_back("p" + std::to_string(i));
    std::ostringstream meta;
    meta.precision(4);
    meta << "latent=(" << z0 << ", " << z1 << ")";
    out.data.meta.push_back(meta.str());
  }
  return out;
}

/// First `n_train` rows for training, the remaining `n_test` held out.
inline std::pair<Dataset, Dataset> make_synthetic_split(SyntheticSpec spec, std::size_t n_train,
                                                        std::size_t n_test) {
  spec.n = n_train + n_test;
  const Dataset all = make_synthetic(spec).data;
  std::vector<std::size_t> head(n_train), tail(n_test);
  std::iota(head.begin(), head.end(), std::size_t{0});
  std::iota(tail.begin(), tail.end(), n_train);
  return {subset(all, head), subset(all, tail)};
}

}  // namespace kmap
