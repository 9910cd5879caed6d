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

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace kmap {

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr std::size_t kLayerCount = 4;

enum class Mode : std::uint8_t { train = 0, inference = 1 };

// One linear layer, optionally followed by batch normalization and ReLU.
template <typename T>
struct DenseLayer {
  Matrix<T> weight;  // out x in
  Vector<T> bias;
  bool normalized = true;  // batchnorm + ReLU after the affine map
  Vector<T> gamma;
  Vector<T> beta;
  Vector<T> running_mean;
  Vector<T> running_var;

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }
};

template <typename T>
struct MlpParams {
  std::vector<DenseLayer<T>> layers;
};

// Kernel shape parameters stored raw; the effective values are their squares,
// so alpha, beta >= 0 for any raw value.
template <typename T>
struct KernelParams {
  T alpha_raw = T(1);
  T beta_raw = T(1);

  T alpha() const { return alpha_raw * alpha_raw; }
  T beta() const { return beta_raw * beta_raw; }
};

template <typename T>
struct ModelState {
  MlpParams<T> mlp;
  KernelParams<T> kernel;
  std::size_t input_dim = 0;
  Mode mode = Mode::train;
  std::uint64_t seed = 0;
};

// Gradient (and optimizer moment) storage with the trainable layout of a model.
template <typename T>
struct ParamGrads {
  struct Layer {
    Matrix<T> weight;
    Vector<T> bias;
    Vector<T> gamma;
    Vector<T> beta;
  };
  std::vector<Layer> layers;
  T alpha_raw = T(0);
  T beta_raw = T(0);
};

template <typename T>
ModelState<T> init_model(std::size_t d, std::uint64_t seed) {
  if (d < 2) {
    fail(ErrorCode::invalid_dimension,
         "input dimension must be at least 2, got " + std::to_string(d));
  }
  ModelState<T> model;
  model.input_dim = d;
  model.seed = seed;
  model.mode = Mode::train;
  Rng rng(seed);
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    const std::size_t out = (l + 1 == kLayerCount) ? 2 : d;
    DenseLayer<T> layer;
    layer.weight.resize(out, d);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = static_cast<T>(rng.uniform(-bound, bound));
      }
    }
    layer.bias = Vector<T>::Zero(out);
    layer.normalized = (l + 1 != kLayerCount);
    if (layer.normalized) {
      layer.gamma = Vector<T>::Ones(out);
      layer.beta = Vector<T>::Zero(out);
      layer.running_mean = Vector<T>::Zero(out);
      layer.running_var = Vector<T>::Ones(out);
    }
    model.mlp.layers.push_back(std::move(layer));
  }
  return model;
}

template <typename T>
ParamGrads<T> zero_grads_like(const ModelState<T>& model) {
  ParamGrads<T> g;
  for (const auto& layer : model.mlp.layers) {
    typename ParamGrads<T>::Layer gl;
    gl.weight = Matrix<T>::Zero(layer.weight.rows(), layer.weight.cols());
    gl.bias = Vector<T>::Zero(layer.bias.size());
    gl.gamma = Vector<T>::Zero(layer.gamma.size());
    gl.beta = Vector<T>::Zero(layer.beta.size());
    g.layers.push_back(std::move(gl));
  }
  return g;
}

// A named contiguous block of trainable scalars.
template <typename T>
struct ParamBlock {
  std::string name;
  std::span<T> values;
};

// Trainable tensors in a fixed order: per layer weight, bias, gamma, beta; then
// alpha_raw, beta_raw. Running statistics are not trainable.
template <typename T>
std::vector<ParamBlock<T>> trainable_blocks(ModelState<T>& model) {
  std::vector<ParamBlock<T>> blocks;
  for (std::size_t l = 0; l < model.mlp.layers.size(); ++l) {
    auto& layer = model.mlp.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    blocks.push_back({p + "weight", {layer.weight.data(), static_cast<std::size_t>(layer.weight.size())}});
    blocks.push_back({p + "bias", {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}});
    if (layer.normalized) {
      blocks.push_back({p + "gamma", {layer.gamma.data(), static_cast<std::size_t>(layer.gamma.size())}});
      blocks.push_back({p + "beta", {layer.beta.data(), static_cast<std::size_t>(layer.beta.size())}});
    }
  }
  blocks.push_back({"kernel.alpha_raw", {&model.kernel.alpha_raw, 1}});
  blocks.push_back({"kernel.beta_raw", {&model.kernel.beta_raw, 1}});
  return blocks;
}

template <typename T>
std::vector<ParamBlock<T>> grad_blocks(ParamGrads<T>& g) {
  std::vector<ParamBlock<T>> blocks;
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    auto& layer = g.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    blocks.push_back({p + "weight", {layer.weight.data(), static_cast<std::size_t>(layer.weight.size())}});
    blocks.push_back({p + "bias", {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}});
    if (layer.gamma.size() > 0) {
      blocks.push_back({p + "gamma", {layer.gamma.data(), static_cast<std::size_t>(layer.gamma.size())}});
      blocks.push_back({p + "beta", {layer.beta.data(), static_cast<std::size_t>(layer.beta.size())}});
    }
  }
  blocks.push_back({"kernel.alpha_raw", {&g.alpha_raw, 1}});
  blocks.push_back({"kernel.beta_raw", {&g.beta_raw, 1}});
  return blocks;
}

template <typename T>
bool parameters_finite(const ModelState<T>& model) {
  for (const auto& layer : model.mlp.layers) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
    if (layer.normalized) {
      if (!layer.gamma.allFinite() || !layer.beta.allFinite() ||
          !layer.running_mean.allFinite() || !layer.running_var.allFinite()) {
        return false;
      }
      if ((layer.running_var.array() <= T(0)).any()) return false;
    }
  }
  return std::isfinite(model.kernel.alpha_raw) && std::isfinite(model.kernel.beta_raw);
}

// Per-layer intermediates of a train-mode pass, kept for the backward pass.
template <typename T>
struct LayerCache {
  Matrix<T> input;       // B x in
  Matrix<T> normalized;  // B x out, (z - mean) / std
  Vector<T> inv_std;
  Vector<T> batch_mean;
  Vector<T> batch_var;   // biased
  Matrix<T> activated;   // B x out, post-ReLU (or linear output for last layer)
};

template <typename T>
struct ForwardCache {
  std::vector<LayerCache<T>> layers;
  Matrix<T> output;  // B x 2
};

namespace detail {

template <typename T>
void check_input(const ModelState<T>& model, const Matrix<T>& x) {
  if (x.rows() == 0) fail(ErrorCode::invalid_input, "empty batch");
  if (static_cast<std::size_t>(x.cols()) != model.input_dim) {
    fail(ErrorCode::dimension_mismatch,
         "batch has " + std::to_string(x.cols()) + " columns, model expects " +
             std::to_string(model.input_dim));
  }
  if (!x.allFinite()) fail(ErrorCode::invalid_input, "non-finite input");
}

}  // namespace detail

// Train-mode pass: batch statistics, no side effects on running statistics.
template <typename T>
ForwardCache<T> forward_train(const ModelState<T>& model, const Matrix<T>& x) {
  detail::check_input(model, x);
  const Eigen::Index b = x.rows();
  if (b < 2) fail(ErrorCode::batch_too_small, "train-mode forward needs at least 2 rows");
  ForwardCache<T> cache;
  Matrix<T> h = x;
  for (const auto& layer : model.mlp.layers) {
    LayerCache<T> lc;
    lc.input = h;
    Matrix<T> z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (layer.normalized) {
      lc.batch_mean = z.colwise().mean().transpose();
      z.rowwise() -= lc.batch_mean.transpose();
      lc.batch_var = z.array().square().colwise().mean().transpose();
      lc.inv_std = (lc.batch_var.array() + T(kBatchNormEpsilon)).rsqrt().matrix();
      lc.normalized = z * lc.inv_std.asDiagonal();
      Matrix<T> y = lc.normalized * layer.gamma.asDiagonal();
      y.rowwise() += layer.beta.transpose();
      lc.activated = y.cwiseMax(T(0));
    } else {
      lc.activated = z;
    }
    h = lc.activated;
    cache.layers.push_back(std::move(lc));
  }
  cache.output = std::move(h);
  return cache;
}

// Folds the batch statistics of a train-mode pass into the running statistics
// (unbiased variance, momentum kBatchNormMomentum).
template <typename T>
void update_running_stats(ModelState<T>& model, const ForwardCache<T>& cache) {
  const auto b = static_cast<T>(cache.output.rows());
  const T m = T(kBatchNormMomentum);
  for (std::size_t l = 0; l < model.mlp.layers.size(); ++l) {
    auto& layer = model.mlp.layers[l];
    if (!layer.normalized) continue;
    const auto& lc = cache.layers[l];
    layer.running_mean = (T(1) - m) * layer.running_mean + m * lc.batch_mean;
    layer.running_var = (T(1) - m) * layer.running_var + m * (lc.batch_var * (b / (b - T(1))));
  }
}

// Inference-mode pass. Rows are mapped one at a time so a row's output is
// bit-identical whatever batch it arrives in.
template <typename T>
Matrix<T> forward_inference(const ModelState<T>& model, const Matrix<T>& x) {
  detail::check_input(model, x);
  struct Affine {
    Matrix<T> weight;
    Vector<T> shift;
    bool relu;
  };
  std::vector<Affine> folded;
  for (const auto& layer : model.mlp.layers) {
    if (layer.normalized) {
      const Vector<T> scale =
          (layer.gamma.array() * (layer.running_var.array() + T(kBatchNormEpsilon)).rsqrt()).matrix();
      folded.push_back({scale.asDiagonal() * layer.weight,
                        (layer.beta.array() + (layer.bias - layer.running_mean).array() * scale.array()).matrix(),
                        true});
    } else {
      folded.push_back({layer.weight, layer.bias, false});
    }
  }
  Matrix<T> out(x.rows(), 2);
  parallel_for(0, static_cast<std::size_t>(x.rows()), [&](std::size_t r) {
    Vector<T> h = x.row(static_cast<Eigen::Index>(r)).transpose();
    for (const auto& f : folded) {
      Vector<T> z = f.weight * h + f.shift;
      h = f.relu ? Vector<T>(z.cwiseMax(T(0))) : z;
    }
    out.row(static_cast<Eigen::Index>(r)) = h.transpose();
  });
  return out;
}

// Mode-dispatching forward.
template <typename T>
Matrix<T> forward(const ModelState<T>& model, const Matrix<T>& x) {
  if (model.mode == Mode::train) return forward_train(model, x).output;
  return forward_inference(model, x);
}

// Reverse pass through the MLP given dLoss/dOutput (B x 2). Writes the MLP part
// of `grads`; kernel gradients are left untouched.
template <typename T>
void backward(const ModelState<T>& model, const ForwardCache<T>& cache,
              const Matrix<T>& d_output, ParamGrads<T>& grads) {
  Matrix<T> delta = d_output;
  const auto b = static_cast<T>(d_output.rows());
  for (std::size_t li = model.mlp.layers.size(); li-- > 0;) {
    const auto& layer = model.mlp.layers[li];
    const auto& lc = cache.layers[li];
    auto& gl = grads.layers[li];
    Matrix<T> dz;
    if (layer.normalized) {
      // ReLU
      Matrix<T> dy = (lc.activated.array() > T(0)).select(delta, T(0));
      gl.gamma = (dy.array() * lc.normalized.array()).colwise().sum().transpose();
      gl.beta = dy.colwise().sum().transpose();
      Matrix<T> dxhat = dy * layer.gamma.asDiagonal();
      const Eigen::Matrix<T, 1, Eigen::Dynamic> sum_dxhat = dxhat.colwise().sum();
      const Eigen::Matrix<T, 1, Eigen::Dynamic> sum_dxhat_xhat =
          (dxhat.array() * lc.normalized.array()).colwise().sum();
      dz = (b * dxhat).rowwise() - sum_dxhat;
      dz -= (lc.normalized.array().rowwise() * sum_dxhat_xhat.array()).matrix();
      dz = dz * (lc.inv_std / b).asDiagonal();
    } else {
      dz = delta;
    }
    gl.weight = dz.transpose() * lc.input;
    gl.bias = dz.colwise().sum().transpose();
    if (li > 0) delta = dz * layer.weight;
  }
}

}  // namespace kmap
