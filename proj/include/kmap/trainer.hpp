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
#include "kmap/kernels.hpp"
#include "kmap/losses.hpp"
#include "kmap/model.hpp"

#include <chrono>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace kmap {

/// Per-epoch train/validation partition; is_val[i] marks validation rows.
struct SplitAssignment {
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::vector<char> is_val;

  std::size_t validation_count() const {
    return static_cast<std::size_t>(std::count(is_val.begin(), is_val.end(), char{1}));
  }
};

/// Uniform 9:1 split: round(N / 10) validation rows (at least one).
inline SplitAssignment split_epoch(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  if (n < 2) fail(ErrorCode::too_few_points, "split needs at least 2 points");
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(n) / 10.0)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 2 * epoch + 1));
  rng.shuffle(order.begin(), order.end());
  SplitAssignment split{epoch, seed, std::vector<char>(n, 0)};
  for (std::size_t i = 0; i < n_val; ++i) split.is_val[order[i]] = 1;
  return split;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 1000;
  double lr = 0.002;
  double lambda = 0.125;
  double w1 = 1.0;
  double w2 = 0.3;
  std::uint64_t seed = 42;
  bool ablate_kr = false;  // no regression term: neighborhood loss only
  bool ablate_gk = false;  // kernel frozen at the standard t-kernel
  Balance balance;
  AdamConfig adam;
  double grad_clip = 10.0;  // global-norm clip; <= 0 disables
  bool refresh_batchnorm = true;
  bool deterministic = false;
};

inline void validate(const TrainConfig& c) {
  if (c.epochs < 1) fail(ErrorCode::invalid_config, "epochs must be at least 1");
  if (c.batch < 4) fail(ErrorCode::invalid_config, "batch must be at least 4");
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) fail(ErrorCode::invalid_config, "learning rate must be positive");
  if (!(c.lambda >= 0.0)) fail(ErrorCode::invalid_config, "lambda must be non-negative");
  if (!(c.w1 >= 0.0) || !(c.w2 >= 0.0)) fail(ErrorCode::invalid_config, "regression weights must be non-negative");
  if (c.balance.mode != BalanceMode::none && !(c.balance.k > 0.0)) {
    fail(ErrorCode::invalid_config, "balance steepness k must be positive");
  }
}

struct EpochRecord {
  LossBreakdown loss;  // mean over the epoch's steps
  double alpha = 1.0;
  double beta = 1.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

template <typename T>
struct GradientResult {
  LossBreakdown loss;
  ParamGrads<T> grads;
  ForwardCache<T> cache;
};

/// Loss and exact gradients for one batch. Validation rows (is_val) are
/// projected with the batch but only the other rows serve as regression anchors.
template <typename T>
GradientResult<T> compute_gradients(const ModelState<T>& model, const Matrix<T>& x,
                                    std::span<const double> s, std::span<const char> is_val,
                                    const TrainConfig& config) {
  const auto b = static_cast<std::size_t>(x.rows());
  if (s.size() != b || is_val.size() != b) fail(ErrorCode::invalid_input, "batch arrays misaligned");
  GradientResult<T> out;
  out.cache = forward_train(model, x);
  const MatrixXd y = out.cache.output.template cast<double>();

  KlResult kl = kl_divergence(multiscale_affinities(x), y);

  const GeneralizedKernel kernel =
      config.ablate_gk ? GeneralizedKernel{1.0, 1.0} : to_kernel(model.kernel);
  const BatchRegression reg = batch_regression(y, s, is_val, kernel);
  std::size_t n_val = 0;
  double sse_vl = 0.0;
  double sse_tr = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double r = reg.estimate[i] - s[i];
    if (is_val[i]) {
      sse_vl += r * r;
      ++n_val;
    } else {
      sse_tr += r * r;
    }
  }
  const std::size_t n_tr = b - n_val;
  MseTerms mse;
  mse.mse_vl = n_val > 0 ? sse_vl / static_cast<double>(n_val) : 0.0;
  mse.mse_tr = sse_tr / static_cast<double>(n_tr);
  mse.mse_r = config.w1 * mse.mse_vl + config.w2 * mse.mse_tr;

  out.loss = total_loss(mse, kl.kl, config.lambda, config.balance);
  if (config.ablate_kr) {
    out.loss.w_mse = 0.0;
    out.loss.total = out.loss.recompose();
  }
  if (!std::isfinite(out.loss.total)) {
    fail(ErrorCode::diverged_training, "non-finite loss");
  }

  // dL/dKL and dL/dMSE_r, including the sigmoid weights' own derivatives.
  double d_kl = out.loss.w_kl;
  double d_mse = out.loss.w_mse * config.lambda;
  const double k = config.balance.k;
  if (!config.ablate_kr && config.balance.mode == BalanceMode::l2) {
    const double w = out.loss.w_mse;
    d_mse += config.lambda * mse.mse_r * k * w * (1.0 - w);
  }
  if (config.balance.mode == BalanceMode::l1) {
    const double w = out.loss.w_kl;
    d_kl += kl.kl * k * w * (1.0 - w);
  }

  MatrixXd d_y = d_kl * kl.grad;
  out.grads = zero_grads_like(model);
  if (d_mse != 0.0) {
    std::vector<double> d_est(b);
    for (std::size_t i = 0; i < b; ++i) {
      const double r = reg.estimate[i] - s[i];
      d_est[i] = is_val[i] ? d_mse * config.w1 * 2.0 * r / static_cast<double>(n_val)
                           : d_mse * config.w2 * 2.0 * r / static_cast<double>(n_tr);
    }
    const RegressionGrad rg = batch_regression_backward(y, s, reg, d_est, kernel);
    d_y += rg.d_y;
    if (!config.ablate_gk) {
      out.grads.alpha_raw = static_cast<T>(rg.d_alpha * 2.0 * static_cast<double>(model.kernel.alpha_raw));
      out.grads.beta_raw = static_cast<T>(rg.d_beta * 2.0 * static_cast<double>(model.kernel.beta_raw));
    }
  }
  backward(model, out.cache, Matrix<T>(d_y.template cast<T>()), out.grads);
  return out;
}

/// Adam with bias correction; moments have the trainable layout of the model.
template <typename T>
class Adam {
 public:
  Adam(const ModelState<T>& model, AdamConfig config, double lr)
      : config_(config), lr_(lr), m_(zero_grads_like(model)), v_(zero_grads_like(model)) {}

  void step(ModelState<T>& model, ParamGrads<T>& grads) {
    ++t_;
    auto params = trainable_blocks(model);
    auto g = grad_blocks(grads);
    auto m = grad_blocks(m_);
    auto v = grad_blocks(v_);
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t blk = 0; blk < params.size(); ++blk) {
      for (std::size_t i = 0; i < params[blk].values.size(); ++i) {
        const double gi = static_cast<double>(g[blk].values[i]);
        double mi = config_.beta1 * static_cast<double>(m[blk].values[i]) + (1.0 - config_.beta1) * gi;
        double vi = config_.beta2 * static_cast<double>(v[blk].values[i]) + (1.0 - config_.beta2) * gi * gi;
        m[blk].values[i] = static_cast<T>(mi);
        v[blk].values[i] = static_cast<T>(vi);
        const double update = lr_ * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
        params[blk].values[i] = static_cast<T>(static_cast<double>(params[blk].values[i]) - update);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  AdamConfig config_;
  double lr_;
  ParamGrads<T> m_;
  ParamGrads<T> v_;
  std::size_t t_ = 0;
};

template <typename T>
double global_norm(ParamGrads<T>& g) {
  double s = 0.0;
  for (auto& blk : grad_blocks(g)) {
    for (T v : blk.values) s += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(s);
}

template <typename T>
void scale_grads(ParamGrads<T>& g, double factor) {
  for (auto& blk : grad_blocks(g)) {
    for (T& v : blk.values) v = static_cast<T>(static_cast<double>(v) * factor);
  }
}

/// Re-estimates every batchnorm layer's running statistics from the full
/// dataset, layer by layer in inference mode.
template <typename T>
void refresh_batchnorm(ModelState<T>& model, const Matrix<T>& x) {
  Matrix<T> h = x;
  const auto n = static_cast<T>(x.rows());
  for (auto& layer : model.mlp.layers) {
    Matrix<T> z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    if (!layer.normalized) break;
    if (x.rows() >= 2) {
      layer.running_mean = z.colwise().mean().transpose();
      const Matrix<T> c = z.rowwise() - layer.running_mean.transpose();
      layer.running_var = (c.array().square().colwise().sum() / (n - T(1))).transpose().matrix();
    }
    const Vector<T> scale =
        (layer.gamma.array() * (layer.running_var.array() + T(kBatchNormEpsilon)).rsqrt()).matrix();
    const Vector<T> shift = layer.beta - (layer.running_mean.array() * scale.array()).matrix();
    z = z * scale.asDiagonal();
    z.rowwise() += shift.transpose();
    h = z.cwiseMax(T(0));
  }
}

/// Batches of one epoch: a seeded permutation cut into ceil(N / batch) batches
/// whose sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch,
                                                           std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 2 * epoch + 2));
  rng.shuffle(order.begin(), order.end());
  const std::size_t count = (n + batch - 1) / batch;
  std::vector<std::vector<std::size_t>> out(count);
  std::size_t pos = 0;
  for (std::size_t bi = 0; bi < count; ++bi) {
    const std::size_t len = n / count + (bi < n % count ? 1 : 0);
    out[bi].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                   order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return out;
}

template <typename T>
struct TrainResult {
  ModelState<T> model;
  TrainHistory history;
};

/// Optional per-epoch observer (epoch index, record).
using EpochCallback = std::function<void(std::size_t, const EpochRecord&)>;

template <typename T>
TrainResult<T> train(const Dataset& data, const TrainConfig& config,
                     const EpochCallback& on_epoch = {}) {
  validate(data);
  validate(config);
  const unsigned saved_threads = thread_count();
  if (config.deterministic) thread_count() = 1;
  struct Restore {
    unsigned n;
    ~Restore() { thread_count() = n; }
  } restore{saved_threads};

  const std::size_t n = data.size();
  const std::size_t batch = std::min(config.batch, n);
  if (batch < 4) fail(ErrorCode::too_few_points, "training needs at least 4 points");
  TrainResult<T> result{init_model<T>(data.dim(), config.seed), {}};
  ModelState<T>& model = result.model;
  const Matrix<T> x_all = data.x.template cast<T>();
  const std::vector<double> s_all = data.scores();
  Adam<T> adam(model, config.adam, config.lr);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const SplitAssignment split = split_epoch(n, config.seed, epoch);
    const auto batches = epoch_batches(n, batch, config.seed, epoch);
    EpochRecord rec;
    LossBreakdown sum;
    sum.w_mse = 0.0;
    sum.w_kl = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      Matrix<T> xb(static_cast<Eigen::Index>(idx.size()), x_all.cols());
      std::vector<double> sb(idx.size());
      std::vector<char> vb(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        xb.row(static_cast<Eigen::Index>(r)) = x_all.row(static_cast<Eigen::Index>(idx[r]));
        sb[r] = s_all[idx[r]];
        vb[r] = split.is_val[idx[r]];
      }
      GradientResult<T> g;
      try {
        g = compute_gradients(model, xb, sb, vb, config);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::diverged_training) throw;
        fail(ErrorCode::diverged_training, std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                               ", batch " + std::to_string(bi));
      }
      if (config.grad_clip > 0.0) {
        const double norm = global_norm(g.grads);
        if (norm > config.grad_clip) scale_grads(g.grads, config.grad_clip / norm);
      }
      adam.step(model, g.grads);
      update_running_stats(model, g.cache);
      if (!parameters_finite(model)) {
        fail(ErrorCode::diverged_training, "non-finite parameters at epoch " + std::to_string(epoch) +
                                               ", batch " + std::to_string(bi));
      }
      sum.mse_vl += g.loss.mse_vl;
      sum.mse_tr += g.loss.mse_tr;
      sum.mse_r += g.loss.mse_r;
      sum.kl += g.loss.kl;
      sum.w_mse += g.loss.w_mse;
      sum.w_kl += g.loss.w_kl;
      sum.total += g.loss.total;
    }
    const double nb = static_cast<double>(batches.size());
    rec.loss = {sum.mse_vl / nb, sum.mse_tr / nb, sum.mse_r / nb, sum.kl / nb, config.lambda,
                sum.w_mse / nb, sum.w_kl / nb, sum.total / nb};
    rec.alpha = static_cast<double>(model.kernel.alpha());
    rec.beta = static_cast<double>(model.kernel.beta());
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(epoch, rec);
  }
  if (config.refresh_batchnorm) refresh_batchnorm(model, x_all);
  model.mode = Mode::inference;
  return result;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
  std::vector<std::string> flagged;  // parameters above tolerance

  bool passed() const { return flagged.empty(); }
};

/// Compares analytic gradients against central differences for every trainable
/// scalar. `tamper` (fault injection) may modify the analytic gradients first.
inline GradCheckReport grad_check(const ModelState<double>& model, const MatrixXd& x,
                                  std::span<const double> s, std::span<const char> is_val,
                                  const TrainConfig& config, double step, double tolerance,
                                  const std::function<void(ParamGrads<double>&)>& tamper = {}) {
  GradientResult<double> analytic = compute_gradients(model, x, s, is_val, config);
  if (tamper) tamper(analytic.grads);
  ModelState<double> probe = model;
  auto params = trainable_blocks(probe);
  auto grads = grad_blocks(analytic.grads);
  GradCheckReport report;
  for (std::size_t blk = 0; blk < params.size(); ++blk) {
    for (std::size_t i = 0; i < params[blk].values.size(); ++i) {
      double& p = params[blk].values[i];
      const double saved = p;
      p = saved + step;
      const double f_plus = compute_gradients(probe, x, s, is_val, config).loss.total;
      p = saved - step;
      const double f_minus = compute_gradients(probe, x, s, is_val, config).loss.total;
      p = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a = grads[blk].values[i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      const std::string name = params[blk].name + "[" + std::to_string(i) + "]";
      ++report.checked;
      if (rel > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = rel;
        report.worst_param = name;
      }
      if (rel > tolerance) report.flagged.push_back(name);
    }
  }
  return report;
}

}  // namespace kmap
