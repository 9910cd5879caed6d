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
#include "kmap/kernels.hpp"

#include <concepts>
#include <optional>
#include <span>
#include <vector>

namespace kmap {

// Floor applied to probabilities inside the KL logarithm only.
inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr int kEntropyMaxIterations = 50;
inline constexpr double kEntropyTolerance = 1e-5;

inline double kernel_weight(const KernelSpec& spec, std::size_t anchor, double sq_norm) {
  switch (spec.index()) {
    case 0: return std::get<GeneralizedKernel>(spec)(sq_norm);
    case 1: return std::get<GaussianKernel>(spec)(sq_norm);
    default: {
      const double h = std::get<AdaptiveGaussianKernel>(spec).h[anchor];
      return std::exp(-sq_norm / (2.0 * h * h));
    }
  }
}

/// Nadaraya-Watson estimate at `query` from anchors (M x 2) and their values.
/// `kernel(k, u)` gives the weight of anchor k at squared distance u.
template <typename KernelFn>
  requires std::invocable<KernelFn&, std::size_t, double>
double nw_estimate(Point2 query, const Points2& anchors, std::span<const double> values,
                   KernelFn&& kernel) {
  if (anchors.rows() == 0) fail(ErrorCode::invalid_input, "no anchors");
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index k = 0; k < anchors.rows(); ++k) {
    const double u = sq_dist(query, {anchors(k, 0), anchors(k, 1)});
    const double w = kernel(static_cast<std::size_t>(k), u);
    num += w * values[static_cast<std::size_t>(k)];
    den += w;
  }
  if (!(den >= kEmptyNeighborhood)) {
    fail(ErrorCode::empty_neighborhood, "kernel weights vanish at the query position");
  }
  return num / den;
}

inline double nw_estimate(Point2 query, const Points2& anchors, std::span<const double> values,
                          const KernelSpec& spec) {
  return nw_estimate(query, anchors, values,
                     [&spec](std::size_t k, double u) { return kernel_weight(spec, k, u); });
}

/// Frozen anchors, values and kernel; the estimator behind contour maps and
/// evaluation queries. Evaluation is vectorized over anchors and depends only on
/// the query position.
class KernelRegressor {
 public:
  KernelRegressor() = default;
  KernelRegressor(Points2 anchors, std::vector<double> values, KernelSpec kernel)
      : anchors_(std::move(anchors)), values_(std::move(values)), kernel_(std::move(kernel)) {
    if (static_cast<std::size_t>(anchors_.rows()) != values_.size() || values_.empty()) {
      fail(ErrorCode::invalid_input, "anchors and values must be nonempty and aligned");
    }
    ax_ = anchors_.col(0).array();
    ay_ = anchors_.col(1).array();
    v_ = Eigen::Map<const Eigen::ArrayXd>(values_.data(), static_cast<Eigen::Index>(values_.size()));
    if (auto* ak = std::get_if<AdaptiveGaussianKernel>(&kernel_)) {
      if (ak->h.size() != values_.size()) {
        fail(ErrorCode::invalid_input, "adaptive kernel needs one bandwidth per anchor");
      }
      inv_two_h2_.resize(ax_.size());
      for (Eigen::Index k = 0; k < ax_.size(); ++k) {
        const double h = ak->h[static_cast<std::size_t>(k)];
        inv_two_h2_[k] = 1.0 / (2.0 * h * h);
      }
    }
  }

  /// Estimate at `p`, or nullopt where every kernel weight vanishes.
  std::optional<double> estimate(Point2 p) const {
    thread_local Eigen::ArrayXd w;
    w = (ax_ - p.x).square() + (ay_ - p.y).square();
    switch (kernel_.index()) {
      case 0: {
        const auto& g = std::get<GeneralizedKernel>(kernel_);
        // u^beta through exp/log; u = 0 gives weight 1.
        w = (1.0 + g.alpha * (g.beta * w.log()).exp()).inverse();
        break;
      }
      case 1: {
        const double h = std::get<GaussianKernel>(kernel_).h;
        w = (-w / (2.0 * h * h)).exp();
        break;
      }
      default: w = (-w * inv_two_h2_).exp(); break;
    }
    const double den = w.sum();
    if (!(den >= kEmptyNeighborhood)) return std::nullopt;
    return (w * v_).sum() / den;
  }

  const Points2& anchors() const { return anchors_; }
  const std::vector<double>& values() const { return values_; }
  const KernelSpec& kernel() const { return kernel_; }

 private:
  Points2 anchors_;
  std::vector<double> values_;
  KernelSpec kernel_;
  Eigen::ArrayXd ax_, ay_, v_, inv_two_h2_;
};

struct MseTerms {
  double mse_vl = 0.0;
  double mse_tr = 0.0;
  double mse_r = 0.0;
};

inline double mean_squared_error(std::span<const double> est, std::span<const double> target) {
  if (est.size() != target.size()) fail(ErrorCode::invalid_input, "misaligned estimates");
  if (est.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double r = est[i] - target[i];
    s += r * r;
  }
  return s / static_cast<double>(est.size());
}

/// MSE_r = w1 * MSE_vl + w2 * MSE_tr.
inline MseTerms mse_r(std::span<const double> est_tr, std::span<const double> s_tr,
                      std::span<const double> est_vl, std::span<const double> s_vl, double w1,
                      double w2) {
  if (est_vl.empty()) fail(ErrorCode::split_configuration, "validation split is empty");
  if (est_tr.empty()) fail(ErrorCode::split_configuration, "training split is empty");
  MseTerms m;
  m.mse_vl = mean_squared_error(est_vl, s_vl);
  m.mse_tr = mean_squared_error(est_tr, s_tr);
  m.mse_r = w1 * m.mse_vl + w2 * m.mse_tr;
  return m;
}

// ---------------------------------------------------------------------------
// Neighborhood (KL) term

struct AffinityMatrices {
  MatrixXd p;  // high-dimensional, symmetric, zero diagonal, sums to 1
  MatrixXd q;  // low-dimensional, same invariants
  std::size_t batch = 0;
};

namespace detail {

// Entropy (nats) of p_j ∝ exp(-tau d_j), its derivative in tau, and the
// unnormalized weights.
struct RowEntropy {
  double entropy;
  double slope;
};

inline RowEntropy row_entropy(const Eigen::ArrayXd& d, double tau, Eigen::ArrayXd& w) {
  w = (-tau * d).exp();
  const double sum = w.sum();
  const double mean = (w * d).sum() / sum;
  const double var = std::max(0.0, (w * d.square()).sum() / sum - mean * mean);
  return {std::log(sum) + tau * mean, -tau * var};
}

}  // namespace detail

/// Number of dyadic perplexity levels 2^1 .. 2^H used for a batch of size b.
inline int multiscale_levels(std::size_t b) {
  int h = 0;
  while ((std::size_t{1} << (h + 1)) <= b / 2) ++h;
  return std::max(h, 1);
}

/// Multi-scale (perplexity-free) joint probabilities of a batch: per-row
/// Gaussian conditionals calibrated to entropies log 2^h, averaged over the
/// levels, then symmetrized and normalized.
template <typename T>
MatrixXd multiscale_affinities(const Matrix<T>& x) {
  const auto b = static_cast<std::size_t>(x.rows());
  if (b < 4) fail(ErrorCode::batch_too_small, "neighborhood term needs at least 4 rows");
  const MatrixXd xd = x.template cast<double>();
  const Vector<double> norms = xd.rowwise().squaredNorm();
  MatrixXd dist = (-2.0 * xd * xd.transpose()).eval();
  dist.colwise() += norms;
  dist.rowwise() += norms.transpose();
  dist = dist.cwiseMax(0.0);
  double max_off = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i != j) max_off = std::max(max_off, dist(i, j));
    }
  }
  if (!(max_off > 0.0)) fail(ErrorCode::degenerate_batch, "all rows of the batch coincide");

  const int levels = multiscale_levels(b);
  MatrixXd cond = MatrixXd::Zero(b, b);
  parallel_for(0, b, [&](std::size_t i) {
    Eigen::ArrayXd d(static_cast<Eigen::Index>(b - 1));
    Eigen::Index n = 0;
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i) d(n++) = dist(i, j);
    }
    d -= d.minCoeff();
    const double mean = d.mean();
    Eigen::ArrayXd w(d.size());
    Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(d.size());
    double tau = mean > 0.0 ? 1.0 / mean : 1.0;
    for (int h = 1; h <= levels; ++h) {
      // Entropy decreases in tau. Newton steps are taken while they stay inside
      // the current bracket; otherwise the bracket is bisected (or grown).
      const double target = static_cast<double>(h) * std::log(2.0);
      double lo = 0.0;
      double hi = std::numeric_limits<double>::infinity();
      detail::RowEntropy e = detail::row_entropy(d, tau, w);
      for (int it = 0; it < kEntropyMaxIterations; ++it) {
        const double diff = e.entropy - target;
        if (std::abs(diff) < kEntropyTolerance) break;
        if (diff > 0.0) {
          lo = tau;
        } else {
          hi = tau;
        }
        double next = e.slope < 0.0 ? tau - diff / e.slope : -1.0;
        if (!(next > lo && next < hi)) {
          next = std::isinf(hi) ? tau * 2.0 : 0.5 * (lo + hi);
        }
        tau = next;
        e = detail::row_entropy(d, tau, w);
      }
      acc += w / w.sum();
    }
    Eigen::Index k = 0;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      cond(i, j) = acc(k++) / static_cast<double>(levels);
    }
  });

  MatrixXd p = (cond + cond.transpose()) / (2.0 * static_cast<double>(b));
  p.diagonal().setZero();
  p /= p.sum();
  return p;
}

struct KlResult {
  double kl = 0.0;
  AffinityMatrices affinities;
  MatrixXd grad;  // dKL/dY, B x 2
};

/// KL(P || Q) with Q from the Student-t kernel (1 + |y_i - y_j|^2)^-1 on the
/// low-dimensional batch, plus its gradient with respect to Y.
inline KlResult kl_divergence(const MatrixXd& p, const MatrixXd& y) {
  const auto b = static_cast<std::size_t>(y.rows());
  KlResult r;
  MatrixXd w(b, b);
  double z = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j) {
        w(i, j) = 0.0;
        continue;
      }
      const double dx = y(i, 0) - y(j, 0);
      const double dy = y(i, 1) - y(j, 1);
      w(i, j) = 1.0 / (1.0 + dx * dx + dy * dy);
      z += w(i, j);
    }
  }
  MatrixXd q = w / z;
  double kl = 0.0;
  double p_active = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j || p(i, j) <= 0.0) continue;
      kl += p(i, j) * std::log(std::max(p(i, j), kProbabilityFloor) /
                               std::max(q(i, j), kProbabilityFloor));
      if (q(i, j) >= kProbabilityFloor) p_active += p(i, j);
    }
  }
  r.grad = MatrixXd::Zero(b, 2);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j) continue;
      const double pij = q(i, j) >= kProbabilityFloor ? p(i, j) : 0.0;
      const double g = 4.0 * w(i, j) * (pij - p_active * q(i, j));
      r.grad(i, 0) += g * (y(i, 0) - y(j, 0));
      r.grad(i, 1) += g * (y(i, 1) - y(j, 1));
    }
  }
  r.kl = kl;
  r.affinities = {p, std::move(q), b};
  return r;
}

template <typename T>
KlResult kl_neighborhood(const Matrix<T>& x_batch, const MatrixXd& y_batch) {
  if (x_batch.rows() != y_batch.rows() || y_batch.cols() != 2) {
    fail(ErrorCode::invalid_input, "batch shapes disagree");
  }
  return kl_divergence(multiscale_affinities(x_batch), y_batch);
}

// ---------------------------------------------------------------------------
// Objective composition

enum class BalanceMode { none, l1, l2 };

struct Balance {
  BalanceMode mode = BalanceMode::none;
  double mu = 2.0;   // KL threshold (l1)
  double mu1 = 1.0;  // regression threshold (l2)
  double k = 1.0;
};

inline double sigmoid_weight(double x, double mu, double k) {
  return 1.0 / (1.0 + std::exp(-k * (x - mu)));
}

struct LossBreakdown {
  double mse_vl = 0.0;
  double mse_tr = 0.0;
  double mse_r = 0.0;
  double kl = 0.0;
  double lambda = 0.0;
  double w_mse = 1.0;  // multiplier on lambda * mse_r
  double w_kl = 1.0;   // multiplier on kl
  double total = 0.0;

  /// The composition rule; `total` is always exactly this expression.
  double recompose() const { return w_mse * (lambda * mse_r) + w_kl * kl; }
};

/// L = lambda MSE_r + KL, optionally with a sigmoid weight on KL (l1) or on
/// the regression term (l2).
inline LossBreakdown total_loss(const MseTerms& mse, double kl, double lambda,
                                const Balance& balance = {}) {
  if (!(lambda >= 0.0)) fail(ErrorCode::invalid_config, "lambda must be non-negative");
  if (balance.mode != BalanceMode::none && !(balance.k > 0.0)) {
    fail(ErrorCode::invalid_config, "balance steepness k must be positive");
  }
  LossBreakdown b;
  b.mse_vl = mse.mse_vl;
  b.mse_tr = mse.mse_tr;
  b.mse_r = mse.mse_r;
  b.kl = kl;
  b.lambda = lambda;
  switch (balance.mode) {
    case BalanceMode::none: break;
    case BalanceMode::l1: b.w_kl = sigmoid_weight(kl, balance.mu, balance.k); break;
    case BalanceMode::l2: b.w_mse = sigmoid_weight(mse.mse_r, balance.mu1, balance.k); break;
  }
  b.total = b.recompose();
  return b;
}

// ---------------------------------------------------------------------------
// Batch regression term with gradients

/// In-batch Nadaraya-Watson estimates: every row is a query, anchors are the
/// rows with is_val == false.
struct BatchRegression {
  std::vector<double> estimate;    // per row
  std::vector<double> weight_sum;  // per row
  std::vector<std::size_t> anchors;
  MatrixXd k;                      // rows x anchors kernel values
  MatrixXd u;                      // rows x anchors squared distances
};

inline BatchRegression batch_regression(const MatrixXd& y, std::span<const double> s,
                                        std::span<const char> is_val, GeneralizedKernel kernel) {
  const auto b = static_cast<std::size_t>(y.rows());
  BatchRegression r;
  for (std::size_t i = 0; i < b; ++i) {
    if (!is_val[i]) r.anchors.push_back(i);
  }
  if (r.anchors.empty()) fail(ErrorCode::split_configuration, "batch has no training members");
  const std::size_t m = r.anchors.size();
  r.k.resize(b, m);
  r.u.resize(b, m);
  r.estimate.assign(b, 0.0);
  r.weight_sum.assign(b, 0.0);
  parallel_for(0, b, [&](std::size_t i) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const std::size_t a = r.anchors[c];
      const double dx = y(i, 0) - y(a, 0);
      const double dy = y(i, 1) - y(a, 1);
      const double u = dx * dx + dy * dy;
      const double kv = (u > 0.0) ? kernel(u) : 1.0;
      r.u(i, c) = u;
      r.k(i, c) = kv;
      num += kv * s[a];
      den += kv;
    }
    r.weight_sum[i] = den;
    r.estimate[i] = num / den;
  });
  return r;
}

struct RegressionGrad {
  MatrixXd d_y;        // B x 2
  double d_alpha = 0;  // w.r.t. effective alpha
  double d_beta = 0;   // w.r.t. effective beta
};

/// Backpropagates dL/d(estimate_i) through the in-batch estimator. Pairs at
/// zero distance (a row and itself) have constant weight 1 and contribute nothing.
inline RegressionGrad batch_regression_backward(const MatrixXd& y, std::span<const double> s,
                                                const BatchRegression& r,
                                                std::span<const double> d_est,
                                                GeneralizedKernel kernel) {
  const auto b = static_cast<std::size_t>(y.rows());
  const std::size_t m = r.anchors.size();
  // coef(i, c) = dL/du for the pair (query i, anchor c); per-row partials are
  // reduced serially afterwards so every sum has a fixed order.
  MatrixXd coef = MatrixXd::Zero(b, m);
  std::vector<double> row_da(b, 0.0), row_db(b, 0.0);
  parallel_for(0, b, [&](std::size_t i) {
    if (d_est[i] == 0.0) return;
    const double scale = d_est[i] / r.weight_sum[i];
    for (std::size_t c = 0; c < m; ++c) {
      const double u = r.u(i, c);
      if (!(u > 0.0)) continue;
      const double kv = r.k(i, c);
      const double dl_dk = scale * (s[r.anchors[c]] - r.estimate[i]);
      const double upow = std::pow(u, kernel.beta);
      const double k2 = kv * kv;
      row_da[i] += dl_dk * (-upow * k2);
      row_db[i] += dl_dk * (-kernel.alpha * upow * std::log(u) * k2);
      coef(i, c) = dl_dk * (-kernel.alpha * kernel.beta * (upow / u) * k2);
    }
  });
  RegressionGrad g;
  g.d_y = MatrixXd::Zero(b, 2);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t c = 0; c < m; ++c) {
      const double cf = coef(i, c);
      if (cf == 0.0) continue;
      const std::size_t a = r.anchors[c];
      const double gx = 2.0 * cf * (y(i, 0) - y(a, 0));
      const double gy = 2.0 * cf * (y(i, 1) - y(a, 1));
      g.d_y(i, 0) += gx;
      g.d_y(i, 1) += gy;
      g.d_y(a, 0) -= gx;
      g.d_y(a, 1) -= gy;
    }
    g.d_alpha += row_da[i];
    g.d_beta += row_db[i];
  }
  return g;
}

}  // namespace kmap
