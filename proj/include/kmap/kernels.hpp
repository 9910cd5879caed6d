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

#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace kmap {

// Below this a kernel-weight sum is treated as zero.
inline constexpr double kEmptyNeighborhood = 1e-300;

/// Generalized t-kernel (1 + alpha * u^beta)^-1 on a squared norm u, with the
/// effective (already squared) shape parameters.
struct GeneralizedKernel {
  double alpha = 1.0;
  double beta = 1.0;

  double operator()(double sq_norm) const {
    return 1.0 / (1.0 + alpha * std::pow(sq_norm, beta));
  }
};

/// exp(-u / (2 h^2)) on a squared norm u.
struct GaussianKernel {
  double h = 1.0;

  double operator()(double sq_norm) const {
    return std::exp(-sq_norm / (2.0 * h * h));
  }
};

/// Gaussian kernel with one bandwidth per anchor (adaptive local bandwidth).
struct AdaptiveGaussianKernel {
  std::vector<double> h;
};

using KernelSpec = std::variant<GeneralizedKernel, GaussianKernel, AdaptiveGaussianKernel>;

inline std::string kernel_name(const KernelSpec& k) {
  if (std::holds_alternative<GeneralizedKernel>(k)) return "generalized_t";
  if (std::holds_alternative<GaussianKernel>(k)) return "gaussian";
  return "adaptive_gaussian";
}

template <typename T>
GeneralizedKernel to_kernel(const KernelParams<T>& p) {
  return {static_cast<double>(p.alpha()), static_cast<double>(p.beta())};
}

inline double generalized_kernel(double sq_norm, double alpha, double beta) {
  if (!std::isfinite(sq_norm) || sq_norm < 0.0) {
    fail(ErrorCode::invalid_input, "squared norm must be finite and non-negative");
  }
  return GeneralizedKernel{alpha, beta}(sq_norm);
}

template <typename T>
double generalized_kernel(double sq_norm, const KernelParams<T>& params) {
  return generalized_kernel(sq_norm, static_cast<double>(params.alpha()),
                            static_cast<double>(params.beta()));
}

inline double gaussian_rbf(double sq_norm, double h) {
  if (!(h > 0.0)) fail(ErrorCode::invalid_bandwidth, "bandwidth must be positive");
  if (!std::isfinite(sq_norm) || sq_norm < 0.0) {
    fail(ErrorCode::invalid_input, "squared norm must be finite and non-negative");
  }
  return GaussianKernel{h}(sq_norm);
}

enum class BandwidthMethod { silverman, alb, loocv };

inline std::string_view bandwidth_method_name(BandwidthMethod m) {
  switch (m) {
    case BandwidthMethod::silverman: return "silverman";
    case BandwidthMethod::alb: return "alb";
    case BandwidthMethod::loocv: return "loocv";
  }
  return "?";
}

struct BandwidthSelection {
  BandwidthMethod method = BandwidthMethod::silverman;
  double h = 0.0;
  std::vector<double> per_point_h;  // ALB only
  double sigma_hat = 0.0;
  std::vector<double> candidates;   // LOOCV only
  std::vector<double> cv_scores;    // LOOCV only, +inf for excluded candidates
};

/// Silverman's plug-in rule (4 / ((d + 2) n))^(1 / (d + 4)) * sigma_hat.
inline double silverman_bandwidth(std::size_t n, std::size_t d, double sigma_hat) {
  if (n < 1 || d < 1) fail(ErrorCode::invalid_input, "silverman needs n >= 1 and d >= 1");
  if (!(sigma_hat > 0.0) || !std::isfinite(sigma_hat)) {
    fail(ErrorCode::degenerate_data, "scale estimate must be positive");
  }
  const double nd = static_cast<double>(n);
  const double dd = static_cast<double>(d);
  return std::pow(4.0 / ((dd + 2.0) * nd), 1.0 / (dd + 4.0)) * sigma_hat;
}

/// Mean of the per-axis sample standard deviations of 2D points.
inline double scale_estimate(const Points2& pts) {
  const auto n = pts.rows();
  if (n < 2) fail(ErrorCode::degenerate_data, "scale estimate needs at least 2 points");
  double total = 0.0;
  for (Eigen::Index c = 0; c < 2; ++c) {
    const double mean = pts.col(c).mean();
    const double ss = (pts.col(c).array() - mean).square().sum();
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0)) fail(ErrorCode::degenerate_data, "all points identical on one axis");
    total += sd;
  }
  return total / 2.0;
}

inline BandwidthSelection select_silverman(const Points2& pts) {
  BandwidthSelection sel;
  sel.method = BandwidthMethod::silverman;
  sel.sigma_hat = scale_estimate(pts);
  sel.h = silverman_bandwidth(static_cast<std::size_t>(pts.rows()), 2, sel.sigma_hat);
  return sel;
}

/// Adaptive local bandwidths h_i = (G / f_i)^2 * h, G the geometric mean of f.
inline std::vector<double> alb_bandwidths(double h, const std::vector<double>& densities) {
  if (!(h > 0.0)) fail(ErrorCode::invalid_bandwidth, "pilot bandwidth must be positive");
  if (densities.empty()) fail(ErrorCode::invalid_density, "no densities");
  double log_sum = 0.0;
  for (std::size_t i = 0; i < densities.size(); ++i) {
    if (!(densities[i] > 0.0) || !std::isfinite(densities[i])) {
      fail(ErrorCode::invalid_density, "density at index " + std::to_string(i) + " is not positive");
    }
    log_sum += std::log(densities[i]);
  }
  const double g = std::exp(log_sum / static_cast<double>(densities.size()));
  std::vector<double> out(densities.size());
  for (std::size_t i = 0; i < densities.size(); ++i) {
    const double lambda = (g / densities[i]) * (g / densities[i]);
    out[i] = lambda * h;
  }
  return out;
}

/// Gaussian KDE in 2D evaluated at the sample points themselves.
inline std::vector<double> kde_densities(const Points2& pts, double h) {
  if (!(h > 0.0)) fail(ErrorCode::invalid_bandwidth, "bandwidth must be positive");
  const auto n = static_cast<std::size_t>(pts.rows());
  const double norm = 1.0 / (2.0 * M_PI * h * h * static_cast<double>(n));
  const GaussianKernel k{h};
  std::vector<double> f(n);
  parallel_for(0, n, [&](std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = pts(i, 0) - pts(j, 0);
      const double dy = pts(i, 1) - pts(j, 1);
      s += k(dx * dx + dy * dy);
    }
    f[i] = s * norm;
  });
  return f;
}

inline BandwidthSelection select_alb(const Points2& pts) {
  BandwidthSelection sel = select_silverman(pts);
  sel.method = BandwidthMethod::alb;
  sel.per_point_h = alb_bandwidths(sel.h, kde_densities(pts, sel.h));
  return sel;
}

/// `count` log-spaced values in [lo, hi].
inline std::vector<double> log_spaced(double lo, double hi, std::size_t count) {
  std::vector<double> out(count);
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  return out;
}

/// Leave-one-out CV score of a Gaussian-RBF Nadaraya-Watson fit with bandwidth
/// h (unit weights). +inf if some held-out denominator is numerically zero.
inline double loocv_score(const Points2& pts, const std::vector<double>& values, double h) {
  const auto m = static_cast<std::size_t>(pts.rows());
  const GaussianKernel k{h};
  std::vector<double> sq_err(m);
  std::vector<char> empty(m, 0);
  parallel_for(0, m, [&](std::size_t j) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (i == j) continue;
      const double dx = pts(j, 0) - pts(i, 0);
      const double dy = pts(j, 1) - pts(i, 1);
      const double w = k(dx * dx + dy * dy);
      num += w * values[i];
      den += w;
    }
    if (den < kEmptyNeighborhood) {
      empty[j] = 1;
      return;
    }
    const double r = values[j] - num / den;
    sq_err[j] = r * r;
  });
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    if (empty[j]) return std::numeric_limits<double>::infinity();
    total += sq_err[j];
  }
  return total / static_cast<double>(m);
}

inline BandwidthSelection loocv_bandwidth(const Points2& pts, const std::vector<double>& values,
                                          const std::vector<double>& candidates) {
  if (pts.rows() < 3) fail(ErrorCode::too_few_points, "LOOCV needs at least 3 points");
  if (static_cast<std::size_t>(pts.rows()) != values.size()) {
    fail(ErrorCode::invalid_input, "points and values differ in length");
  }
  if (candidates.empty()) fail(ErrorCode::invalid_bandwidth, "no candidate bandwidths");
  BandwidthSelection sel;
  sel.method = BandwidthMethod::loocv;
  sel.candidates = candidates;
  sel.cv_scores.reserve(candidates.size());
  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (!(candidates[c] > 0.0)) fail(ErrorCode::invalid_bandwidth, "candidate bandwidth must be positive");
    const double cv = loocv_score(pts, values, candidates[c]);
    sel.cv_scores.push_back(cv);
    if (!std::isfinite(cv)) continue;
    if (!best || cv < sel.cv_scores[*best] ||
        (cv == sel.cv_scores[*best] && candidates[c] < candidates[*best])) {
      best = c;
    }
  }
  if (!best) fail(ErrorCode::no_valid_bandwidth, "every candidate bandwidth left an empty neighborhood");
  sel.h = candidates[*best];
  return sel;
}

/// LOOCV over 20 log-spaced candidates in [h_silverman / 10, 10 h_silverman].
inline BandwidthSelection select_loocv(const Points2& pts, const std::vector<double>& values) {
  const BandwidthSelection pilot = select_silverman(pts);
  BandwidthSelection sel = loocv_bandwidth(pts, values, log_spaced(pilot.h / 10.0, pilot.h * 10.0, 20));
  sel.sigma_hat = pilot.sigma_hat;
  return sel;
}

inline BandwidthSelection select_bandwidth(BandwidthMethod method, const Points2& pts,
                                           const std::vector<double>& values) {
  switch (method) {
    case BandwidthMethod::silverman: return select_silverman(pts);
    case BandwidthMethod::alb: return select_alb(pts);
    case BandwidthMethod::loocv: return select_loocv(pts, values);
  }
  fail(ErrorCode::invalid_config, "unknown bandwidth method");
}

/// Kernel spec for a selection, with the bandwidth(s) multiplied by `scale`.
inline KernelSpec kernel_for(const BandwidthSelection& sel, double scale = 1.0) {
  if (sel.method == BandwidthMethod::alb) {
    AdaptiveGaussianKernel k{sel.per_point_h};
    for (auto& h : k.h) h *= scale;
    return k;
  }
  return GaussianKernel{sel.h * scale};
}

}  // namespace kmap
