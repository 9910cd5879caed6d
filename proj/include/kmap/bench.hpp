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
#include "kmap/trainer.hpp"

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace kmap {

struct ErrorMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> mape;  // percent; absent when some target is exactly 0
};

/// mae, rmse and mape (percent) of estimates against targets.
inline ErrorMetrics error_metrics(std::span<const double> est, std::span<const double> target) {
  if (est.empty() || est.size() != target.size()) {
    fail(ErrorCode::invalid_input, "estimates and targets must be nonempty and aligned");
  }
  ErrorMetrics m;
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double pct_sum = 0.0;
  bool mape_ok = true;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double r = est[i] - target[i];
    abs_sum += std::abs(r);
    sq_sum += r * r;
    if (target[i] == 0.0) {
      mape_ok = false;
    } else {
      pct_sum += std::abs(r) / std::abs(target[i]);
    }
  }
  const double n = static_cast<double>(est.size());
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  if (mape_ok) m.mape = 100.0 * pct_sum / n;
  return m;
}

namespace detail {

// Indices of all other points ordered by distance from point i, ties by index.
template <typename DistFn>
std::vector<std::size_t> neighbor_order(std::size_t n, std::size_t i, DistFn&& dist) {
  std::vector<std::pair<double, std::size_t>> d;
  d.reserve(n - 1);
  for (std::size_t j = 0; j < n; ++j) {
    if (j != i) d.emplace_back(dist(i, j), j);
  }
  std::sort(d.begin(), d.end());
  std::vector<std::size_t> out(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) out[k] = d[k].second;
  return out;
}

}  // namespace detail

/// Neighborhood trustworthiness T(n) of a 2D embedding Y of X.
template <typename Derived>
double trustworthiness(const Eigen::MatrixBase<Derived>& x, const Points2& y, std::size_t n) {
  const auto count = static_cast<std::size_t>(x.rows());
  if (static_cast<std::size_t>(y.rows()) != count) fail(ErrorCode::invalid_input, "X and Y differ in length");
  const double nn = static_cast<double>(n);
  const double nc = static_cast<double>(count);
  const double denom = nc * nn * (2.0 * nc - 3.0 * nn - 1.0);
  if (n < 1 || n >= count || !(denom > 0.0)) {
    fail(ErrorCode::invalid_n, "neighborhood size " + std::to_string(n) + " invalid for " +
                                   std::to_string(count) + " points");
  }
  const MatrixXd xd = x.template cast<double>();
  std::vector<double> penalty(count, 0.0);
  parallel_for(0, count, [&](std::size_t i) {
    const auto high = detail::neighbor_order(count, i, [&](std::size_t a, std::size_t b) {
      return (xd.row(static_cast<Eigen::Index>(a)) - xd.row(static_cast<Eigen::Index>(b))).squaredNorm();
    });
    const auto low = detail::neighbor_order(count, i, [&](std::size_t a, std::size_t b) {
      return (y.row(static_cast<Eigen::Index>(a)) - y.row(static_cast<Eigen::Index>(b))).squaredNorm();
    });
    std::vector<std::size_t> rank(count, 0);
    for (std::size_t k = 0; k < high.size(); ++k) rank[high[k]] = k + 1;
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t r = rank[low[k]];
      if (r > n) s += static_cast<double>(r - n);
    }
    penalty[i] = s;
  });
  double total = 0.0;
  for (double v : penalty) total += v;
  return 1.0 - 2.0 / denom * total;
}

/// Top-2 principal axes of a dataset; projects any rows onto them.
struct PcaModel {
  Vector<double> mean;
  MatrixXd components;  // 2 x d, orthonormal rows
  Vector<double> variances;

  template <typename Derived>
  Points2 project(const Eigen::MatrixBase<Derived>& x) const {
    MatrixXd c = x.template cast<double>();
    c.rowwise() -= mean.transpose();
    return c * components.transpose();
  }
};

template <typename Derived>
PcaModel fit_pca(const Eigen::MatrixBase<Derived>& x) {
  if (x.rows() < 3 || x.cols() < 2) fail(ErrorCode::invalid_input, "PCA needs N >= 3 and d >= 2");
  MatrixXd c = x.template cast<double>();
  PcaModel pca;
  pca.mean = c.colwise().mean().transpose();
  c.rowwise() -= pca.mean.transpose();
  const MatrixXd cov = (c.transpose() * c) / static_cast<double>(c.rows() - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) fail(ErrorCode::degenerate_data, "eigendecomposition failed");
  const auto d = cov.rows();
  const double top = eig.eigenvalues()(d - 1);
  const double second = eig.eigenvalues()(d - 2);
  const double scale = std::max(top, cov.diagonal().cwiseAbs().maxCoeff());
  if (!(top > 0.0) || second <= 1e-12 * scale) {
    fail(ErrorCode::degenerate_data, "data has rank below 2");
  }
  pca.components.resize(2, d);
  pca.variances.resize(2);
  for (Eigen::Index k = 0; k < 2; ++k) {
    Vector<double> v = eig.eigenvectors().col(d - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    pca.components.row(k) = v.transpose();
    pca.variances(k) = eig.eigenvalues()(d - 1 - k);
  }
  return pca;
}

template <typename Derived>
Points2 pca_project(const Eigen::MatrixBase<Derived>& x) {
  return fit_pca(x).project(x);
}

// ---------------------------------------------------------------------------
// Methods and reports

enum class MethodKind { akrmap, akrmap_no_kr, akrmap_no_gk, pca_rbf };

/// A benchmark method: a projection plus the kernel used for contouring.
/// Gaussian-kernel methods carry a bandwidth selector and a bandwidth multiplier.
struct MethodSpec {
  MethodKind kind = MethodKind::akrmap;
  BandwidthMethod bandwidth = BandwidthMethod::silverman;
  double bandwidth_scale = 1.0;
  std::string name;
};

/// Parses "akrmap", "akrmap_no_kr", "akrmap_no_gk" or
/// "pca_rbf_<silverman|alb|loocv>", optionally suffixed "@<scale>" for a
/// bandwidth multiplier; akrmap_no_kr also accepts a "_<selector>" suffix.
inline MethodSpec parse_method(const std::string& text) {
  MethodSpec m;
  m.name = text;
  std::string base = text;
  if (const auto at = text.find('@'); at != std::string::npos) {
    base = text.substr(0, at);
    try {
      std::size_t used = 0;
      m.bandwidth_scale = std::stod(text.substr(at + 1), &used);
      if (used != text.size() - at - 1 || !(m.bandwidth_scale > 0.0)) throw std::invalid_argument("scale");
    } catch (const std::exception&) {
      fail(ErrorCode::invalid_config, "bad bandwidth scale in method '" + text + "'");
    }
  }
  auto selector = [&](const std::string& s) {
    if (s == "silverman") return BandwidthMethod::silverman;
    if (s == "alb") return BandwidthMethod::alb;
    if (s == "loocv") return BandwidthMethod::loocv;
    fail(ErrorCode::invalid_config, "unknown bandwidth selector '" + s + "'");
  };
  if (base == "akrmap") {
    m.kind = MethodKind::akrmap;
  } else if (base == "akrmap_no_gk") {
    m.kind = MethodKind::akrmap_no_gk;
  } else if (base == "akrmap_no_kr") {
    m.kind = MethodKind::akrmap_no_kr;
  } else if (base.rfind("akrmap_no_kr_", 0) == 0) {
    m.kind = MethodKind::akrmap_no_kr;
    m.bandwidth = selector(base.substr(13));
  } else if (base.rfind("pca_rbf_", 0) == 0) {
    m.kind = MethodKind::pca_rbf;
    m.bandwidth = selector(base.substr(8));
  } else {
    fail(ErrorCode::invalid_config, "unknown method '" + text + "'");
  }
  if ((m.kind == MethodKind::akrmap || m.kind == MethodKind::akrmap_no_gk) && m.bandwidth_scale != 1.0) {
    fail(ErrorCode::invalid_config, "bandwidth scale applies to Gaussian-kernel methods only");
  }
  return m;
}

struct SplitErrors {
  double mae = 0.0;
  std::optional<double> mape;
  double rmse = 0.0;
  std::size_t masked = 0;  // queries where the estimator had no support
};

struct EvalReport {
  std::string method;
  std::string metric = "score";
  SplitErrors in_sample;
  SplitErrors out_of_sample;
  std::map<std::size_t, double> trust;  // n -> T(n)
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> bandwidth;
  std::uint64_t seed = 0;
  double seconds = 0.0;
};

/// A fitted method: projects rows to 2D and estimates the metric there.
struct FittedMethod {
  std::function<Points2(const MatrixXf&)> project;
  KernelRegressor regressor;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> bandwidth;
};

/// Regressor whose anchors are the projected training rows.
inline KernelRegressor regressor_for(const Points2& anchors, const std::vector<double>& values,
                                     const MethodSpec& method,
                                     std::optional<GeneralizedKernel> learned = std::nullopt) {
  if (learned) return KernelRegressor(anchors, values, *learned);
  const BandwidthSelection sel = select_bandwidth(method.bandwidth, anchors, values);
  return KernelRegressor(anchors, values, kernel_for(sel, method.bandwidth_scale));
}

inline FittedMethod fit_method(const MethodSpec& method, const Dataset& train_set,
                               const TrainConfig& base, std::uint64_t seed) {
  FittedMethod fit;
  const std::vector<double> values = train_set.scores();
  if (method.kind == MethodKind::pca_rbf) {
    auto pca = std::make_shared<PcaModel>(fit_pca(train_set.x));
    fit.project = [pca](const MatrixXf& x) { return pca->project(x); };
  } else {
    TrainConfig cfg = base;
    cfg.seed = seed;
    cfg.ablate_kr = method.kind == MethodKind::akrmap_no_kr;
    cfg.ablate_gk = method.kind == MethodKind::akrmap_no_gk;
    auto model = std::make_shared<ModelState<float>>(train<float>(train_set, cfg).model);
    fit.project = [model](const MatrixXf& x) {
      return Points2(forward_inference(*model, x).cast<double>());
    };
    if (method.kind != MethodKind::akrmap_no_kr) {
      fit.alpha = static_cast<double>(model->kernel.alpha());
      fit.beta = static_cast<double>(model->kernel.beta());
    }
  }
  const Points2 anchors = fit.project(train_set.x);
  if (fit.alpha) {
    fit.regressor = regressor_for(anchors, values, method, GeneralizedKernel{*fit.alpha, *fit.beta});
  } else {
    fit.regressor = regressor_for(anchors, values, method);
    if (const auto* g = std::get_if<GaussianKernel>(&fit.regressor.kernel())) fit.bandwidth = g->h;
  }
  return fit;
}

/// Estimates at the given query positions; unsupported positions are skipped
/// and counted.
inline SplitErrors split_errors(const KernelRegressor& reg, const Points2& queries,
                                const std::vector<double>& targets) {
  std::vector<std::optional<double>> est(targets.size());
  parallel_for(0, targets.size(), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    est[i] = reg.estimate({queries(r, 0), queries(r, 1)});
  });
  std::vector<double> e, t;
  SplitErrors out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (est[i]) {
      e.push_back(*est[i]);
      t.push_back(targets[i]);
    } else {
      ++out.masked;
    }
  }
  if (e.empty()) fail(ErrorCode::empty_neighborhood, "no query had kernel support");
  const ErrorMetrics m = error_metrics(e, t);
  out.mae = m.mae;
  out.mape = m.mape;
  out.rmse = m.rmse;
  return out;
}

struct BenchOptions {
  TrainConfig train;
  std::vector<std::size_t> trust_sizes{20, 30, 40, 50};
  std::size_t trust_max_points = 2000;
  std::string metric = "score";
};

/// Model-backed fit: the trained map with its learned kernel.
template <typename T>
FittedMethod fit_from_model(std::shared_ptr<const ModelState<T>> model, const Dataset& train_set) {
  FittedMethod fit;
  fit.project = [model](const MatrixXf& x) {
    return Points2(forward_inference(*model, x.cast<T>().eval()).template cast<double>());
  };
  fit.alpha = static_cast<double>(model->kernel.alpha());
  fit.beta = static_cast<double>(model->kernel.beta());
  fit.regressor = KernelRegressor(fit.project(train_set.x), train_set.scores(),
                                  GeneralizedKernel{*fit.alpha, *fit.beta});
  return fit;
}

/// Reports in-sample errors (at the training rows' own positions) and
/// out-of-sample errors (held-out rows projected through the fitted map; never
/// anchors) for an already fitted method.
inline EvalReport evaluate_fit(const FittedMethod& fit, const std::string& name, const Dataset& train_set,
                               const Dataset& test_set, std::uint64_t seed, const BenchOptions& options) {
  if (train_set.dim() != test_set.dim()) {
    fail(ErrorCode::dimension_mismatch, "train and test sets differ in dimension");
  }
  EvalReport rep;
  rep.method = name;
  rep.metric = options.metric;
  rep.seed = seed;
  rep.alpha = fit.alpha;
  rep.beta = fit.beta;
  rep.bandwidth = fit.bandwidth;
  const Points2& train_pos = fit.regressor.anchors();
  rep.in_sample = split_errors(fit.regressor, train_pos, train_set.scores());
  rep.out_of_sample = split_errors(fit.regressor, fit.project(test_set.x), test_set.scores());
  const std::size_t m = std::min(train_set.size(), options.trust_max_points);
  for (std::size_t n : options.trust_sizes) {
    if (3 * n >= 2 * m - 1) continue;
    rep.trust[n] = trustworthiness(train_set.x.topRows(static_cast<Eigen::Index>(m)),
                                   Points2(train_pos.topRows(static_cast<Eigen::Index>(m))), n);
  }
  return rep;
}

/// Fits `method` on `train_set`, then evaluates it against `test_set`.
inline EvalReport evaluate_method(const MethodSpec& method, const Dataset& train_set,
                                  const Dataset& test_set, std::uint64_t seed,
                                  const BenchOptions& options) {
  if (train_set.dim() != test_set.dim()) {
    fail(ErrorCode::dimension_mismatch, "train and test sets differ in dimension");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const FittedMethod fit = fit_method(method, train_set, options.train, seed);
  EvalReport rep = evaluate_fit(fit, method.name, train_set, test_set, seed, options);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

/// Every method at every seed; rows ordered by method then seed.
inline std::vector<EvalReport> run_benchmark(const Dataset& train_set, const Dataset& test_set,
                                             const std::vector<MethodSpec>& methods,
                                             const std::vector<std::uint64_t>& seeds,
                                             const BenchOptions& options) {
  validate(train_set);
  validate(test_set);
  std::vector<EvalReport> rows;
  for (const auto& method : methods) {
    for (std::uint64_t seed : seeds) {
      try {
        rows.push_back(evaluate_method(method, train_set, test_set, seed, options));
      } catch (const Error& e) {
        throw Error(e.code(), method.name + ": " + e.what());
      }
    }
  }
  return rows;
}

inline std::string format_optional(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(10);
  os << *v;
  return os.str();
}

/// Delimiter-separated table, one row per report.
inline std::string reports_to_csv(const std::vector<EvalReport>& rows, char sep = ',') {
  std::vector<std::size_t> sizes;
  for (const auto& r : rows) {
    for (const auto& [n, _] : r.trust) {
      if (std::find(sizes.begin(), sizes.end(), n) == sizes.end()) sizes.push_back(n);
    }
  }
  std::sort(sizes.begin(), sizes.end());
  std::ostringstream os;
  os.precision(10);
  os << "method" << sep << "metric" << sep << "seed" << sep << "mae" << sep << "mape" << sep << "rmse"
     << sep << "mae_in" << sep << "mape_in" << sep << "rmse_in";
  for (auto n : sizes) os << sep << "trust_" << n;
  os << sep << "alpha" << sep << "beta" << sep << "bandwidth" << sep << "seconds\n";
  for (const auto& r : rows) {
    os << r.method << sep << r.metric << sep << r.seed << sep << r.out_of_sample.mae << sep
       << format_optional(r.out_of_sample.mape) << sep << r.out_of_sample.rmse << sep
       << r.in_sample.mae << sep << format_optional(r.in_sample.mape) << sep << r.in_sample.rmse;
    for (auto n : sizes) {
      os << sep;
      if (auto it = r.trust.find(n); it != r.trust.end()) os << it->second;
    }
    os << sep << format_optional(r.alpha) << sep << format_optional(r.beta) << sep
       << format_optional(r.bandwidth) << sep << r.seconds << "\n";
  }
  return os.str();
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  auto split = [&opt](const SplitErrors& e) {
    return nlohmann::json{{"mae", e.mae}, {"mape", opt(e.mape)}, {"rmse", e.rmse}, {"masked", e.masked}};
  };
  nlohmann::json trust = nlohmann::json::object();
  for (const auto& [n, t] : r.trust) trust[std::to_string(n)] = t;
  return {{"method", r.method},   {"metric", r.metric},
          {"seed", r.seed},       {"out_of_sample", split(r.out_of_sample)},
          {"in_sample", split(r.in_sample)},
          {"trust", trust},       {"alpha", opt(r.alpha)},
          {"beta", opt(r.beta)},  {"bandwidth", opt(r.bandwidth)},
          {"seconds", r.seconds}};
}

inline nlohmann::json reports_to_json(const std::vector<EvalReport>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) out.push_back(report_to_json(r));
  return out;
}

}  // namespace kmap
