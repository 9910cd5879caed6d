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
#include "kmap/dataset.hpp"
#include "kmap/losses.hpp"
#include "kmap/model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <concepts>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace kmap {

inline constexpr double kDefaultCutoff = 0.05;
inline constexpr std::size_t kDefaultGridSize = 500;

/// Raw 2D projection with its per-axis min-max normalization into [0,1]^2.
struct Projection2D {
  Points2 raw;
  std::array<double, 2> lo{0.0, 0.0};
  std::array<double, 2> hi{0.0, 0.0};
  Points2 normalized;

  std::size_t size() const { return static_cast<std::size_t>(raw.rows()); }

  /// Normalized position to raw coordinates. A degenerate axis maps to its single value.
  Point2 to_raw(Point2 p) const { return {lo[0] + p.x * (hi[0] - lo[0]), lo[1] + p.y * (hi[1] - lo[1])}; }

  Point2 to_normalized(Point2 r) const { return {normalize_axis(r.x, 0), normalize_axis(r.y, 1)}; }

  double normalize_axis(double v, int axis) const {
    const double span = hi[axis] - lo[axis];
    return span > 0.0 ? (v - lo[axis]) / span : 0.5;
  }
};

inline Projection2D normalize_projection(Points2 raw) {
  if (raw.rows() < 1) fail(ErrorCode::invalid_input, "projection needs at least one point");
  if (!raw.allFinite()) fail(ErrorCode::invalid_input, "projection has non-finite coordinates");
  Projection2D p;
  for (int a = 0; a < 2; ++a) {
    p.lo[a] = raw.col(a).minCoeff();
    p.hi[a] = raw.col(a).maxCoeff();
  }
  p.normalized.resize(raw.rows(), 2);
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    for (int a = 0; a < 2; ++a) p.normalized(i, a) = p.normalize_axis(raw(i, a), a);
  }
  p.raw = std::move(raw);
  return p;
}

struct BBox {
  double xmin = 0.0;
  double xmax = 1.0;
  double ymin = 0.0;
  double ymax = 1.0;

  bool valid() const {
    return std::isfinite(xmin) && std::isfinite(xmax) && std::isfinite(ymin) && std::isfinite(ymax) &&
           xmin < xmax && ymin < ymax;
  }
  bool contains(Point2 p) const { return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax; }
  double width() const { return xmax - xmin; }
};

/// Center of cell `i` of `n` along [lo, hi].
inline double cell_center(double lo, double hi, std::size_t i, std::size_t n) {
  return lo + (hi - lo) * static_cast<double>(2 * i + 1) / static_cast<double>(2 * n);
}

/// Row-major heat grid over a bbox; row j holds y-cell j, column i holds x-cell i.
struct ContourGrid {
  BBox bbox;
  std::size_t nw = 0;
  std::size_t nh = 0;
  std::vector<double> values;  // NaN where masked
  std::vector<bool> mask;      // true = rendered
  KernelSpec kernel;

  std::size_t index(std::size_t i, std::size_t j) const { return j * nw + i; }
  Point2 position(std::size_t i, std::size_t j) const {
    return {cell_center(bbox.xmin, bbox.xmax, i, nw), cell_center(bbox.ymin, bbox.ymax, j, nh)};
  }
  std::size_t rendered() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); }
};

/// Evaluates `estimator(position)` at every cell center; nullopt cells are masked.
template <typename Estimator>
  requires std::invocable<Estimator&, Point2>
ContourGrid grid_eval(Estimator&& estimator, const BBox& bbox, std::size_t nw, std::size_t nh,
                      KernelSpec kernel = {}) {
  if (nw < 2 || nh < 2) fail(ErrorCode::invalid_input, "grid needs at least 2 cells per axis");
  if (!bbox.valid()) fail(ErrorCode::invalid_input, "bbox needs finite min < max on both axes");
  ContourGrid g;
  g.bbox = bbox;
  g.nw = nw;
  g.nh = nh;
  g.kernel = std::move(kernel);
  g.values.assign(nw * nh, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> ok(nw * nh, 0);
  parallel_for(0, nh, [&](std::size_t j) {
    for (std::size_t i = 0; i < nw; ++i) {
      const std::optional<double> v = estimator(g.position(i, j));
      if (v) {
        g.values[g.index(i, j)] = *v;
        ok[g.index(i, j)] = 1;
      }
    }
  });
  g.mask.assign(ok.begin(), ok.end());
  return g;
}

/// Grid directly in the regressor's coordinates.
inline ContourGrid grid_eval(const KernelRegressor& reg, const BBox& bbox, std::size_t nw, std::size_t nh) {
  return grid_eval([&reg](Point2 p) { return reg.estimate(p); }, bbox, nw, nh, reg.kernel());
}

namespace detail {

// Uniform bucket grid over points in the unit square for radius queries.
class PointBuckets {
 public:
  explicit PointBuckets(double cell) : cell_(cell > 0.0 ? std::max(cell, 1e-6) : 1.0) {}

  void insert(Point2 p, std::size_t id) { buckets_[key(cell_of(p.x), cell_of(p.y))].push_back({p, id}); }

  /// Smallest squared distance to a stored point within `radius`, if any.
  std::optional<double> nearest_within(Point2 p, double radius) const {
    const long reach = static_cast<long>(std::ceil(radius / cell_));
    const long cx = cell_of(p.x);
    const long cy = cell_of(p.y);
    std::optional<double> best;
    for (long dy = -reach; dy <= reach; ++dy) {
      for (long dx = -reach; dx <= reach; ++dx) {
        auto it = buckets_.find(key(cx + dx, cy + dy));
        if (it == buckets_.end()) continue;
        for (const auto& e : it->second) {
          const double d = sq_dist(p, e.p);
          if (d <= radius * radius && (!best || d < *best)) best = d;
        }
      }
    }
    return best;
  }

 private:
  struct Entry {
    Point2 p;
    std::size_t id;
  };
  long cell_of(double v) const { return static_cast<long>(std::floor(v / cell_)); }
  static std::int64_t key(long x, long y) { return (static_cast<std::int64_t>(x) << 32) ^ (y & 0xFFFFFFFFll); }

  double cell_;
  std::unordered_map<std::int64_t, std::vector<Entry>> buckets_;
};

}  // namespace detail

/// Masks every cell whose nearest anchor lies farther than `tau`.
inline void cutoff_mask(ContourGrid& grid, const Points2& anchors, double tau = kDefaultCutoff) {
  if (!(tau > 0.0)) fail(ErrorCode::invalid_input, "cutoff distance must be positive");
  if (std::isinf(tau)) return;
  detail::PointBuckets buckets(tau);
  for (Eigen::Index k = 0; k < anchors.rows(); ++k) {
    buckets.insert({anchors(k, 0), anchors(k, 1)}, static_cast<std::size_t>(k));
  }
  for (std::size_t j = 0; j < grid.nh; ++j) {
    for (std::size_t i = 0; i < grid.nw; ++i) {
      const auto idx = grid.index(i, j);
      if (grid.mask[idx] && !buckets.nearest_within(grid.position(i, j), tau)) {
        grid.mask[idx] = false;
        grid.values[idx] = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
}

/// A frozen projection plus estimator, addressed in normalized coordinates.
class ContourMap {
 public:
  ContourMap(Projection2D projection, std::vector<double> values, KernelSpec kernel)
      : projection_(std::move(projection)),
        regressor_(projection_.raw, values, std::move(kernel)) {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    score_min_ = *lo;
    score_max_ = *hi;
  }

  std::optional<double> estimate(Point2 normalized) const {
    return regressor_.estimate(projection_.to_raw(normalized));
  }

  /// Grid over a normalized bbox with the distance cutoff applied (tau <= 0 disables it).
  ContourGrid grid(const BBox& bbox, std::size_t nw, std::size_t nh, double tau = kDefaultCutoff) const {
    ContourGrid g = grid_eval([this](Point2 p) { return estimate(p); }, bbox, nw, nh, regressor_.kernel());
    if (tau > 0.0) cutoff_mask(g, projection_.normalized, tau);
    return g;
  }

  const Projection2D& projection() const { return projection_; }
  const KernelRegressor& regressor() const { return regressor_; }
  double score_min() const { return score_min_; }
  double score_max() const { return score_max_; }

 private:
  Projection2D projection_;
  KernelRegressor regressor_;
  double score_min_ = 0.0;
  double score_max_ = 0.0;
};

enum class SampleMethod { random, poisson };

/// Random: `param` points uniformly without replacement. Poisson: greedy dart
/// throwing over a shuffled order with minimum spacing `param`. Indices ascend.
inline std::vector<std::size_t> sample_points(const Points2& points, SampleMethod method, double param,
                                              std::uint64_t seed) {
  const std::size_t n = static_cast<std::size_t>(points.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::vector<std::size_t> out;
  if (method == SampleMethod::random) {
    if (!(param >= 0.0) || param != std::floor(param)) fail(ErrorCode::invalid_count, "count must be a non-negative integer");
    if (param > static_cast<double>(n)) {
      fail(ErrorCode::invalid_count, "count " + std::to_string(static_cast<std::size_t>(param)) +
                                         " exceeds " + std::to_string(n) + " points");
    }
    rng.shuffle(order.begin(), order.end());
    out.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(param));
  } else {
    if (!(param >= 0.0) || !std::isfinite(param)) fail(ErrorCode::invalid_input, "radius must be finite and non-negative");
    rng.shuffle(order.begin(), order.end());
    detail::PointBuckets taken(param);
    for (std::size_t idx : order) {
      const Point2 p{points(static_cast<Eigen::Index>(idx), 0), points(static_cast<Eigen::Index>(idx), 1)};
      const auto near = taken.nearest_within(p, param);
      if (param > 0.0 && near && *near < param * param) continue;
      taken.insert(p, idx);
      out.push_back(idx);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline nlohmann::json kernel_to_json(const KernelSpec& k) {
  nlohmann::json j{{"type", kernel_name(k)}};
  if (const auto* g = std::get_if<GeneralizedKernel>(&k)) {
    j["alpha"] = g->alpha;
    j["beta"] = g->beta;
  } else if (const auto* r = std::get_if<GaussianKernel>(&k)) {
    j["h"] = r->h;
  } else {
    const auto& h = std::get<AdaptiveGaussianKernel>(k).h;
    j["anchors"] = h.size();
    if (!h.empty()) {
      j["h_min"] = *std::min_element(h.begin(), h.end());
      j["h_max"] = *std::max_element(h.begin(), h.end());
    }
  }
  return j;
}

/// {bbox, nw, nh, values (null where masked), mask, score_min, score_max, kernel}.
inline nlohmann::json grid_to_json(const ContourGrid& g, double score_min, double score_max) {
  nlohmann::json values = nlohmann::json::array();
  nlohmann::json mask = nlohmann::json::array();
  for (std::size_t k = 0; k < g.values.size(); ++k) {
    values.push_back(g.mask[k] ? nlohmann::json(g.values[k]) : nlohmann::json(nullptr));
    mask.push_back(static_cast<bool>(g.mask[k]));
  }
  return {{"bbox", {g.bbox.xmin, g.bbox.xmax, g.bbox.ymin, g.bbox.ymax}},
          {"nw", g.nw},
          {"nh", g.nh},
          {"values", std::move(values)},
          {"mask", std::move(mask)},
          {"score_min", score_min},
          {"score_max", score_max},
          {"kernel", kernel_to_json(g.kernel)}};
}

/// Fixed continuous ramp (dark blue, teal, green, yellow) for t in [0,1].
inline std::array<std::uint8_t, 3> colormap(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{{68, 1, 84},
                                                               {59, 82, 139},
                                                               {33, 145, 140},
                                                               {94, 201, 98},
                                                               {253, 231, 37}}};
  t = std::isfinite(t) ? std::clamp(t, 0.0, 1.0) : 0.0;
  const double x = t * static_cast<double>(stops.size() - 1);
  const std::size_t k = std::min(static_cast<std::size_t>(x), stops.size() - 2);
  const double f = x - static_cast<double>(k);
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    rgb[c] = static_cast<std::uint8_t>(std::lround(stops[k][c] + f * (stops[k + 1][c] - stops[k][c])));
  }
  return rgb;
}

/// Binary PPM, one pixel per cell, top image row = largest y; masked cells white.
inline std::string grid_to_ppm(const ContourGrid& g, double score_min, double score_max) {
  std::string out = "P6\n" + std::to_string(g.nw) + " " + std::to_string(g.nh) + "\n255\n";
  const double span = score_max - score_min;
  for (std::size_t r = 0; r < g.nh; ++r) {
    const std::size_t j = g.nh - 1 - r;
    for (std::size_t i = 0; i < g.nw; ++i) {
      const std::size_t k = g.index(i, j);
      std::array<std::uint8_t, 3> rgb{255, 255, 255};
      if (g.mask[k]) rgb = colormap(span > 0.0 ? (g.values[k] - score_min) / span : 0.5);
      out.append(reinterpret_cast<const char*>(rgb.data()), 3);
    }
  }
  return out;
}

/// Projects every dataset row through the trained map (inference mode).
template <typename T>
Projection2D project_dataset(const ModelState<T>& model, const Dataset& data) {
  if (data.dim() != model.input_dim) {
    fail(ErrorCode::dimension_mismatch, "model expects d=" + std::to_string(model.input_dim) +
                                            ", dataset has d=" + std::to_string(data.dim()));
  }
  return normalize_projection(forward_inference(model, data.x.cast<T>().eval()).template cast<double>());
}

/// Contour map with every dataset row as an anchor and the learned kernel.
template <typename T>
ContourMap build_contour_map(const ModelState<T>& model, const Dataset& data) {
  return ContourMap(project_dataset(model, data), data.scores(), to_kernel(model.kernel));
}

}  // namespace kmap
