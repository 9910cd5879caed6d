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

#include "kmap/contour.hpp"

#include "test_util.hpp"

#include <set>

namespace kmap {
namespace {

using testing::error_of;

TEST(NormalizeProjection, IdentityOnUnitSquareWithExtremes) {
  Points2 raw(4, 2);
  raw << 0, 0, 1, 1, 0.25, 0.5, 0.75, 0.1;
  const auto p = normalize_projection(raw);
  EXPECT_EQ(p.normalized, raw);
}

TEST(NormalizeProjection, HandEvaluatedAxis) {
  Points2 raw(3, 2);
  raw << -2, 5, 0, 6, 2, 7;
  const auto p = normalize_projection(raw);
  EXPECT_EQ(p.normalized(0, 0), 0.0);
  EXPECT_EQ(p.normalized(1, 0), 0.5);
  EXPECT_EQ(p.normalized(2, 0), 1.0);
  EXPECT_EQ(p.lo[0], -2.0);
  EXPECT_EQ(p.hi[0], 2.0);
}

TEST(NormalizeProjection, DegenerateAxesMapToCenter) {
  Points2 raw(3, 2);
  raw << 1, 2, 1, 2, 1, 2;
  const auto p = normalize_projection(raw);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_EQ(p.normalized(i, 0), 0.5);
    EXPECT_EQ(p.normalized(i, 1), 0.5);
  }
  Points2 line(2, 2);
  line << 0, 3, 4, 3;
  const auto q = normalize_projection(line);
  EXPECT_EQ(q.normalized(1, 0), 1.0);
  EXPECT_EQ(q.normalized(1, 1), 0.5);
}

TEST(NormalizeProjection, RejectsNonFinite) {
  Points2 raw(2, 2);
  raw << 0, 0, std::nan(""), 1;
  EXPECT_EQ(error_of([&] { normalize_projection(raw); }), ErrorCode::invalid_input);
}

TEST(NormalizeProjection, PropertiesOnRandomInput) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Points2 raw = testing::random_points(rng, 1 + static_cast<Eigen::Index>(rng.below(30)), -50, 50);
    const auto p = normalize_projection(raw);
    EXPECT_GE(p.normalized.minCoeff(), 0.0);
    EXPECT_LE(p.normalized.maxCoeff(), 1.0);
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      const Point2 back = p.to_raw({p.normalized(i, 0), p.normalized(i, 1)});
      if (p.hi[0] > p.lo[0]) {
        EXPECT_NEAR(back.x, raw(i, 0), 1e-12);
      }
    }
  }
}

TEST(GridEval, SingleAnchorFillsGrid) {
  Points2 a(1, 2);
  a << 0.3, 0.7;
  const KernelRegressor reg(a, {7.0}, GeneralizedKernel{2.0, 1.5});
  const auto g = grid_eval(reg, {}, 5, 4);
  ASSERT_EQ(g.values.size(), 20u);
  for (std::size_t k = 0; k < 20; ++k) {
    EXPECT_TRUE(g.mask[k]);
    EXPECT_DOUBLE_EQ(g.values[k], 7.0);
  }
}

TEST(GridEval, CellCentersAndLayout) {
  Points2 a(1, 2);
  a << 0, 0;
  const KernelRegressor reg(a, {1.0}, GeneralizedKernel{});
  const auto g = grid_eval(reg, {0.0, 1.0, 0.0, 0.5}, 4, 2);
  EXPECT_EQ(g.position(0, 0).x, 0.125);
  EXPECT_EQ(g.position(3, 0).x, 0.875);
  EXPECT_EQ(g.position(0, 1).y, 0.375);
  EXPECT_EQ(g.index(3, 1), 7u);
}

TEST(GridEval, MatchesScalarOracleOnHandExample) {
  Points2 a(3, 2);
  a << 1, 0, 0, 2, 2, 2;
  const std::vector<double> v{1, 2, 3};
  const KernelRegressor reg(a, v, GeneralizedKernel{1.0, 1.0});
  const auto g = grid_eval(reg, {-1.0, 3.0, -1.0, 3.0}, 8, 8);
  for (std::size_t j = 0; j < 8; ++j) {
    for (std::size_t i = 0; i < 8; ++i) {
      const Point2 p = g.position(i, j);
      double num = 0.0, den = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double w = 1.0 / (1.0 + std::pow(p.x - a(k, 0), 2) + std::pow(p.y - a(k, 1), 2));
        num += w * v[static_cast<std::size_t>(k)];
        den += w;
      }
      EXPECT_NEAR(g.values[g.index(i, j)], num / den, 1e-12);
    }
  }
}

TEST(GridEval, ZoomedBboxReproducesFullGridValuesExactly) {
  Rng rng(3);
  const Points2 a = testing::random_points(rng, 30);
  std::vector<double> v(30);
  for (auto& x : v) x = rng.normal();
  const KernelRegressor reg(a, v, GeneralizedKernel{5.0, 1.3});
  const auto full = grid_eval(reg, {}, 4, 4);
  const auto zoom = grid_eval(reg, {0.0, 0.5, 0.0, 0.5}, 2, 2);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < 2; ++i) {
      ASSERT_EQ(zoom.position(i, j).x, full.position(i, j).x);
      EXPECT_EQ(zoom.values[zoom.index(i, j)], full.values[full.index(i, j)]);
    }
  }
}

TEST(GridEval, UnmaskedValuesWithinAnchorRange) {
  Rng rng(4);
  const Points2 a = testing::random_points(rng, 40);
  std::vector<double> v(40);
  for (auto& x : v) x = rng.normal();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const auto g = grid_eval(KernelRegressor(a, v, GaussianKernel{0.02}), {}, 60, 60);
  std::size_t masked = 0;
  for (std::size_t k = 0; k < g.values.size(); ++k) {
    if (!g.mask[k]) {
      ++masked;
      continue;
    }
    EXPECT_GE(g.values[k], *lo - 1e-12);
    EXPECT_LE(g.values[k], *hi + 1e-12);
  }
  EXPECT_EQ(masked, g.values.size() - g.rendered());
}

TEST(GridEval, EmptyNeighborhoodCellsAreMasked) {
  Points2 a(1, 2);
  a << 0, 0;
  const auto g = grid_eval(KernelRegressor(a, {1.0}, GaussianKernel{0.001}), {0, 10, 0, 10}, 3, 3);
  EXPECT_EQ(g.rendered(), 0u);
  EXPECT_TRUE(std::isnan(g.values[0]));
}

TEST(GridEval, Preconditions) {
  Points2 a(1, 2);
  a << 0, 0;
  const KernelRegressor reg(a, {1.0}, GeneralizedKernel{});
  EXPECT_EQ(error_of([&] { grid_eval(reg, {}, 1, 4); }), ErrorCode::invalid_input);
  EXPECT_EQ(error_of([&] { grid_eval(reg, {0.5, 0.5, 0, 1}, 4, 4); }), ErrorCode::invalid_input);
}

TEST(GridEval, ScheduleIndependent) {
  Rng rng(5);
  const Points2 a = testing::random_points(rng, 50);
  std::vector<double> v(50);
  for (auto& x : v) x = rng.normal();
  const KernelRegressor reg(a, v, GeneralizedKernel{3.0, 1.1});
  const unsigned saved = thread_count();
  thread_count() = 1;
  const auto serial = grid_eval(reg, {}, 33, 17);
  thread_count() = 5;
  const auto parallel = grid_eval(reg, {}, 33, 17);
  thread_count() = saved;
  EXPECT_EQ(serial.values, parallel.values);
}

ContourGrid unit_grid(std::size_t n) {
  Points2 a(1, 2);
  a << 0.5, 0.5;
  return grid_eval(KernelRegressor(a, {1.0}, GeneralizedKernel{}), {}, n, n);
}

TEST(CutoffMask, InfiniteAndTinyThresholds) {
  Points2 a(1, 2);
  a << 0.5, 0.5;
  auto g = unit_grid(4);
  cutoff_mask(g, a, std::numeric_limits<double>::infinity());
  EXPECT_EQ(g.rendered(), 16u);
  cutoff_mask(g, a, 1e-3);
  EXPECT_EQ(g.rendered(), 0u);
  EXPECT_EQ(error_of([&] { cutoff_mask(g, a, 0.0); }), ErrorCode::invalid_input);
}

TEST(CutoffMask, OnlyCenterSurvivesOnThreeByThree) {
  Points2 a(1, 2);
  a << 0.5, 0.5;
  auto g = unit_grid(3);
  cutoff_mask(g, a, 0.3);
  // Brute-force distance table: edge cells at 1/3, corners at sqrt(2)/3.
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t i = 0; i < 3; ++i) {
      const double dist = std::sqrt(sq_dist(g.position(i, j), {0.5, 0.5}));
      EXPECT_EQ(g.mask[g.index(i, j)], dist <= 0.3) << i << "," << j;
    }
  }
  EXPECT_EQ(g.rendered(), 1u);
  EXPECT_TRUE(g.mask[g.index(1, 1)]);
}

TEST(CutoffMask, MatchesBruteForceNearestDistance) {
  Rng rng(6);
  const Points2 a = testing::random_points(rng, 60);
  auto g = grid_eval(KernelRegressor(a, std::vector<double>(60, 1.0), GeneralizedKernel{}), {}, 40, 40);
  cutoff_mask(g, a, 0.05);
  for (std::size_t j = 0; j < 40; ++j) {
    for (std::size_t i = 0; i < 40; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < 60; ++k) best = std::min(best, sq_dist(g.position(i, j), {a(k, 0), a(k, 1)}));
      EXPECT_EQ(g.mask[g.index(i, j)], std::sqrt(best) <= 0.05);
    }
  }
}

void expect_poisson_properties(const Points2& pts, const std::vector<std::size_t>& sel, double r) {
  std::set<std::size_t> chosen(sel.begin(), sel.end());
  for (std::size_t a : sel) {
    for (std::size_t b : sel) {
      if (a < b) {
        EXPECT_GE(std::sqrt(sq_dist({pts(a, 0), pts(a, 1)}, {pts(b, 0), pts(b, 1)})), r);
      }
    }
  }
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    if (chosen.count(static_cast<std::size_t>(i))) continue;
    bool covered = false;
    for (std::size_t a : sel) covered |= std::sqrt(sq_dist({pts(i, 0), pts(i, 1)}, {pts(a, 0), pts(a, 1)})) < r;
    EXPECT_TRUE(covered) << "point " << i;
  }
}

TEST(SamplePoints, PoissonOnUnitLattice) {
  Points2 pts(9, 2);
  for (int i = 0; i < 9; ++i) {
    pts(i, 0) = i % 3;
    pts(i, 1) = i / 3;
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto sel = sample_points(pts, SampleMethod::poisson, 1.5, seed);
    EXPECT_FALSE(sel.empty());
    expect_poisson_properties(pts, sel, 1.5);
  }
}

TEST(SamplePoints, PoissonEdgeCases) {
  Rng rng(7);
  const Points2 pts = testing::random_points(rng, 25);
  EXPECT_EQ(sample_points(pts, SampleMethod::poisson, 0.0, 3).size(), 25u);
  Points2 one(1, 2);
  one << 0.2, 0.4;
  EXPECT_EQ(sample_points(one, SampleMethod::poisson, 0.3, 1), std::vector<std::size_t>{0});
  for (double r : {0.05, 0.1, 0.3}) expect_poisson_properties(pts, sample_points(pts, SampleMethod::poisson, r, 9), r);
}

TEST(SamplePoints, RandomIsDeterministicWithoutReplacement) {
  Rng rng(8);
  const Points2 pts = testing::random_points(rng, 50);
  const auto a = sample_points(pts, SampleMethod::random, 20, 4);
  EXPECT_EQ(a, sample_points(pts, SampleMethod::random, 20, 4));
  EXPECT_NE(a, sample_points(pts, SampleMethod::random, 20, 5));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 20u);
  EXPECT_EQ(sample_points(pts, SampleMethod::random, 50, 4).size(), 50u);
  EXPECT_EQ(error_of([&] { sample_points(pts, SampleMethod::random, 51, 4); }), ErrorCode::invalid_count);
}

TEST(ContourMap, EstimatesInNormalizedCoordinates) {
  Points2 raw(3, 2);
  raw << -2, 10, 2, 10, 0, 30;
  const ContourMap map(normalize_projection(raw), {1, 2, 3}, GeneralizedKernel{1.0, 1.0});
  EXPECT_EQ(map.score_min(), 1.0);
  EXPECT_EQ(map.score_max(), 3.0);
  // Normalized (0.5, 0.5) is raw (0, 20).
  Points2 anchors = raw;
  EXPECT_NEAR(*map.estimate({0.5, 0.5}),
              nw_estimate({0, 20}, anchors, std::vector<double>{1, 2, 3}, KernelSpec{GeneralizedKernel{}}), 1e-14);
  const auto g = map.grid({}, 10, 10, 0.05);
  EXPECT_LT(g.rendered(), 100u);
}

TEST(Export, JsonShapeAndNulls) {
  Points2 a(1, 2);
  a << 0.5, 0.5;
  auto g = unit_grid(3);
  cutoff_mask(g, a, 0.3);
  const auto j = grid_to_json(g, 1.0, 1.0);
  EXPECT_EQ(j["nw"], 3);
  EXPECT_EQ(j["nh"], 3);
  EXPECT_EQ(j["values"].size(), 9u);
  EXPECT_TRUE(j["values"][0].is_null());
  EXPECT_EQ(j["values"][4], 1.0);
  EXPECT_EQ(j["mask"][4], true);
  EXPECT_EQ(j["bbox"], nlohmann::json({0.0, 1.0, 0.0, 1.0}));
  EXPECT_EQ(j["kernel"]["type"], "generalized_t");
}

TEST(Export, PpmHeaderAndPixels) {
  Points2 a(1, 2);
  a << 0.5, 0.5;
  auto g = unit_grid(3);
  cutoff_mask(g, a, 0.3);
  const std::string ppm = grid_to_ppm(g, 0.0, 2.0);
  const std::string header = "P6\n3 3\n255\n";
  ASSERT_EQ(ppm.size(), header.size() + 27);
  EXPECT_EQ(ppm.substr(0, header.size()), header);
  const auto mid = colormap(0.5);
  const std::size_t center = header.size() + 3 * 4;
  EXPECT_EQ(static_cast<std::uint8_t>(ppm[center]), mid[0]);
  EXPECT_EQ(static_cast<std::uint8_t>(ppm[header.size()]), 255);
}

TEST(Colormap, EndpointsAndClamp) {
  EXPECT_EQ(colormap(0.0), (std::array<std::uint8_t, 3>{68, 1, 84}));
  EXPECT_EQ(colormap(1.0), (std::array<std::uint8_t, 3>{253, 231, 37}));
  EXPECT_EQ(colormap(-3.0), colormap(0.0));
  EXPECT_EQ(colormap(7.0), colormap(1.0));
}

}  // namespace
}  // namespace kmap
