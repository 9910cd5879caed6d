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

#include "kmap/bench.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

namespace kmap {
namespace {

using testing::error_of;

TEST(ErrorMetrics, HandExamples) {
  const std::vector<double> e1{1, 3}, t1{2, 2};
  const auto a = error_metrics(e1, t1);
  EXPECT_DOUBLE_EQ(a.mae, 1.0);
  EXPECT_DOUBLE_EQ(*a.mape, 50.0);
  EXPECT_DOUBLE_EQ(a.rmse, 1.0);
  const std::vector<double> e2{0}, t2{4};
  const auto b = error_metrics(e2, t2);
  EXPECT_DOUBLE_EQ(b.mae, 4.0);
  EXPECT_DOUBLE_EQ(*b.mape, 100.0);
  EXPECT_DOUBLE_EQ(b.rmse, 4.0);
  const auto c = error_metrics(t1, t1);
  EXPECT_EQ(c.mae, 0.0);
  EXPECT_EQ(*c.mape, 0.0);
  EXPECT_EQ(c.rmse, 0.0);
}

TEST(ErrorMetrics, ZeroTargetLeavesMapeUndefined) {
  const std::vector<double> e{1, 2}, t{0, 2};
  const auto m = error_metrics(e, t);
  EXPECT_FALSE(m.mape.has_value());
  EXPECT_DOUBLE_EQ(m.mae, 0.5);
  EXPECT_DOUBLE_EQ(m.rmse, std::sqrt(0.5));
  const std::vector<double> empty;
  EXPECT_EQ(error_of([&] { error_metrics(empty, empty); }), ErrorCode::invalid_input);
}

TEST(Trustworthiness, MatchesBruteForceOracle) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n_pts = 6 + rng.below(45);
    const std::size_t n = 1 + rng.below(std::min<std::size_t>(10, (2 * n_pts - 2) / 3));
    const MatrixXd x = testing::random_matrix(rng, static_cast<Eigen::Index>(n_pts), 1 + static_cast<Eigen::Index>(rng.below(8)));
    const Points2 y = testing::random_matrix(rng, static_cast<Eigen::Index>(n_pts), 2);
    const double got = trustworthiness(x, y, n);
    EXPECT_EQ(got, testing::trust_oracle(x, y, n)) << "trial " << t;
    if (2 * n < n_pts) {
      EXPECT_GE(got, 0.0);
      EXPECT_LE(got, 1.0);
    }
  }
}

TEST(Trustworthiness, SixPointsNeighborhoodTwo) {
  Rng rng(2);
  const MatrixXd x = testing::random_matrix(rng, 6, 4);
  const Points2 y = testing::random_matrix(rng, 6, 2);
  EXPECT_EQ(trustworthiness(x, y, 2), testing::trust_oracle(x, y, 2));
}

TEST(Trustworthiness, IdentityEmbeddingIsOne) {
  Rng rng(3);
  const Points2 x = testing::random_points(rng, 40);
  EXPECT_EQ(trustworthiness(x, x, 5), 1.0);
  const Points2 scaled = 3.0 * x;
  EXPECT_EQ(trustworthiness(x, scaled, 10), 1.0);
}

TEST(Trustworthiness, InvalidNeighborhood) {
  Rng rng(4);
  const Points2 x = testing::random_points(rng, 10);
  EXPECT_EQ(error_of([&] { trustworthiness(x, x, 0); }), ErrorCode::invalid_n);
  // (2N - 1) / 3 = 6.33, so n = 7 makes the denominator negative.
  EXPECT_EQ(error_of([&] { trustworthiness(x, x, 7); }), ErrorCode::invalid_n);
  EXPECT_NO_THROW(trustworthiness(x, x, 6));
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix; eigenvalues only.
std::vector<double> jacobi_eigenvalues(MatrixXd a) {
  const Eigen::Index n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (off < 1e-30) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) ev[static_cast<std::size_t>(k)] = a(k, k);
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

TEST(Pca, ReconstructionMatchesBestRankTwo) {
  Rng rng(5);
  for (int t = 0; t < 5; ++t) {
    MatrixXd x = testing::random_matrix(rng, 20, 5);
    for (Eigen::Index c = 0; c < 5; ++c) x.col(c) *= 1.0 + static_cast<double>(c);
    const PcaModel pca = fit_pca(x);
    EXPECT_NEAR((pca.components * pca.components.transpose() - Eigen::Matrix2d::Identity()).norm(), 0.0, 1e-12);
    MatrixXd centered = x.rowwise() - x.colwise().mean();
    const Points2 y = pca.project(x);
    const double err = (centered - y * pca.components).squaredNorm();
    const auto ev = jacobi_eigenvalues(centered.transpose() * centered);
    const double best = ev[2] + ev[3] + ev[4];
    EXPECT_NEAR(err, best, 1e-8);
  }
}

TEST(Pca, AxisAlignedInputIsPreserved) {
  Points2 x(4, 2);
  x << -3, 0, 3, 0, 0, -1, 0, 1;
  const Points2 y = pca_project(x);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_NEAR(std::abs(y(i, 0)), std::abs(x(i, 0)), 1e-12);
    EXPECT_NEAR(std::abs(y(i, 1)), std::abs(x(i, 1)), 1e-12);
  }
}

TEST(Pca, SignConventionAndDegenerateData) {
  Rng rng(6);
  const MatrixXd x = testing::random_matrix(rng, 30, 4);
  const PcaModel pca = fit_pca(x);
  for (Eigen::Index k = 0; k < 2; ++k) {
    Eigen::Index arg = 0;
    pca.components.row(k).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(pca.components(k, arg), 0.0);
  }
  EXPECT_GE(pca.variances(0), pca.variances(1));
  MatrixXd line(3, 3);
  line << 1, 2, 3, 2, 4, 6, 3, 6, 9;
  EXPECT_EQ(error_of([&] { fit_pca(line); }), ErrorCode::degenerate_data);
}

TEST(ParseMethod, KnownAndUnknown) {
  EXPECT_EQ(parse_method("akrmap").kind, MethodKind::akrmap);
  EXPECT_EQ(parse_method("akrmap_no_gk").kind, MethodKind::akrmap_no_gk);
  const auto nk = parse_method("akrmap_no_kr");
  EXPECT_EQ(nk.kind, MethodKind::akrmap_no_kr);
  EXPECT_EQ(nk.bandwidth, BandwidthMethod::silverman);
  const auto p = parse_method("pca_rbf_loocv@0.1");
  EXPECT_EQ(p.kind, MethodKind::pca_rbf);
  EXPECT_EQ(p.bandwidth, BandwidthMethod::loocv);
  EXPECT_EQ(p.bandwidth_scale, 0.1);
  EXPECT_EQ(parse_method("akrmap_no_kr_alb").bandwidth, BandwidthMethod::alb);
  for (const char* bad : {"tsne", "pca_rbf_foo", "pca_rbf_alb@x", "pca_rbf_alb@-1", "akrmap@0.5"}) {
    EXPECT_EQ(error_of([&] { parse_method(bad); }), ErrorCode::invalid_config) << bad;
  }
}

// Embeddings whose top principal axis carries the metric linearly.
std::pair<Dataset, Dataset> linear_pc_data(std::uint64_t seed) {
  Rng rng(seed);
  auto make = [&rng](std::size_t n) {
    Dataset ds;
    ds.x.resize(static_cast<Eigen::Index>(n), 5);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const double z = rng.uniform(-3.0, 3.0);
      ds.x(r, 0) = static_cast<float>(z);
      ds.x(r, 1) = static_cast<float>(rng.uniform(-1.0, 1.0));
      for (Eigen::Index c = 2; c < 5; ++c) ds.x(r, c) = static_cast<float>(0.1 * rng.normal());
      ds.s.push_back(static_cast<float>(2.0 * ds.x(r, 0) + 5.0));
    }
    return ds;
  };
  Dataset train = make(500);
  Dataset test = make(200);
  return {train, test};
}

double stddev(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

TEST(Benchmark, PcaBaselineOnLinearMetric) {
  const auto [train, test] = linear_pc_data(7);
  BenchOptions opt;
  opt.trust_sizes = {20};
  const auto rep = evaluate_method(parse_method("pca_rbf_silverman"), train, test, 1, opt);
  EXPECT_LT(rep.out_of_sample.mae, 0.1 * stddev(test.scores()));
  ASSERT_TRUE(rep.bandwidth.has_value());

  // Independent check: the reported error equals direct NW evaluation at the
  // held-out positions with the training rows as the only anchors.
  const PcaModel pca = fit_pca(train.x);
  const Points2 anchors = pca.project(train.x);
  const Points2 queries = pca.project(test.x);
  const std::vector<double> values = train.scores();
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    abs_sum += std::abs(nw_estimate({queries(r, 0), queries(r, 1)}, anchors, values,
                                    KernelSpec{GaussianKernel{*rep.bandwidth}}) -
                        test.s[i]);
  }
  EXPECT_NEAR(rep.out_of_sample.mae, abs_sum / static_cast<double>(test.size()), 1e-9);
}

BenchOptions quick_options() {
  BenchOptions opt;
  opt.train.epochs = 2;
  opt.train.batch = 64;
  opt.trust_sizes = {5, 10};
  return opt;
}

TEST(Benchmark, AblationReportsAndInvariants) {
  Rng rng(8);
  const Dataset train = testing::random_dataset(rng, 120, 6);
  const Dataset test = testing::random_dataset(rng, 40, 6);
  const std::vector<MethodSpec> methods{parse_method("akrmap"), parse_method("akrmap_no_gk"),
                                        parse_method("akrmap_no_kr"), parse_method("pca_rbf_alb")};
  const auto rows = run_benchmark(train, test, methods, {1, 2}, quick_options());
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& r : rows) {
    EXPECT_LE(r.in_sample.mae, r.in_sample.rmse);
    EXPECT_LE(r.out_of_sample.mae, r.out_of_sample.rmse);
    EXPECT_GE(r.out_of_sample.mae, 0.0);
    for (const auto& [n, t] : r.trust) {
      EXPECT_GE(t, 0.0);
      EXPECT_LE(t, 1.0);
    }
    EXPECT_EQ(r.trust.size(), 2u);
  }
  EXPECT_EQ(rows[2].method, "akrmap_no_gk");
  EXPECT_EQ(*rows[2].alpha, 1.0);
  EXPECT_EQ(*rows[2].beta, 1.0);
  EXPECT_FALSE(rows[4].alpha.has_value());
  EXPECT_TRUE(rows[4].bandwidth.has_value());
  EXPECT_FALSE(rows[6].bandwidth.has_value());
}

TEST(Benchmark, HeldOutRowsAreNeverAnchors) {
  Rng rng(9);
  const Dataset train = testing::random_dataset(rng, 80, 4);
  const FittedMethod fit = fit_method(parse_method("akrmap"), train, quick_options().train, 3);
  EXPECT_EQ(static_cast<std::size_t>(fit.regressor.anchors().rows()), train.size());
  EXPECT_EQ(fit.regressor.anchors(), fit.project(train.x));
}

TEST(Benchmark, DeterministicRows) {
  Rng rng(10);
  const Dataset train = testing::random_dataset(rng, 100, 5);
  const Dataset test = testing::random_dataset(rng, 30, 5);
  BenchOptions opt = quick_options();
  opt.train.deterministic = true;
  const std::vector<MethodSpec> methods{parse_method("akrmap"), parse_method("pca_rbf_loocv")};
  auto strip = [](std::vector<EvalReport> rows) {
    for (auto& r : rows) r.seconds = 0.0;
    return reports_to_csv(rows);
  };
  EXPECT_EQ(strip(run_benchmark(train, test, methods, {4}, opt)),
            strip(run_benchmark(train, test, methods, {4}, opt)));
}

TEST(Benchmark, ErrorsAreTaggedByMethod) {
  Rng rng(11);
  const Dataset train = testing::random_dataset(rng, 50, 4);
  const Dataset test = testing::random_dataset(rng, 10, 3);
  EXPECT_EQ(error_of([&] { run_benchmark(train, test, {parse_method("pca_rbf_silverman")}, {1}, {}); }),
            ErrorCode::dimension_mismatch);
  Dataset flat = train;
  flat.x.col(1) = flat.x.col(0);
  flat.x.col(2) = 2.0f * flat.x.col(0);
  flat.x.col(3) = -flat.x.col(0);
  try {
    run_benchmark(flat, flat, {parse_method("pca_rbf_silverman")}, {1}, {});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_data);
    EXPECT_EQ(std::string(e.what()).rfind("pca_rbf_silverman:", 0), 0u) << e.what();
  }
}

TEST(Reports, CsvAndJsonShape) {
  EvalReport r;
  r.method = "m";
  r.in_sample = {1.0, 10.0, 2.0, 0};
  r.out_of_sample = {1.5, std::nullopt, 2.5, 1};
  r.trust = {{20, 0.9}};
  r.seed = 3;
  const std::string csv = reports_to_csv({r});
  EXPECT_NE(csv.find("m,"), std::string::npos);
  const auto j = reports_to_json({r});
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["method"], "m");
  EXPECT_TRUE(j[0]["out_of_sample"]["mape"].is_null());
}

}  // namespace
}  // namespace kmap
