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

#include "kmap/server.hpp"

#include "test_util.hpp"

#include <future>
#include <thread>

namespace kmap {
namespace {

ExplorerApi make_api(std::size_t n = 200) {
  Rng rng(1);
  Dataset ds = testing::random_dataset(rng, n, 3);
  for (std::size_t i = 0; i < n; ++i) ds.meta.push_back("prompt " + std::to_string(i));
  Points2 raw = testing::random_points(rng, static_cast<Eigen::Index>(n), -4.0, 6.0);
  ContourMap map(normalize_projection(raw), ds.scores(), GeneralizedKernel{2.0, 1.2});
  return ExplorerApi(std::move(map), std::move(ds));
}

nlohmann::json body(const ApiResponse& r) { return nlohmann::json::parse(r.body); }

TEST(ExplorerApi, Meta) {
  const auto api = make_api();
  const auto r = api.route("/meta", {});
  ASSERT_EQ(r.status, 200);
  const auto j = body(r);
  EXPECT_EQ(j["n"], 200);
  EXPECT_EQ(j["d"], 3);
  EXPECT_EQ(j["bbox"], nlohmann::json({0.0, 1.0, 0.0, 1.0}));
  EXPECT_LE(j["score_min"].get<double>(), j["score_max"].get<double>());
}

TEST(ExplorerApi, ContourZoomPurity) {
  const auto api = make_api();
  const auto full = body(api.route("/contour", {{"nw", "4"}, {"nh", "4"}, {"tau", "0"}}));
  const auto quad = body(api.route("/contour", {{"xmin", "0"}, {"xmax", "0.5"}, {"ymin", "0.5"}, {"ymax", "1"},
                                                {"nw", "2"}, {"nh", "2"}, {"tau", "0"}}));
  ASSERT_EQ(full["values"].size(), 16u);
  ASSERT_EQ(quad["values"].size(), 4u);
  for (int j = 0; j < 2; ++j) {
    for (int i = 0; i < 2; ++i) {
      EXPECT_EQ(quad["values"][j * 2 + i], full["values"][(j + 2) * 4 + i]);
    }
  }
}

TEST(ExplorerApi, ContourErrors) {
  const auto api = make_api();
  EXPECT_EQ(api.route("/contour", {{"nw", "2000"}, {"nh", "2000"}}).status, 413);
  EXPECT_EQ(api.route("/contour", {{"nw", "1000"}, {"nh", "1000"}, {"xmin", "0.4"}, {"xmax", "0.41"}}).status, 200);
  EXPECT_EQ(api.route("/contour", {{"xmin", "0.5"}, {"xmax", "0.5"}}).status, 422);
  EXPECT_EQ(api.route("/contour", {{"ymin", "0.7"}, {"ymax", "0.2"}}).status, 422);
  EXPECT_EQ(api.route("/contour", {{"nw", "abc"}}).status, 400);
  EXPECT_EQ(api.route("/contour", {{"xmin", "nan"}}).status, 400);
  EXPECT_EQ(api.route("/contour", {{"nw", "1"}}).status, 400);
  const auto err = body(api.route("/contour", {{"nw", "-3"}}));
  EXPECT_EQ(err["error"], "malformed_query");
}

TEST(ExplorerApi, PointsSampling) {
  const auto api = make_api();
  const auto all = body(api.route("/points", {{"method", "poisson"}, {"radius", "0"}}));
  EXPECT_EQ(all.size(), 200u);
  const QueryParams box{{"method", "poisson"}, {"radius", "0"}, {"xmin", "0"}, {"xmax", "0.5"},
                        {"ymin", "0"},         {"ymax", "0.5"}};
  const auto quad = body(api.route("/points", box));
  std::size_t inside = 0;
  for (const auto& p : all) inside += p["x"] <= 0.5 && p["y"] <= 0.5;
  EXPECT_EQ(quad.size(), inside);
  for (const auto& p : quad) {
    EXPECT_LE(p["x"].get<double>(), 0.5);
    EXPECT_LE(p["y"].get<double>(), 0.5);
  }
  const auto some = body(api.route("/points", {{"method", "random"}, {"count", "17"}, {"seed", "3"}}));
  EXPECT_EQ(some.size(), 17u);
  const auto spaced = body(api.route("/points", {{"method", "poisson"}, {"radius", "0.1"}}));
  EXPECT_LT(spaced.size(), 200u);
  EXPECT_EQ(api.route("/points", {{"method", "grid"}}).status, 400);
  EXPECT_EQ(api.route("/points", {{"method", "poisson"}}).status, 400);
  EXPECT_EQ(api.route("/points", {{"count", "x"}}).status, 400);
  EXPECT_EQ(api.route("/points", {{"xmin", "1"}, {"xmax", "0"}}).status, 422);
}

TEST(ExplorerApi, PointRecord) {
  const auto api = make_api();
  const auto r = api.route("/point/row7", {});
  ASSERT_EQ(r.status, 200);
  const auto j = body(r);
  EXPECT_EQ(j["id"], "row7");
  EXPECT_EQ(j["index"], 7);
  EXPECT_EQ(j["meta"], "prompt 7");
  EXPECT_EQ(api.route("/point/nope", {}).status, 404);
  EXPECT_EQ(api.route("/elsewhere", {}).status, 404);
}

TEST(ExplorerApi, RepeatedRequestsReturnIdenticalBodies) {
  const auto api = make_api();
  const QueryParams q{{"xmin", "0.1"}, {"xmax", "0.7"}, {"nw", "37"}, {"nh", "23"}};
  const std::string first = api.route("/contour", q).body;
  for (int k = 0; k < 3; ++k) EXPECT_EQ(api.route("/contour", q).body, first);
  const QueryParams p{{"method", "poisson"}, {"radius", "0.05"}, {"seed", "9"}};
  EXPECT_EQ(api.route("/points", p).body, api.route("/points", p).body);
}

TEST(ExplorerApi, ConcurrentRequestsMatchSerial) {
  const auto api = make_api();
  std::vector<QueryParams> queries;
  for (int k = 0; k < 8; ++k) {
    const double lo = 0.05 * k;
    queries.push_back({{"xmin", std::to_string(lo)}, {"xmax", std::to_string(lo + 0.4)},
                       {"ymin", "0.2"}, {"ymax", "0.9"}, {"nw", "40"}, {"nh", "30"}});
  }
  std::vector<std::string> serial;
  for (const auto& q : queries) serial.push_back(api.route("/contour", q).body);
  std::vector<std::future<std::string>> futures;
  for (const auto& q : queries) {
    futures.push_back(std::async(std::launch::async, [&api, q] { return api.route("/contour", q).body; }));
  }
  for (std::size_t k = 0; k < queries.size(); ++k) EXPECT_EQ(futures[k].get(), serial[k]);
}

TEST(Server, LiveRoundTripWithCors) {
  const auto api = make_api(50);
  httplib::Server server;
  mount(server, api);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread t([&server] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  const auto meta = client.Get("/meta");
  ASSERT_TRUE(meta);
  EXPECT_EQ(meta->status, 200);
  EXPECT_EQ(meta->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(nlohmann::json::parse(meta->body)["n"], 50);
  const auto big = client.Get("/contour?nw=2000&nh=2000");
  ASSERT_TRUE(big);
  EXPECT_EQ(big->status, 413);
  const auto grid = client.Get("/contour?nw=4&nh=4&tau=0");
  ASSERT_TRUE(grid);
  EXPECT_EQ(grid->body, api.route("/contour", {{"nw", "4"}, {"nh", "4"}, {"tau", "0"}}).body);
  const auto missing = client.Get("/point/zzz");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  server.stop();
  t.join();
}

}  // namespace
}  // namespace kmap
