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

#include "kmap/contour.hpp"
#include "kmap/core.hpp"
#include "kmap/dataset.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <charconv>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>

namespace kmap {

inline constexpr std::size_t kMaxGridCells = 1'000'000;
inline constexpr std::size_t kDefaultServerGrid = 128;

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

using QueryParams = std::multimap<std::string, std::string>;

/// Read-only query handlers over a frozen contour map and its dataset. Every
/// handler is a pure function of its arguments.
class ExplorerApi {
 public:
  ExplorerApi(ContourMap map, Dataset data) : map_(std::move(map)), data_(std::move(data)) {
    if (map_.projection().size() != data_.size()) {
      fail(ErrorCode::invalid_input, "projection and dataset differ in row count");
    }
    for (std::size_t i = 0; i < data_.size(); ++i) by_id_.emplace(data_.id_of(i), i);
  }

  ApiResponse meta() const {
    const nlohmann::json j{{"n", data_.size()},
                           {"d", data_.dim()},
                           {"score_min", map_.score_min()},
                           {"score_max", map_.score_max()},
                           {"bbox", {0.0, 1.0, 0.0, 1.0}},
                           {"kernel", kernel_to_json(map_.regressor().kernel())}};
    return ok(j);
  }

  ApiResponse contour(const QueryParams& q) const {
    BBox box;
    std::size_t nw = kDefaultServerGrid;
    std::size_t nh = kDefaultServerGrid;
    double tau = kDefaultCutoff;
    if (auto e = read_bbox(q, box)) return *e;
    if (auto e = read_number(q, "nw", nw)) return *e;
    if (auto e = read_number(q, "nh", nh)) return *e;
    if (auto e = read_number(q, "tau", tau)) return *e;
    if (nw < 2 || nh < 2) return error(400, "invalid_input", "nw and nh must be at least 2");
    if (nw > kMaxGridCells / nh) {
      return error(413, "grid_too_large", "nw*nh exceeds " + std::to_string(kMaxGridCells) + " cells");
    }
    if (!box.valid()) return error(422, "invalid_bbox", "bbox needs min < max on both axes");
    const ContourGrid g = map_.grid(box, nw, nh, tau);
    return ok(grid_to_json(g, map_.score_min(), map_.score_max()));
  }

  ApiResponse points(const QueryParams& q) const {
    BBox box;
    std::string method = "random";
    double param = 0.0;
    std::uint64_t seed = 0;
    if (auto e = read_bbox(q, box)) return *e;
    if (auto e = read_number(q, "seed", seed)) return *e;
    if (auto it = q.find("method"); it != q.end()) method = it->second;
    if (!box.valid()) return error(422, "invalid_bbox", "bbox needs min < max on both axes");

    const Points2& norm = map_.projection().normalized;
    std::vector<std::size_t> inside;
    for (Eigen::Index i = 0; i < norm.rows(); ++i) {
      if (box.contains({norm(i, 0), norm(i, 1)})) inside.push_back(static_cast<std::size_t>(i));
    }
    Points2 subset(static_cast<Eigen::Index>(inside.size()), 2);
    for (std::size_t k = 0; k < inside.size(); ++k) {
      subset.row(static_cast<Eigen::Index>(k)) = norm.row(static_cast<Eigen::Index>(inside[k]));
    }
    SampleMethod how = SampleMethod::random;
    if (method == "random") {
      std::size_t count = inside.size();
      if (auto e = read_number(q, "count", count)) return *e;
      // A zoomed bbox may hold fewer points than requested.
      param = static_cast<double>(std::min(count, inside.size()));
    } else if (method == "poisson") {
      how = SampleMethod::poisson;
      if (q.find("radius") == q.end()) return error(400, "invalid_input", "poisson sampling needs radius");
      if (auto e = read_number(q, "radius", param)) return *e;
      if (!(param >= 0.0)) return error(400, "invalid_input", "radius must be non-negative");
    } else {
      return error(400, "invalid_input", "method must be random or poisson");
    }
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t k : sample_points(subset, how, param, seed)) {
      const std::size_t i = inside[k];
      out.push_back(point_summary(i));
    }
    return ok(out);
  }

  ApiResponse point(const std::string& id) const {
    const auto it = by_id_.find(id);
    if (it == by_id_.end()) return error(404, "unknown_id", "no point with id '" + id + "'");
    const std::size_t i = it->second;
    const auto r = static_cast<Eigen::Index>(i);
    nlohmann::json j = point_summary(i);
    j["index"] = i;
    j["raw"] = {map_.projection().raw(r, 0), map_.projection().raw(r, 1)};
    j["meta"] = data_.meta.empty() ? nlohmann::json(nullptr) : nlohmann::json(data_.meta[i]);
    return ok(j);
  }

  /// Dispatches a GET by path.
  ApiResponse route(const std::string& path, const QueryParams& q) const {
    if (path == "/meta") return meta();
    if (path == "/contour") return contour(q);
    if (path == "/points") return points(q);
    if (path.rfind("/point/", 0) == 0 && path.size() > 7) return point(path.substr(7));
    return error(404, "not_found", "no route " + path);
  }

  const ContourMap& map() const { return map_; }
  const Dataset& data() const { return data_; }

 private:
  nlohmann::json point_summary(std::size_t i) const {
    const auto r = static_cast<Eigen::Index>(i);
    const Points2& norm = map_.projection().normalized;
    return {{"id", data_.id_of(i)}, {"x", norm(r, 0)}, {"y", norm(r, 1)}, {"score", data_.s[i]}};
  }

  static ApiResponse ok(const nlohmann::json& j) { return {200, j.dump(), "application/json"}; }

  static ApiResponse error(int status, std::string_view code, const std::string& message) {
    return {status, nlohmann::json{{"error", code}, {"message", message}}.dump(), "application/json"};
  }

  template <typename V>
  static std::optional<ApiResponse> read_number(const QueryParams& q, const std::string& key, V& out) {
    const auto it = q.find(key);
    if (it == q.end()) return std::nullopt;
    const std::string& s = it->second;
    V v{};
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || s.empty()) {
      return error(400, "malformed_query", "parameter '" + key + "' is not a valid number");
    }
    if constexpr (std::is_floating_point_v<V>) {
      if (!std::isfinite(v)) return error(400, "malformed_query", "parameter '" + key + "' must be finite");
    }
    out = v;
    return std::nullopt;
  }

  static std::optional<ApiResponse> read_bbox(const QueryParams& q, BBox& box) {
    for (auto [key, field] : {std::pair{"xmin", &BBox::xmin}, std::pair{"xmax", &BBox::xmax},
                              std::pair{"ymin", &BBox::ymin}, std::pair{"ymax", &BBox::ymax}}) {
      if (auto e = read_number(q, key, box.*field)) return e;
    }
    return std::nullopt;
  }

  ContourMap map_;
  Dataset data_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Binds the API's routes with permissive cross-origin headers.
inline void mount(httplib::Server& server, const ExplorerApi& api) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  auto handle = [&api](const httplib::Request& req, httplib::Response& res) {
    QueryParams q(req.params.begin(), req.params.end());
    ApiResponse r;
    try {
      r = api.route(req.path, q);
    } catch (const Error& e) {
      r = {400, nlohmann::json{{"error", error_code_name(e.code())}, {"message", e.what()}}.dump(),
           "application/json"};
    }
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get("/meta", handle);
  server.Get("/contour", handle);
  server.Get("/points", handle);
  server.Get(R"(/point/.+)", handle);
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

/// Blocks serving on host:port until the server is stopped.
inline void serve(const ExplorerApi& api, const std::string& host, int port) {
  httplib::Server server;
  mount(server, api);
  if (!server.listen(host, port)) fail(ErrorCode::io_error, "cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace kmap
