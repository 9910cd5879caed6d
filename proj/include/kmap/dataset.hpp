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

#include <string>
#include <unordered_set>
#include <vector>

namespace kmap {

/// Embeddings with one metric value per row; ids and metadata are optional
/// (empty vectors when absent).
struct Dataset {
  MatrixXf x;  // N x d
  std::vector<float> s;
  std::vector<std::string> ids;
  std::vector<std::string> meta;

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }

  /// Id of row i; the row index when the dataset carries no ids.
  std::string id_of(std::size_t i) const { return ids.empty() ? std::to_string(i) : ids[i]; }

  std::vector<double> scores() const { return {s.begin(), s.end()}; }
};

inline void validate(const Dataset& ds) {
  if (ds.size() < 2) fail(ErrorCode::too_few_points, "dataset needs at least 2 rows");
  if (ds.s.size() != ds.size()) fail(ErrorCode::invalid_input, "score count differs from row count");
  if (!ds.ids.empty() && ds.ids.size() != ds.size()) fail(ErrorCode::invalid_input, "id count differs from row count");
  if (!ds.meta.empty() && ds.meta.size() != ds.size()) fail(ErrorCode::invalid_input, "metadata count differs from row count");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.x.row(static_cast<Eigen::Index>(i)).allFinite()) {
      fail(ErrorCode::nan_payload, "non-finite embedding at row " + std::to_string(i));
    }
    if (!std::isfinite(ds.s[i])) {
      fail(ErrorCode::nan_payload, "non-finite score at row " + std::to_string(i));
    }
  }
  if (!ds.ids.empty()) {
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < ds.ids.size(); ++i) {
      if (!seen.insert(ds.ids[i]).second) {
        fail(ErrorCode::duplicate_id, "duplicate id '" + ds.ids[i] + "' at row " + std::to_string(i));
      }
    }
  }
}

/// Rows `idx` of `ds` as a new dataset.
inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(idx.size()), ds.x.cols());
  out.s.resize(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.x.row(static_cast<Eigen::Index>(r)) = ds.x.row(static_cast<Eigen::Index>(idx[r]));
    out.s[r] = ds.s[idx[r]];
    if (!ds.ids.empty()) out.ids.push_back(ds.ids[idx[r]]);
    if (!ds.meta.empty()) out.meta.push_back(ds.meta[idx[r]]);
  }
  return out;
}

}  // namespace kmap
