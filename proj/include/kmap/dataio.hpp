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
#include "kmap/model.hpp"
#include "kmap/trainer.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace kmap {

inline constexpr char kDatasetMagic[4] = {'A', 'K', 'R', 'M'};
inline constexpr char kCheckpointMagic[4] = {'A', 'K', 'R', 'C'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Flags word after the score block of a binary dataset.
inline constexpr std::uint32_t kHasIds = 1u;
inline constexpr std::uint32_t kHasMeta = 2u;

// Little-endian encoder, independent of host byte order.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

// Little-endian decoder; running past the end throws `short_code`.
class ByteReader {
 public:
  ByteReader(std::string_view data, ErrorCode short_code) : data_(data), short_code_(short_code) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(take(n));
  }
  std::string_view take(std::size_t n) {
    if (n > remaining()) fail(short_code_, "file ends " + std::to_string(n - remaining()) + " bytes early");
    const auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  ErrorCode short_code_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_error, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_error, "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io_error, "write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Binary dataset

inline std::string encode_dataset(const Dataset& ds) {
  ByteWriter w;
  w.raw({kDatasetMagic, 4});
  w.u32(kDatasetVersion);
  w.u64(ds.size());
  w.u64(ds.dim());
  for (Eigen::Index r = 0; r < ds.x.rows(); ++r) {
    for (Eigen::Index c = 0; c < ds.x.cols(); ++c) w.f32(ds.x(r, c));
  }
  for (float v : ds.s) w.f32(v);
  std::uint32_t flags = 0;
  if (!ds.ids.empty()) flags |= kHasIds;
  if (!ds.meta.empty()) flags |= kHasMeta;
  w.u32(flags);
  for (const auto& id : ds.ids) w.str(id);
  for (const auto& m : ds.meta) w.str(m);
  return w.bytes();
}

inline Dataset decode_dataset(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kDatasetMagic, 4) != 0) {
    fail(ErrorCode::bad_magic, "not a binary dataset (magic mismatch)");
  }
  ByteReader r(bytes.substr(4), ErrorCode::truncated_file);
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    fail(ErrorCode::version_mismatch, "dataset format version " + std::to_string(version) + " unsupported");
  }
  const std::uint64_t n = r.u64();
  const std::uint64_t d = r.u64();
  if (n < 2) fail(ErrorCode::too_few_points, "dataset needs at least 2 rows, header says " + std::to_string(n));
  if (d < 1 || n > (std::uint64_t{1} << 40) / d) fail(ErrorCode::corrupt_file, "implausible dataset shape");
  if (r.remaining() < 4 * n * (d + 1)) fail(ErrorCode::truncated_file, "payload shorter than header promises");
  Dataset ds;
  ds.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < ds.x.rows(); ++i) {
    for (Eigen::Index c = 0; c < ds.x.cols(); ++c) {
      ds.x(i, c) = r.f32();
      if (!std::isfinite(ds.x(i, c))) {
        fail(ErrorCode::nan_payload, "non-finite embedding value at row " + std::to_string(i));
      }
    }
  }
  ds.s.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.s[i] = r.f32();
    if (!std::isfinite(ds.s[i])) fail(ErrorCode::nan_payload, "non-finite score at row " + std::to_string(i));
  }
  if (!r.at_end()) {
    const std::uint32_t flags = r.u32();
    if (flags & ~(kHasIds | kHasMeta)) fail(ErrorCode::corrupt_file, "unknown dataset flags");
    if (flags & kHasIds) {
      for (std::size_t i = 0; i < n; ++i) ds.ids.push_back(r.str());
    }
    if (flags & kHasMeta) {
      for (std::size_t i = 0; i < n; ++i) ds.meta.push_back(r.str());
    }
    if (!r.at_end()) fail(ErrorCode::corrupt_file, "trailing bytes after dataset");
  }
  validate(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// CSV dataset: header e0..e{d-1},score[,id][,meta]; RFC 4180 quoting.

namespace detail {

inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (field_started || !field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      field_started = false;
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) fail(ErrorCode::corrupt_file, "unterminated quoted CSV field");
  if (field_started || !field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline float parse_float(const std::string& s, std::size_t row, const std::string& column) {
  const auto where = [&] { return "row " + std::to_string(row) + ", column '" + column + "'"; };
  try {
    std::size_t used = 0;
    const float v = std::stof(s, &used);
    while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
    if (used != s.size()) fail(ErrorCode::corrupt_file, "malformed number at " + where());
    if (!std::isfinite(v)) fail(ErrorCode::nan_payload, "non-finite value at " + where());
    return v;
  } catch (const std::out_of_range&) {
    fail(ErrorCode::nan_payload, "out-of-range value at " + where());
  } catch (const std::invalid_argument&) {
    const bool nan_like = s.find("nan") != std::string::npos || s.find("NaN") != std::string::npos ||
                          s.find("inf") != std::string::npos || s.find("Inf") != std::string::npos;
    fail(nan_like ? ErrorCode::nan_payload : ErrorCode::corrupt_file, "malformed number at " + where());
  }
}

}  // namespace detail

inline Dataset decode_csv_dataset(std::string_view text) {
  const auto rows = detail::parse_csv(text);
  if (rows.empty()) fail(ErrorCode::corrupt_file, "empty CSV");
  const auto& header = rows[0];
  std::size_t d = 0;
  while (d < header.size() && header[d] == "e" + std::to_string(d)) ++d;
  if (d == 0 || d >= header.size() || header[d] != "score") {
    fail(ErrorCode::corrupt_file, "CSV header must be e0..e{d-1},score[,id][,meta]");
  }
  std::optional<std::size_t> id_col, meta_col;
  for (std::size_t c = d + 1; c < header.size(); ++c) {
    if (header[c] == "id" && !id_col) {
      id_col = c;
    } else if (header[c] == "meta" && !meta_col) {
      meta_col = c;
    } else {
      fail(ErrorCode::corrupt_file, "unexpected CSV column '" + header[c] + "'");
    }
  }
  const std::size_t n = rows.size() - 1;
  if (n < 2) fail(ErrorCode::too_few_points, "dataset needs at least 2 rows");
  Dataset ds;
  ds.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  ds.s.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = rows[i + 1];
    if (row.size() != header.size()) {
      fail(ErrorCode::corrupt_file, "row " + std::to_string(i) + " has " + std::to_string(row.size()) +
                                        " fields, expected " + std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < d; ++c) {
      ds.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = detail::parse_float(row[c], i, header[c]);
    }
    ds.s[i] = detail::parse_float(row[d], i, "score");
    if (id_col) ds.ids.push_back(row[*id_col]);
    if (meta_col) ds.meta.push_back(row[*meta_col]);
  }
  validate(ds);
  return ds;
}

inline std::string encode_csv_dataset(const Dataset& ds) {
  std::ostringstream os;
  os.precision(9);
  for (std::size_t c = 0; c < ds.dim(); ++c) os << 'e' << c << ',';
  os << "score";
  if (!ds.ids.empty()) os << ",id";
  if (!ds.meta.empty()) os << ",meta";
  os << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t c = 0; c < ds.dim(); ++c) {
      os << ds.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) << ',';
    }
    os << ds.s[i];
    if (!ds.ids.empty()) os << ',' << detail::csv_field(ds.ids[i]);
    if (!ds.meta.empty()) os << ',' << detail::csv_field(ds.meta[i]);
    os << '\n';
  }
  return os.str();
}

/// Loads a dataset, binary or CSV by magic bytes.
inline Dataset load_dataset(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kDatasetMagic, 4) == 0) return decode_dataset(bytes);
  return decode_csv_dataset(bytes);
}

enum class DatasetFormat { binary, csv };

inline void save_dataset(const std::string& path, const Dataset& ds, DatasetFormat format = DatasetFormat::binary) {
  validate(ds);
  write_file(path, format == DatasetFormat::binary ? encode_dataset(ds) : encode_csv_dataset(ds));
}

// ---------------------------------------------------------------------------
// Checkpoint

template <typename T>
std::string encode_checkpoint(const ModelState<T>& model) {
  ByteWriter w;
  w.raw({kCheckpointMagic, 4});
  w.u32(kCheckpointVersion);
  w.u64(model.input_dim);
  w.u64(model.seed);
  w.u8(static_cast<std::uint8_t>(model.mode));
  w.u32(static_cast<std::uint32_t>(model.mlp.layers.size()));
  auto put = [&w](const auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(static_cast<float>(m.data()[i]));
  };
  for (const auto& layer : model.mlp.layers) {
    w.u64(layer.out_dim());
    w.u64(layer.in_dim());
    w.u8(layer.normalized ? 1 : 0);
    put(layer.weight);
    put(layer.bias);
    if (layer.normalized) {
      put(layer.gamma);
      put(layer.beta);
      put(layer.running_mean);
      put(layer.running_var);
    }
  }
  w.f32(static_cast<float>(model.kernel.alpha_raw));
  w.f32(static_cast<float>(model.kernel.beta_raw));
  return w.bytes();
}

template <typename T>
ModelState<T> decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    fail(ErrorCode::bad_magic, "not a checkpoint (magic mismatch)");
  }
  ByteReader r(bytes.substr(4), ErrorCode::corrupt_file);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorCode::version_mismatch, "checkpoint version " + std::to_string(version) + " unsupported");
  }
  ModelState<T> model;
  model.input_dim = r.u64();
  model.seed = r.u64();
  const std::uint8_t mode = r.u8();
  if (mode > 1) fail(ErrorCode::corrupt_file, "bad mode flag");
  model.mode = static_cast<Mode>(mode);
  const std::size_t d = model.input_dim;
  if (d < 2 || d > (1u << 20)) fail(ErrorCode::corrupt_file, "implausible input dimension");
  if (r.u32() != kLayerCount) fail(ErrorCode::corrupt_file, "unexpected layer count");
  auto get = [&r](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(r.f32());
  };
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    const std::uint64_t out = r.u64();
    const std::uint64_t in = r.u64();
    const bool normalized = r.u8() != 0;
    const bool last = l + 1 == kLayerCount;
    if (in != d || out != (last ? 2u : d) || normalized == last) {
      fail(ErrorCode::corrupt_file, "layer " + std::to_string(l) + " has unexpected shape");
    }
    DenseLayer<T> layer;
    layer.normalized = normalized;
    layer.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    layer.bias.resize(static_cast<Eigen::Index>(out));
    get(layer.weight);
    get(layer.bias);
    if (normalized) {
      for (auto* v : {&layer.gamma, &layer.beta, &layer.running_mean, &layer.running_var}) {
        v->resize(static_cast<Eigen::Index>(out));
        get(*v);
      }
    }
    model.mlp.layers.push_back(std::move(layer));
  }
  model.kernel.alpha_raw = static_cast<T>(r.f32());
  model.kernel.beta_raw = static_cast<T>(r.f32());
  if (!r.at_end()) fail(ErrorCode::corrupt_file, "trailing bytes after checkpoint");
  if (!parameters_finite(model)) fail(ErrorCode::corrupt_file, "checkpoint holds non-finite parameters");
  return model;
}

template <typename T>
void save_checkpoint(const std::string& path, const ModelState<T>& model) {
  write_file(path, encode_checkpoint(model));
}

/// Loads a checkpoint; with `expected_dim`, a different input dimension is a
/// dimension-mismatch error.
template <typename T>
ModelState<T> load_checkpoint(const std::string& path, std::optional<std::size_t> expected_dim = std::nullopt) {
  ModelState<T> model = decode_checkpoint<T>(read_file(path));
  if (expected_dim && *expected_dim != model.input_dim) {
    fail(ErrorCode::dimension_mismatch, "checkpoint expects d=" + std::to_string(model.input_dim) +
                                            ", dataset has d=" + std::to_string(*expected_dim));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Training configuration: flat JSON object keyed by TrainConfig field names.

inline std::string_view balance_mode_name(BalanceMode m) {
  switch (m) {
    case BalanceMode::none: return "none";
    case BalanceMode::l1: return "l1";
    case BalanceMode::l2: return "l2";
  }
  return "none";
}

inline BalanceMode parse_balance_mode(std::string_view s) {
  if (s == "none") return BalanceMode::none;
  if (s == "l1") return BalanceMode::l1;
  if (s == "l2") return BalanceMode::l2;
  fail(ErrorCode::invalid_config, "balance must be none, l1 or l2");
}

inline nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"lambda", c.lambda},
          {"w1", c.w1},
          {"w2", c.w2},
          {"seed", c.seed},
          {"ablate_kr", c.ablate_kr},
          {"ablate_gk", c.ablate_gk},
          {"balance", std::string(balance_mode_name(c.balance.mode))},
          {"mu", c.balance.mu},
          {"mu1", c.balance.mu1},
          {"k", c.balance.k},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"grad_clip", c.grad_clip},
          {"refresh_batchnorm", c.refresh_batchnorm},
          {"deterministic", c.deterministic}};
}

/// Applies the keys present in `j` on top of `base`; unknown keys are errors.
inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  if (!j.is_object()) fail(ErrorCode::invalid_config, "config must be a flat object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "epochs") base.epochs = v.get<std::size_t>();
      else if (key == "batch") base.batch = v.get<std::size_t>();
      else if (key == "lr") base.lr = v.get<double>();
      else if (key == "lambda") base.lambda = v.get<double>();
      else if (key == "w1") base.w1 = v.get<double>();
      else if (key == "w2") base.w2 = v.get<double>();
      else if (key == "seed") base.seed = v.get<std::uint64_t>();
      else if (key == "ablate_kr") base.ablate_kr = v.get<bool>();
      else if (key == "ablate_gk") base.ablate_gk = v.get<bool>();
      else if (key == "balance") base.balance.mode = parse_balance_mode(v.get<std::string>());
      else if (key == "mu") base.balance.mu = v.get<double>();
      else if (key == "mu1") base.balance.mu1 = v.get<double>();
      else if (key == "k") base.balance.k = v.get<double>();
      else if (key == "adam_beta1") base.adam.beta1 = v.get<double>();
      else if (key == "adam_beta2") base.adam.beta2 = v.get<double>();
      else if (key == "adam_eps") base.adam.eps = v.get<double>();
      else if (key == "grad_clip") base.grad_clip = v.get<double>();
      else if (key == "refresh_batchnorm") base.refresh_batchnorm = v.get<bool>();
      else if (key == "deterministic") base.deterministic = v.get<bool>();
      else fail(ErrorCode::invalid_config, "unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_config, std::string("config value has wrong type: ") + e.what());
  }
  validate(base);
  return base;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::invalid_config, std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j, base);
}

inline nlohmann::json history_to_json(const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"mse_vl", e.loss.mse_vl},
                      {"mse_tr", e.loss.mse_tr},
                      {"mse_r", e.loss.mse_r},
                      {"kl", e.loss.kl},
                      {"total", e.loss.total},
                      {"w_mse", e.loss.w_mse},
                      {"w_kl", e.loss.w_kl},
                      {"alpha", e.alpha},
                      {"beta", e.beta},
                      {"seconds", e.seconds}});
  }
  return epochs;
}

}  // namespace kmap
