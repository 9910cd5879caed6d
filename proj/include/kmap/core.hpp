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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace kmap {

enum class ErrorCode {
  invalid_dimension,
  invalid_input,
  batch_too_small,
  invalid_bandwidth,
  degenerate_data,
  invalid_density,
  no_valid_bandwidth,
  empty_neighborhood,
  split_configuration,
  degenerate_batch,
  too_few_points,
  diverged_training,
  invalid_count,
  mape_undefined,
  invalid_n,
  invalid_config,
  bad_magic,
  truncated_file,
  nan_payload,
  duplicate_id,
  version_mismatch,
  dimension_mismatch,
  corrupt_file,
  io_error,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_dimension: return "invalid_dimension";
    case ErrorCode::invalid_input: return "invalid_input";
    case ErrorCode::batch_too_small: return "batch_too_small";
    case ErrorCode::invalid_bandwidth: return "invalid_bandwidth";
    case ErrorCode::degenerate_data: return "degenerate_data";
    case ErrorCode::invalid_density: return "invalid_density";
    case ErrorCode::no_valid_bandwidth: return "no_valid_bandwidth";
    case ErrorCode::empty_neighborhood: return "empty_neighborhood";
    case ErrorCode::split_configuration: return "split_configuration";
    case ErrorCode::degenerate_batch: return "degenerate_batch";
    case ErrorCode::too_few_points: return "too_few_points";
    case ErrorCode::diverged_training: return "diverged_training";
    case ErrorCode::invalid_count: return "invalid_count";
    case ErrorCode::mape_undefined: return "mape_undefined";
    case ErrorCode::invalid_n: return "invalid_n";
    case ErrorCode::invalid_config: return "invalid_config";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::truncated_file: return "truncated_file";
    case ErrorCode::nan_payload: return "nan_payload";
    case ErrorCode::duplicate_id: return "duplicate_id";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::corrupt_file: return "corrupt_file";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

// Single exception type for every module; the code is what callers branch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using MatrixXf = Matrix<float>;
using Points2 = Matrix<double>;  // N x 2

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline double sq_dist(Point2 a, Point2 b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

// Platform-stable random helpers on top of mt19937_64 (whose output sequence is
// fixed by the standard, unlike the <random> distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound), rejection sampled.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % bound;
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::iter_swap(first + (i - 1), first + below(i));
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes two values into a seed for derived streams (e.g. per-epoch splits).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Process-wide worker count; 1 forces serial execution.
inline unsigned& thread_count() {
  static unsigned count = std::max(1u, std::thread::hardware_concurrency());
  return count;
}

// Runs body(i) for i in [begin, end). Each index is processed exactly once and
// callers only write to per-index slots, so results do not depend on the schedule.
template <typename Body>
void parallel_for(std::size_t begin, std::size_t end, Body&& body) {
  const std::size_t n = end > begin ? end - begin : 0;
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(thread_count(), n / 16 + 1));
  if (workers <= 1) {
    for (std::size_t i = begin; i < end; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body, &err = errors[w]] {
      try {
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace kmap
