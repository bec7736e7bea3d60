// Copyright 2026 The poolrank Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Shared vocabulary: error hierarchy, seeded randomness, hashing, dense
// tensors and a tiny row-range parallel_for.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace poolrank {

// ---------------------------------------------------------------------------
// Errors. Each family maps onto one CLI exit code (see exit_code_for).

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class RemoteError : public Error {
 public:
  using Error::Error;
};

class RemoteConnectionError : public RemoteError {
 public:
  using RemoteError::RemoteError;
};

class RemoteTimeoutError : public RemoteError {
 public:
  using RemoteError::RemoteError;
};

class MalformedResponseError : public RemoteError {
 public:
  using RemoteError::RemoteError;
};

class RemoteDimensionError : public RemoteError {
 public:
  using RemoteError::RemoteError;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitRemote = 5,
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const RemoteError*>(&e)) return kExitRemote;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  return kExitData;
}

// Re-throws the in-flight exception with `prefix` prepended to its message,
// keeping its family (and therefore its exit code). Call inside a catch.
[[noreturn]] inline void rethrow_with_prefix(const std::string& prefix) {
  try {
    throw;
  } catch (const RemoteConnectionError& e) {
    throw RemoteConnectionError(prefix + e.what());
  } catch (const RemoteTimeoutError& e) {
    throw RemoteTimeoutError(prefix + e.what());
  } catch (const MalformedResponseError& e) {
    throw MalformedResponseError(prefix + e.what());
  } catch (const RemoteDimensionError& e) {
    throw RemoteDimensionError(prefix + e.what());
  } catch (const RemoteError& e) {
    throw RemoteError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(prefix + e.what());
  } catch (const std::exception& e) {
    throw DataError(prefix + e.what());
  }
}

// ---------------------------------------------------------------------------
// Hashing.

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

// FNV-1a, 64-bit.
inline constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                       std::uint64_t basis = kFnvOffsetBasis) {
  std::uint64_t h = basis;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= kFnvPrime;
  }
  return h;
}

// splitmix64 finalizer; used to fold values into seeds.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t seed,
                                            std::uint64_t value) {
  return mix64(seed ^ mix64(value));
}

// Named sub-stream of a root seed: derive_seed(root, "kmeans").
inline constexpr std::uint64_t derive_seed(std::uint64_t root,
                                           std::string_view stream) {
  return hash_combine(root, fnv1a64(stream));
}

template <class... Ts>
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                                    Ts... values) {
  std::uint64_t s = derive_seed(root, stream);
  ((s = hash_combine(s, static_cast<std::uint64_t>(values))), ...);
  return s;
}

// ---------------------------------------------------------------------------
// Randomness. mt19937_64 is fully specified by the standard; the helpers
// below avoid the implementation-defined std distributions so generated
// fixtures are identical across standard libraries.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n); n > 0. Rejection keeps it unbiased.
  std::size_t below(std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
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
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Dense row-major double tensor (matrix or vector with cols == 1).

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Tensor vector(std::size_t n, double fill = 0.0) {
    return Tensor(n, 1, fill);
  }
  static Tensor identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  bool empty() const { return data.empty(); }
  std::size_t size() const { return data.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
  bool same_shape(const Tensor& o) const {
    return rows == o.rows && cols == o.cols;
  }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// y = A x (+ y when accumulate). Summation in ascending column order.
inline void matvec(const Tensor& a, std::span<const double> x,
                   std::span<double> y, bool accumulate = false) {
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* ar = a.data.data() + r * a.cols;
    double acc = accumulate ? y[r] : 0.0;
    for (std::size_t c = 0; c < a.cols; ++c) acc += ar[c] * x[c];
    y[r] = acc;
  }
}

// y = A^T x (+ y when accumulate).
inline void matvec_transposed(const Tensor& a, std::span<const double> x,
                              std::span<double> y, bool accumulate = false) {
  if (!accumulate) std::fill(y.begin(), y.end(), 0.0);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* ar = a.data.data() + r * a.cols;
    const double xr = x[r];
    for (std::size_t c = 0; c < a.cols; ++c) y[c] += ar[c] * xr;
  }
}

// A += u v^T.
inline void add_outer(Tensor& a, std::span<const double> u,
                      std::span<const double> v) {
  for (std::size_t r = 0; r < a.rows; ++r) {
    double* ar = a.data.data() + r * a.cols;
    const double ur = u[r];
    if (ur == 0.0) continue;
    for (std::size_t c = 0; c < a.cols; ++c) ar[c] += ur * v[c];
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Parallelism. LRANKER_THREADS caps the worker count.

inline std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LRANKER_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
  }
  return n;
}

// Calls fn(begin, end) over disjoint contiguous ranges of [0, n).
inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& fn,
                         std::size_t min_chunk = 4096) {
  const std::size_t workers =
      std::min(worker_count(), std::max<std::size_t>(1, n / min_chunk));
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace poolrank
