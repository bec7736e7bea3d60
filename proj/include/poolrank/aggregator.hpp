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

// Candidate-set aggregation: cluster a subset of the store, concatenate the
// centroids into a fixed-width vector and project it through a
// Linear -> BatchNorm -> ReLU -> Linear block into the conditioning vector.
// Also hosts the random partitioning shared by training and test-time
// scaling.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "poolrank/clustering.hpp"
#include "poolrank/common.hpp"
#include "poolrank/embed_store.hpp"

namespace poolrank {

// ---------------------------------------------------------------------------
// Partitions

struct Partition {
  std::vector<std::vector<std::size_t>> subsets;
  std::size_t universe_size = 0;

  friend bool operator==(const Partition&, const Partition&) = default;
};

// Shuffle 0..n-1 with a seeded RNG, deal round-robin into min(m, n) subsets.
inline Partition random_partition(std::size_t n, std::size_t m, std::uint64_t seed) {
  if (n == 0) throw ConfigError("random_partition: n must be >= 1");
  if (m == 0) throw ConfigError("random_partition: m must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t parts = std::min(m, n);
  Partition p;
  p.universe_size = n;
  p.subsets.resize(parts);
  for (auto& s : p.subsets) s.reserve(n / parts + 1);
  for (std::size_t i = 0; i < n; ++i) p.subsets[i % parts].push_back(order[i]);
  return p;
}

// True iff subsets are disjoint, non-empty, and cover 0..universe_size-1.
inline bool is_valid_partition(const Partition& p) {
  std::vector<char> seen(p.universe_size, 0);
  std::size_t total = 0;
  for (const auto& s : p.subsets) {
    if (s.empty() && p.universe_size >= p.subsets.size()) return false;
    for (std::size_t i : s) {
      if (i >= p.universe_size || seen[i]) return false;
      seen[i] = 1;
      ++total;
    }
  }
  return total == p.universe_size;
}

// ---------------------------------------------------------------------------
// Aggregation

struct RawAggregate {
  std::vector<double> values;  // k * dim, zero-padded past k_used * dim
  std::size_t k_used = 0;
};

// Seed for clustering a subset: depends only on the set of rows.
inline std::uint64_t subset_seed(std::uint64_t global_seed,
                                 std::span<const std::size_t> sorted_rows) {
  std::uint64_t s = derive_seed(global_seed, "aggregate");
  for (std::size_t r : sorted_rows) s = hash_combine(s, r);
  return s;
}

// Cluster the subset (store row indices), order centroids by descending size
// then lexicographically, concatenate and zero-pad to kcfg.k * dim.
inline RawAggregate aggregate(std::span<const std::size_t> subset,
                              const EmbeddingMatrix& store, const KMeansConfig& kcfg) {
  if (subset.empty()) throw DataError("aggregate: empty subset");
  if (kcfg.k == 0) throw ConfigError("aggregate: k must be >= 1");
  std::vector<std::size_t> rows(subset.begin(), subset.end());
  std::sort(rows.begin(), rows.end());
  for (std::size_t r : rows) {
    if (r >= store.count()) throw DataError("aggregate: row " + std::to_string(r) + " out of range");
  }
  KMeansConfig cfg = kcfg;
  cfg.k = std::min(kcfg.k, rows.size());
  cfg.seed = subset_seed(kcfg.seed, rows);
  if (cfg.assignment_dim && *cfg.assignment_dim > store.dim()) cfg.assignment_dim = store.dim();
  const SubsetRows data(store, rows);
  const CentroidSet cs = kmeans_fit(data, cfg);

  std::vector<std::size_t> order(cs.k);
  for (std::size_t i = 0; i < cs.k; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (cs.sizes[a] != cs.sizes[b]) return cs.sizes[a] > cs.sizes[b];
    const auto ra = cs.centroids.row(a);
    const auto rb = cs.centroids.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });

  RawAggregate out;
  out.k_used = cs.k;
  out.values.assign(kcfg.k * store.dim(), 0.0);
  for (std::size_t slot = 0; slot < cs.k; ++slot) {
    const auto c = cs.centroids.row(order[slot]);
    std::copy(c.begin(), c.end(), out.values.begin() + static_cast<std::ptrdiff_t>(slot * store.dim()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Projector

enum class Mode { kTrain, kEval };

struct ProjectorParams {
  std::size_t in_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t out_dim = 0;
  Tensor W1;  // hidden x in
  Tensor b1;  // hidden
  Tensor norm_gain;
  Tensor norm_bias;
  Tensor running_mean;
  Tensor running_var;
  Tensor W2;  // out x hidden
  Tensor b2;  // out
  double momentum = 0.1;
  double eps = 1e-5;

  // Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit gain, (0, 1) stats.
  static ProjectorParams init(std::size_t in_dim, std::size_t hidden_dim,
                              std::size_t out_dim, std::uint64_t seed) {
    ProjectorParams p;
    p.in_dim = in_dim;
    p.hidden_dim = hidden_dim;
    p.out_dim = out_dim;
    Rng rng(seed);
    auto fill = [&rng](Tensor& t, double bound) {
      for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * bound;
    };
    p.W1 = Tensor(hidden_dim, in_dim);
    fill(p.W1, 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, in_dim))));
    p.b1 = Tensor::vector(hidden_dim);
    p.norm_gain = Tensor::vector(hidden_dim, 1.0);
    p.norm_bias = Tensor::vector(hidden_dim);
    p.running_mean = Tensor::vector(hidden_dim);
    p.running_var = Tensor::vector(hidden_dim, 1.0);
    p.W2 = Tensor(out_dim, hidden_dim);
    fill(p.W2, 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, hidden_dim))));
    p.b2 = Tensor::vector(out_dim);
    return p;
  }

  void validate() const {
    auto need = [](const Tensor& t, std::size_t r, std::size_t c, const char* name) {
      if (t.rows != r || t.cols != c) {
        throw DimensionError(std::string("projector ") + name + " has shape " +
                             std::to_string(t.rows) + "x" + std::to_string(t.cols));
      }
    };
    need(W1, hidden_dim, in_dim, "W1");
    need(b1, hidden_dim, 1, "b1");
    need(norm_gain, hidden_dim, 1, "norm_gain");
    need(norm_bias, hidden_dim, 1, "norm_bias");
    need(running_mean, hidden_dim, 1, "running_mean");
    need(running_var, hidden_dim, 1, "running_var");
    need(W2, out_dim, hidden_dim, "W2");
    need(b2, out_dim, 1, "b2");
    for (double v : running_var.data) {
      if (!(v > 0.0)) throw NumericError("projector running_var must be positive");
    }
    if (!(momentum > 0.0 && momentum <= 1.0)) throw ConfigError("momentum must be in (0, 1]");
  }

  friend bool operator==(const ProjectorParams&, const ProjectorParams&) = default;
};

// Intermediate values of one projector forward pass over a batch, kept for
// backpropagation. Rows are batch items.
struct ProjectorForward {
  Tensor pre_norm;    // W1 g + b1
  Tensor normalized;  // (h - mean) / sqrt(var + eps)
  Tensor pre_relu;    // gain * normalized + bias
  Tensor activated;   // relu
  Tensor out;         // W2 a + b2
  std::vector<double> mean, var;  // statistics actually used
  bool batch_stats = false;
};

// Batched forward. Train mode with >= 2 items normalizes with batch
// statistics; otherwise running statistics. Never mutates params.
inline ProjectorForward project_forward(const std::vector<std::vector<double>>& gs,
                                        const ProjectorParams& p, Mode mode) {
  const std::size_t b = gs.size();
  const std::size_t hdim = p.hidden_dim;
  for (const auto& g : gs) {
    if (g.size() != p.in_dim) {
      throw DimensionError("projector input length " + std::to_string(g.size()) +
                           " != in_dim " + std::to_string(p.in_dim));
    }
  }
  ProjectorForward f;
  f.pre_norm = Tensor(b, hdim);
  for (std::size_t i = 0; i < b; ++i) {
    auto h = f.pre_norm.row(i);
    matvec(p.W1, gs[i], h);
    for (std::size_t j = 0; j < hdim; ++j) h[j] += p.b1[j];
  }
  f.batch_stats = mode == Mode::kTrain && b >= 2;
  f.mean.assign(hdim, 0.0);
  f.var.assign(hdim, 0.0);
  if (f.batch_stats) {
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < hdim; ++j) f.mean[j] += f.pre_norm(i, j);
    for (double& m : f.mean) m /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < hdim; ++j) {
        const double d = f.pre_norm(i, j) - f.mean[j];
        f.var[j] += d * d;
      }
    for (double& v : f.var) v /= static_cast<double>(b);
  } else {
    f.mean = p.running_mean.data;
    f.var = p.running_var.data;
  }
  f.normalized = Tensor(b, hdim);
  f.pre_relu = Tensor(b, hdim);
  f.activated = Tensor(b, hdim);
  f.out = Tensor(b, p.out_dim);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < hdim; ++j) {
      const double n = (f.pre_norm(i, j) - f.mean[j]) / std::sqrt(f.var[j] + p.eps);
      f.normalized(i, j) = n;
      const double y = p.norm_gain[j] * n + p.norm_bias[j];
      f.pre_relu(i, j) = y;
      f.activated(i, j) = y > 0.0 ? y : 0.0;
    }
    auto o = f.out.row(i);
    matvec(p.W2, f.activated.row(i), o);
    for (std::size_t j = 0; j < p.out_dim; ++j) o[j] += p.b2[j];
  }
  return f;
}

// Folds the batch statistics of a train-mode forward into the running stats.
inline void update_running_stats(ProjectorParams& p, const ProjectorForward& f,
                                 std::size_t batch) {
  if (!f.batch_stats) return;
  const double unbias = static_cast<double>(batch) / static_cast<double>(batch - 1);
  for (std::size_t j = 0; j < p.hidden_dim; ++j) {
    p.running_mean[j] = (1.0 - p.momentum) * p.running_mean[j] + p.momentum * f.mean[j];
    p.running_var[j] = (1.0 - p.momentum) * p.running_var[j] + p.momentum * f.var[j] * unbias;
  }
}

struct ConditioningVector {
  std::vector<double> values;
  std::vector<std::size_t> source_subset;  // sorted store rows
  std::size_t k_used = 0;
};

// Single-sample projection. A lone sample in train mode has no batch
// statistics, so it is normalized with the running statistics.
inline ConditioningVector project(std::span<const double> g, const ProjectorParams& params,
                                  Mode mode = Mode::kEval) {
  const auto f = project_forward({std::vector<double>(g.begin(), g.end())}, params, mode);
  ConditioningVector cv;
  cv.values.assign(f.out.data.begin(), f.out.data.end());
  if (!all_finite(cv.values)) throw NumericError("non-finite conditioning vector");
  return cv;
}

inline ConditioningVector build_conditioning(std::span<const std::size_t> subset,
                                             const EmbeddingMatrix& store,
                                             const KMeansConfig& kcfg,
                                             const ProjectorParams& params,
                                             Mode mode = Mode::kEval) {
  const RawAggregate g = aggregate(subset, store, kcfg);
  ConditioningVector cv = project(g.values, params, mode);
  cv.source_subset.assign(subset.begin(), subset.end());
  std::sort(cv.source_subset.begin(), cv.source_subset.end());
  cv.k_used = g.k_used;
  return cv;
}

}  // namespace poolrank
