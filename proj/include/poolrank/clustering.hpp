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

// Mini-batch K-means with prefix-dimension assignment and full-dimension
// centroids, plus a plain Lloyd implementation used as a reference.
//
// Assignment distances may be computed on a leading prefix of every row
// (assignment_dim). Centroids reported to callers are always recomputed as
// exact means of the assigned rows in full dimension.

#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poolrank/common.hpp"
#include "poolrank/embed_store.hpp"

namespace poolrank {

template <class S>
concept RowSource = requires(const S& s, std::size_t i) {
  { s.size() } -> std::convertible_to<std::size_t>;
  { s.dim() } -> std::convertible_to<std::size_t>;
  { s.row(i) } -> std::convertible_to<std::span<const float>>;
};

// Rows of a matrix selected by index, in the given order.
class SubsetRows {
 public:
  SubsetRows(const EmbeddingMatrix& m, std::span<const std::size_t> rows)
      : m_(&m), rows_(rows) {}
  std::size_t size() const { return rows_.size(); }
  std::size_t dim() const { return m_->dim(); }
  std::span<const float> row(std::size_t i) const { return m_->row(rows_[i]); }

 private:
  const EmbeddingMatrix* m_;
  std::span<const std::size_t> rows_;
};

// Prefix of any row source.
template <RowSource S>
class PrefixRows {
 public:
  PrefixRows(const S& s, std::size_t prefix) : s_(&s), prefix_(prefix) {}
  std::size_t size() const { return s_->size(); }
  std::size_t dim() const { return prefix_; }
  std::span<const float> row(std::size_t i) const { return s_->row(i).first(prefix_); }

 private:
  const S* s_;
  std::size_t prefix_;
};

struct KMeansConfig {
  std::size_t k = 8;
  std::size_t max_iters = 100;
  std::size_t batch_size = 1024;
  std::optional<std::size_t> assignment_dim;
  std::uint64_t seed = 0;
  double tol = 1e-4;

  friend bool operator==(const KMeansConfig&, const KMeansConfig&) = default;
};

struct CentroidSet {
  std::size_t k = 0;
  std::size_t dim = 0;
  Tensor centroids;  // k x dim, full dimension
  std::vector<std::uint32_t> assignments;
  std::vector<std::size_t> sizes;
  std::size_t assignment_dim = 0;
  std::size_t iterations = 0;
  bool converged = false;
  // Objective after each iteration (Lloyd: after the update step).
  std::vector<double> wcss_history;

  friend bool operator==(const CentroidSet&, const CentroidSet&) = default;
};

namespace detail {

inline double sq_dist(std::span<const float> x, std::span<const double> c) {
  double acc = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = static_cast<double>(x[j]) - c[j];
    acc += d * d;
  }
  return acc;
}

// Nearest centre on the first x.size() coordinates; ties go to the lower index.
inline std::pair<std::uint32_t, double> nearest(std::span<const float> x,
                                                const Tensor& centers) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centers.rows; ++j) {
    const double d = sq_dist(x, centers.row(j).first(x.size()));
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(j);
    }
  }
  return {best, best_d};
}

template <RowSource S>
void copy_row(const S& data, std::size_t i, std::span<double> out) {
  const auto r = data.row(i);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = r[j];
}

// k-means++ seeding on `data` (already restricted to the assignment view).
template <RowSource S>
Tensor kmeanspp(const S& data, std::size_t k, Rng& rng) {
  const std::size_t n = data.size();
  Tensor centers(k, data.dim());
  std::vector<char> chosen(n, 0);
  std::size_t first = rng.below(n);
  copy_row(data, first, centers.row(0));
  chosen[first] = 1;
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(data.row(i), centers.row(0));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick == n) {
        for (std::size_t i = n; i-- > 0;) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // Every remaining point coincides with a centre: pick an unused row.
      std::vector<std::size_t> unused;
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) unused.push_back(i);
      pick = unused.empty() ? rng.below(n) : unused[rng.below(unused.size())];
    }
    copy_row(data, pick, centers.row(c));
    chosen[pick] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(data.row(i), centers.row(c)));
    }
  }
  return centers;
}

template <RowSource S>
double assign_all(const S& data, const Tensor& centers,
                  std::vector<std::uint32_t>& assignments,
                  std::vector<double>* dists = nullptr) {
  const std::size_t n = data.size();
  assignments.resize(n);
  if (dists) dists->resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto [a, d] = nearest(data.row(i), centers);
    assignments[i] = a;
    if (dists) (*dists)[i] = d;
    total += d;
  }
  return total;
}

// Moves points into empty clusters: each empty cluster takes the point that
// is farthest from its current centre (among clusters with > 1 member).
// Centres of repaired clusters are set to the moved point.
template <RowSource S>
void repair_empty(const S& data, Tensor& centers,
                  std::vector<std::uint32_t>& assignments,
                  std::vector<std::size_t>& sizes) {
  const std::size_t n = data.size();
  for (std::size_t j = 0; j < centers.rows; ++j) {
    if (sizes[j] > 0) continue;
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (sizes[assignments[i]] <= 1) continue;
      const double d = sq_dist(data.row(i), centers.row(assignments[i]));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    if (best == n) break;  // cannot happen while k <= n
    --sizes[assignments[best]];
    assignments[best] = static_cast<std::uint32_t>(j);
    sizes[j] = 1;
    copy_row(data, best, centers.row(j).first(data.dim()));
  }
}

template <RowSource S>
Tensor full_means(const S& data, const std::vector<std::uint32_t>& assignments,
                  std::size_t k, std::vector<std::size_t>& sizes) {
  const std::size_t dim = data.dim();
  Tensor sums(k, dim);
  sizes.assign(k, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = data.row(i);
    auto s = sums.row(assignments[i]);
    for (std::size_t j = 0; j < dim; ++j) s[j] += r[j];
    ++sizes[assignments[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (sizes[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(sizes[c]);
    for (double& v : sums.row(c)) v *= inv;
  }
  return sums;
}

template <RowSource S>
void check_fit_args(const S& data, std::size_t k) {
  if (data.size() == 0) throw DataError("cannot cluster an empty candidate set");
  if (k == 0) throw ConfigError("k must be >= 1");
  if (k > data.size()) {
    throw DataError("k exceeds candidate count (k=" + std::to_string(k) +
                    ", count=" + std::to_string(data.size()) + ")");
  }
}

inline std::vector<std::size_t> count_sizes(const std::vector<std::uint32_t>& a,
                                            std::size_t k) {
  std::vector<std::size_t> sizes(k, 0);
  for (auto j : a) ++sizes[j];
  return sizes;
}

}  // namespace detail

// Within-cluster sum of squares over data.dim() coordinates. Centroids may be
// wider than the data (full-dim centroids scored on a prefix view).
template <RowSource S>
double wcss(const S& data, const Tensor& centroids,
            std::span<const std::uint32_t> assignments) {
  if (assignments.size() != data.size()) {
    throw DimensionError("assignments length " + std::to_string(assignments.size()) +
                         " != row count " + std::to_string(data.size()));
  }
  if (centroids.cols < data.dim()) {
    throw DimensionError("centroid dim " + std::to_string(centroids.cols) +
                         " < data dim " + std::to_string(data.dim()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (assignments[i] >= centroids.rows) {
      throw DimensionError("assignment index out of range at row " + std::to_string(i));
    }
    total += detail::sq_dist(data.row(i), centroids.row(assignments[i]).first(data.dim()));
  }
  return total;
}

// Mini-batch K-means. Deterministic in (data, cfg).
template <RowSource S>
CentroidSet kmeans_fit(const S& data, const KMeansConfig& cfg) {
  detail::check_fit_args(data, cfg.k);
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (cfg.tol < 0) throw ConfigError("tol must be >= 0");
  const std::size_t n = data.size();
  const std::size_t dim = data.dim();
  const std::size_t adim = cfg.assignment_dim.value_or(dim);
  if (adim == 0 || adim > dim) {
    throw DimensionError("assignment_dim " + std::to_string(adim) +
                         " not in [1, " + std::to_string(dim) + "]");
  }
  const PrefixRows<S> view(data, adim);
  Rng rng(cfg.seed);

  Tensor centers = detail::kmeanspp(view, cfg.k, rng);
  std::vector<double> counts(cfg.k, 0.0);
  std::vector<std::uint32_t> assignments;
  double best_obj = detail::assign_all(view, centers, assignments);
  Tensor best_centers = centers;

  CentroidSet out;
  out.wcss_history.push_back(best_obj);
  const bool full_batch = cfg.batch_size >= n;
  std::vector<std::size_t> batch(full_batch ? n : cfg.batch_size);
  std::vector<std::uint32_t> batch_assign(batch.size());
  Tensor sums(cfg.k, adim);
  std::vector<std::size_t> batch_counts(cfg.k);
  double prev_obj = best_obj;

  std::size_t it = 0;
  while (it < cfg.max_iters && best_obj > 0.0) {
    ++it;
    if (full_batch) {
      for (std::size_t i = 0; i < n; ++i) batch[i] = i;
    } else {
      for (auto& b : batch) b = rng.below(n);
    }
    // Assign against the pre-update centres, then fold each batch member in
    // with a per-centre step of 1/n_j.
    sums.fill(0.0);
    std::fill(batch_counts.begin(), batch_counts.end(), 0);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto r = view.row(batch[b]);
      const auto a = detail::nearest(r, centers).first;
      batch_assign[b] = a;
      auto s = sums.row(a);
      for (std::size_t j = 0; j < adim; ++j) s[j] += r[j];
      ++batch_counts[a];
    }
    for (std::size_t c = 0; c < cfg.k; ++c) {
      if (batch_counts[c] == 0) continue;
      if (full_batch) counts[c] = 0.0;  // plain Lloyd update
      const double total = counts[c] + static_cast<double>(batch_counts[c]);
      auto ctr = centers.row(c);
      auto s = sums.row(c);
      for (std::size_t j = 0; j < adim; ++j) {
        ctr[j] = (ctr[j] * counts[c] + s[j]) / total;
      }
      counts[c] = total;
    }

    const double obj = detail::assign_all(view, centers, assignments);
    out.wcss_history.push_back(obj);
    if (obj < best_obj) {
      best_obj = obj;
      best_centers = centers;
    }
    const double improvement = prev_obj > 0.0 ? (prev_obj - obj) / prev_obj : 0.0;
    prev_obj = obj;
    if (improvement < cfg.tol) {
      out.converged = true;
      break;
    }
  }

  // Final pass: assign on the prefix view, repair, then full-dim means.
  detail::assign_all(view, best_centers, assignments);
  auto sizes = detail::count_sizes(assignments, cfg.k);
  detail::repair_empty(view, best_centers, assignments, sizes);

  out.k = cfg.k;
  out.dim = dim;
  out.assignment_dim = adim;
  out.iterations = it;
  out.centroids = detail::full_means(data, assignments, cfg.k, out.sizes);
  out.assignments = std::move(assignments);
  return out;
}

// Classic Lloyd iterations in full dimension, until no assignment changes or
// max_iters. wcss_history[t] is the objective after the t-th update step.
template <RowSource S>
CentroidSet lloyd_full(const S& data, std::size_t k, std::uint64_t seed,
                       std::size_t max_iters) {
  detail::check_fit_args(data, k);
  Rng rng(seed);
  Tensor centers = detail::kmeanspp(data, k, rng);
  std::vector<std::uint32_t> assignments;
  detail::assign_all(data, centers, assignments);
  std::vector<std::size_t> sizes = detail::count_sizes(assignments, k);
  detail::repair_empty(data, centers, assignments, sizes);

  CentroidSet out;
  std::size_t it = 0;
  while (it < max_iters) {
    ++it;
    centers = detail::full_means(data, assignments, k, sizes);
    out.wcss_history.push_back(wcss(data, centers, assignments));
    std::vector<std::uint32_t> next;
    detail::assign_all(data, centers, next);
    auto next_sizes = detail::count_sizes(next, k);
    detail::repair_empty(data, centers, next, next_sizes);
    if (next == assignments) {
      out.converged = true;
      break;
    }
    assignments = std::move(next);
  }
  out.k = k;
  out.dim = data.dim();
  out.assignment_dim = data.dim();
  out.iterations = it;
  out.centroids = detail::full_means(data, assignments, k, out.sizes);
  out.assignments = std::move(assignments);
  return out;
}

// Centroids as a store file plus `<store>.assign` (u32 LE per row).
inline void write_centroid_set(const CentroidSet& cs, const std::filesystem::path& path) {
  std::vector<float> v(cs.centroids.data.begin(), cs.centroids.data.end());
  write_store(EmbeddingMatrix(cs.k, cs.dim, std::move(v)), path);
  std::ofstream out(path.string() + ".assign", std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string() + ".assign");
  for (std::uint32_t a : cs.assignments) {
    const char b[4] = {static_cast<char>(a & 0xff), static_cast<char>((a >> 8) & 0xff),
                       static_cast<char>((a >> 16) & 0xff), static_cast<char>(a >> 24)};
    out.write(b, 4);
  }
}

}  // namespace poolrank
