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

// Exact inner-product scoring, deterministic ranking and ensemble scoring.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poolrank/common.hpp"
#include "poolrank/embed_store.hpp"
#include "poolrank/encoder.hpp"

namespace poolrank {

struct RankingResult {
  std::string query_id;
  std::vector<std::uint64_t> ordered_ids;  // best first
  std::vector<double> scores;              // parallel to ordered_ids
};

namespace detail {
inline double row_dot(std::span<const double> h, std::span<const float> c) {
  double acc = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j) acc += h[j] * static_cast<double>(c[j]);
  return acc;
}
inline void check_dims(std::size_t query_dim, const EmbeddingMatrix& c) {
  if (query_dim != c.dim()) {
    throw DimensionError("query embedding dim " + std::to_string(query_dim) +
                         " != candidate dim " + std::to_string(c.dim()));
  }
}
}  // namespace detail

// s_i = <h_q, h_{c_i}> for every row, ascending-coordinate summation.
inline std::vector<double> score_all(std::span<const double> h_q,
                                     const EmbeddingMatrix& candidates) {
  detail::check_dims(h_q.size(), candidates);
  std::vector<double> s(candidates.count());
  parallel_for(candidates.count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) s[i] = detail::row_dot(h_q, candidates.row(i));
  });
  return s;
}

inline std::vector<double> score_all(const QueryEmbedding& h_q, const EmbeddingMatrix& candidates) {
  return score_all(std::span<const double>(h_q.values), candidates);
}

// Scores for a selection of rows, in selection order.
inline std::vector<double> score_rows(std::span<const double> h_q,
                                      const EmbeddingMatrix& candidates,
                                      std::span<const std::size_t> rows) {
  detail::check_dims(h_q.size(), candidates);
  std::vector<double> s(rows.size());
  parallel_for(rows.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) s[i] = detail::row_dot(h_q, candidates.row(rows[i]));
  });
  return s;
}

// Positions of `scores` ordered by descending score, ascending id on ties.
inline std::vector<std::size_t> rank_order(std::span<const double> scores,
                                           std::span<const std::uint64_t> ids) {
  if (scores.size() != ids.size()) {
    throw DimensionError("rank: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(ids.size()) + " ids");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  return order;
}

inline RankingResult rank(std::span<const double> scores, std::span<const std::uint64_t> ids,
                          std::string query_id = {}) {
  const auto order = rank_order(scores, ids);
  RankingResult r;
  r.query_id = std::move(query_id);
  r.ordered_ids.reserve(order.size());
  r.scores.reserve(order.size());
  for (std::size_t i : order) {
    r.ordered_ids.push_back(ids[i]);
    r.scores.push_back(scores[i]);
  }
  return r;
}

inline double mean_embedding_tolerance(std::span<const double> scores) {
  double scale = 1.0;
  for (double s : scores) scale = std::max(scale, std::abs(s));
  return 1e-9 * scale;
}

// Mean of per-embedding scores. Cross-checked against scoring the mean
// embedding, which must agree by bilinearity.
inline std::vector<double> ensemble_score(const std::vector<QueryEmbedding>& embeddings,
                                          const EmbeddingMatrix& candidates,
                                          std::span<const std::size_t> rows = {}) {
  if (embeddings.empty()) throw DataError("ensemble_score: empty embedding list");
  const std::size_t dim = embeddings.front().values.size();
  for (const auto& e : embeddings) {
    if (e.values.size() != dim) throw DimensionError("ensemble_score: embeddings differ in dim");
  }
  const bool all_rows = rows.empty();
  const std::size_t n = all_rows ? candidates.count() : rows.size();
  std::vector<double> total(n, 0.0);
  std::vector<double> mean(dim, 0.0);
  for (const auto& e : embeddings) {
    const auto s = all_rows ? score_all(e.values, candidates) : score_rows(e.values, candidates, rows);
    for (std::size_t i = 0; i < n; ++i) total[i] += s[i];
    for (std::size_t j = 0; j < dim; ++j) mean[j] += e.values[j];
  }
  const double inv = 1.0 / static_cast<double>(embeddings.size());
  for (double& v : total) v *= inv;
  for (double& v : mean) v *= inv;
  const auto via_mean = all_rows ? score_all(mean, candidates) : score_rows(mean, candidates, rows);
  const double tol = mean_embedding_tolerance(total);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(total[i] - via_mean[i]) > tol) {
      throw NumericError("ensemble_score: per-embedding mean and mean-embedding scores differ at " +
                         std::to_string(i));
    }
  }
  return total;
}

// {"query_id":..., "ranking":[...], "scores":[...]} truncated to top_k.
inline nlohmann::json ranking_to_json(const RankingResult& r, std::size_t top_k = 100) {
  const std::size_t n = std::min(top_k, r.ordered_ids.size());
  nlohmann::json j;
  j["query_id"] = r.query_id;
  j["ranking"] = std::vector<std::uint64_t>(r.ordered_ids.begin(), r.ordered_ids.begin() + static_cast<std::ptrdiff_t>(n));
  j["scores"] = std::vector<double>(r.scores.begin(), r.scores.begin() + static_cast<std::ptrdiff_t>(n));
  return j;
}

inline void write_ranking_jsonl(std::ostream& out, const RankingResult& r, std::size_t top_k = 100) {
  out << ranking_to_json(r, top_k).dump() << '\n';
}

}  // namespace poolrank
