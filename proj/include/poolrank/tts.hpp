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

// Test-time scaling over candidate partitions.
//
//   E(0)  = encode(query | whole pool)
//   round t = 1..depth:
//     split the current pool into min(width, |pool|) random subsets;
//     in each subset keep the top ceil(retention * |subset|) under E(t-1);
//     re-encode the query conditioned on each subset's survivors;
//     E(t) = mean of E(t-1) and the per-subset embeddings;
//     the next pool is the union of survivors.
//   final score of every ORIGINAL pool member = mean over t of <E(t), h_c>.
//
// Encoder calls: 1 + sum over rounds of the effective width.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poolrank/aggregator.hpp"
#include "poolrank/common.hpp"
#include "poolrank/embed_store.hpp"
#include "poolrank/encoder.hpp"
#include "poolrank/metrics.hpp"
#include "poolrank/scorer.hpp"

namespace poolrank {

struct TtsConfig {
  std::size_t width = 0;
  std::size_t depth = 0;
  double retention = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if ((width == 0) != (depth == 0)) {
      throw ConfigError("tts: width and depth must both be zero or both be positive (width=" +
                        std::to_string(width) + ", depth=" + std::to_string(depth) + ")");
    }
    if (!(retention > 0.0 && retention <= 1.0)) {
      throw ConfigError("tts: retention ratio must be in (0, 1]");
    }
  }
};

// ceil(ratio * n), robust to representation error in ratio * n.
inline std::size_t retained_count(double ratio, std::size_t n) {
  const double raw = ratio * static_cast<double>(n);
  auto c = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(c, 1, n);
}

struct TtsRound {
  std::vector<std::size_t> pool;  // store rows, ascending
  Partition partition;            // positions into `pool`
  std::vector<std::vector<std::size_t>> retained;  // store rows per subset
  std::vector<QueryEmbedding> subset_embeddings;
};

struct TtsTrace {
  std::vector<QueryEmbedding> embeddings;  // E(0..depth)
  std::vector<TtsRound> rounds;
  std::size_t encoder_calls = 0;
};

namespace detail {

template <class F>
auto with_round_context(std::size_t round, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const std::exception&) {
    rethrow_with_prefix("tts round " + std::to_string(round) + ": ");
  }
}

}  // namespace detail

struct TtsOutcome {
  RankingResult ranking;
  TtsTrace trace;
};

// `candidates` is the candidate tower output (one row per store row);
// `pool` lists the store rows this query ranks.
inline TtsOutcome tts_rank(const QueryInput& query, std::span<const std::size_t> pool,
                           const EmbeddingMatrix& candidates, ConditionedEncoder& encoder,
                           const TtsConfig& cfg) {
  cfg.validate();
  if (pool.empty()) throw DataError("tts: empty candidate pool for query " + query.query_id);
  std::vector<std::size_t> original(pool.begin(), pool.end());
  std::sort(original.begin(), original.end());

  TtsOutcome out;
  TtsTrace& trace = out.trace;
  trace.embeddings.push_back(detail::with_round_context(0, [&] { return encoder.encode(query, original); }));
  ++trace.encoder_calls;

  std::vector<std::size_t> current = original;
  for (std::size_t t = 1; t <= cfg.depth; ++t) {
    TtsRound round;
    round.pool = current;
    round.partition = random_partition(current.size(), cfg.width, derive_seed(cfg.seed, "tts-round", t));
    const QueryEmbedding& prev = trace.embeddings.back();
    std::vector<double> next = prev.values;
    std::vector<std::size_t> survivors;
    for (std::size_t m = 0; m < round.partition.subsets.size(); ++m) {
      const auto& positions = round.partition.subsets[m];
      std::vector<std::size_t> rows;
      rows.reserve(positions.size());
      for (std::size_t p : positions) rows.push_back(current[p]);
      const auto scores = score_rows(prev.values, candidates, rows);
      std::vector<std::uint64_t> ids(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) ids[i] = candidates.id(rows[i]);
      const auto order = rank_order(scores, ids);
      const std::size_t keep = retained_count(cfg.retention, rows.size());
      std::vector<std::size_t> kept;
      kept.reserve(keep);
      for (std::size_t i = 0; i < keep; ++i) kept.push_back(rows[order[i]]);
      std::sort(kept.begin(), kept.end());

      QueryEmbedding e = detail::with_round_context(t, [&] { return encoder.encode(query, kept); });
      ++trace.encoder_calls;
      if (e.values.size() != next.size()) {
        throw DimensionError("tts round " + std::to_string(t) + ": encoder returned dim " +
                             std::to_string(e.values.size()));
      }
      e.subset_tag = m;
      for (std::size_t j = 0; j < next.size(); ++j) next[j] += e.values[j];
      survivors.insert(survivors.end(), kept.begin(), kept.end());
      round.retained.push_back(std::move(kept));
      round.subset_embeddings.push_back(std::move(e));
    }
    const double inv = 1.0 / static_cast<double>(round.partition.subsets.size() + 1);
    for (double& v : next) v *= inv;
    QueryEmbedding updated;
    updated.values = std::move(next);
    updated.provenance = prev.provenance;
    trace.embeddings.push_back(std::move(updated));
    std::sort(survivors.begin(), survivors.end());
    current = std::move(survivors);
    trace.rounds.push_back(std::move(round));
  }

  const auto scores = ensemble_score(trace.embeddings, candidates, original);
  std::vector<std::uint64_t> ids(original.size());
  for (std::size_t i = 0; i < original.size(); ++i) ids[i] = candidates.id(original[i]);
  out.ranking = rank(scores, ids, query.query_id);
  return out;
}

inline nlohmann::json trace_to_json(const TtsTrace& trace) {
  nlohmann::json j;
  j["encoder_calls"] = trace.encoder_calls;
  j["embeddings"] = nlohmann::json::array();
  for (const auto& e : trace.embeddings) j["embeddings"].push_back(e.values);
  j["rounds"] = nlohmann::json::array();
  for (const auto& r : trace.rounds) {
    nlohmann::json jr;
    jr["pool"] = r.pool;
    jr["partition"] = r.partition.subsets;
    jr["retained"] = r.retained;
    jr["subset_embeddings"] = nlohmann::json::array();
    for (const auto& e : r.subset_embeddings) jr["subset_embeddings"].push_back(e.values);
    j["rounds"].push_back(std::move(jr));
  }
  return j;
}

// ---------------------------------------------------------------------------
// Width/depth sweep

struct SweepCell {
  std::size_t width = 0;
  std::size_t depth = 0;
  double mrr = 0.0;
  double ndcg10 = 0.0;
  std::size_t encoder_calls = 0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  SweepCell best;
};

// Highest MRR; ties go to the smaller width, then the smaller depth.
inline SweepCell select_best_cell(std::span<const SweepCell> cells) {
  if (cells.empty()) throw ConfigError("tts sweep: empty grid");
  SweepCell best = cells.front();
  for (const auto& c : cells.subspan(1)) {
    const bool better = c.mrr > best.mrr ||
                        (c.mrr == best.mrr && (c.width < best.width ||
                                               (c.width == best.width && c.depth < best.depth)));
    if (better) best = c;
  }
  return best;
}

// Grid points: (0, 0) when both lists contain 0, plus every (w, d) with
// w, d >= 1. Mixed zero/non-zero pairs are not valid settings.
inline std::vector<std::pair<std::size_t, std::size_t>> sweep_grid(
    std::span<const std::size_t> widths, std::span<const std::size_t> depths) {
  std::vector<std::pair<std::size_t, std::size_t>> grid;
  for (std::size_t w : widths) {
    for (std::size_t d : depths) {
      if ((w == 0) == (d == 0)) grid.emplace_back(w, d);
    }
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

struct EvalQuery {
  QueryInput input;
  RelevanceJudgment judgment;
  std::vector<std::size_t> pool;  // store rows
};

struct CellEvaluation {
  SweepCell cell;
  std::vector<RankingResult> rankings;
  std::vector<double> mrr_values;
  std::vector<double> ndcg_values;
};

inline CellEvaluation evaluate_cell(std::span<const EvalQuery> queries,
                                    const EmbeddingMatrix& candidates, ConditionedEncoder& encoder,
                                    const TtsConfig& cfg) {
  CellEvaluation ev;
  ev.cell.width = cfg.width;
  ev.cell.depth = cfg.depth;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    TtsConfig qcfg = cfg;
    qcfg.seed = derive_seed(cfg.seed, "tts-query", qi);
    auto outcome = tts_rank(queries[qi].input, queries[qi].pool, candidates, encoder, qcfg);
    ev.cell.encoder_calls += outcome.trace.encoder_calls;
    ev.mrr_values.push_back(mrr(outcome.ranking, queries[qi].judgment));
    ev.ndcg_values.push_back(ndcg_at_k(outcome.ranking, queries[qi].judgment, 10));
    ev.rankings.push_back(std::move(outcome.ranking));
  }
  if (!queries.empty()) {
    ev.cell.mrr = aggregate_metrics(ev.mrr_values).mean;
    ev.cell.ndcg10 = aggregate_metrics(ev.ndcg_values).mean;
  }
  return ev;
}

inline SweepResult tts_sweep(std::span<const EvalQuery> queries, const EmbeddingMatrix& candidates,
                             ConditionedEncoder& encoder, std::span<const std::size_t> widths,
                             std::span<const std::size_t> depths, const TtsConfig& base) {
  const auto grid = sweep_grid(widths, depths);
  if (grid.empty()) throw ConfigError("tts sweep: grid has no valid (width, depth) cell");
  SweepResult result;
  for (auto [w, d] : grid) {
    TtsConfig cfg = base;
    cfg.width = w;
    cfg.depth = d;
    result.cells.push_back(evaluate_cell(queries, candidates, encoder, cfg).cell);
  }
  result.best = select_best_cell(result.cells);
  return result;
}

}  // namespace poolrank
