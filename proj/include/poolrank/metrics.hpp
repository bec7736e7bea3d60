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

// MRR and NDCG@K. Metrics live in [0, 1]; reports scale for display only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "poolrank/common.hpp"
#include "poolrank/scorer.hpp"

namespace poolrank {

struct RelevanceJudgment {
  std::string query_id;
  std::set<std::uint64_t> positive_ids;
  std::map<std::uint64_t, double> graded;  // empty => binary gains

  double gain(std::uint64_t id) const {
    if (!graded.empty()) {
      auto it = graded.find(id);
      return it == graded.end() ? 0.0 : it->second;
    }
    return positive_ids.count(id) ? 1.0 : 0.0;
  }
};

using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& metrics_warning_sink() {
  static WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}

// 1 / (1-indexed rank of the first positive); 0 with a warning if absent.
inline double mrr(std::span<const std::uint64_t> ranking, const RelevanceJudgment& j) {
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (j.positive_ids.count(ranking[i])) return 1.0 / static_cast<double>(i + 1);
  }
  metrics_warning_sink()("no positive in ranking for query " + j.query_id);
  return 0.0;
}

inline double mrr(const RankingResult& r, const RelevanceJudgment& j) { return mrr(r.ordered_ids, j); }

// Linear gains, log2(i + 1) discount for 1-indexed position i.
inline double ndcg_at_k(std::span<const std::uint64_t> ranking, const RelevanceJudgment& j,
                        std::size_t k) {
  if (k == 0) throw ConfigError("ndcg_at_k: K must be >= 1");
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
    dcg += j.gain(ranking[i]) / std::log2(static_cast<double>(i) + 2.0);
  }
  std::vector<double> ideal;
  if (!j.graded.empty()) {
    for (const auto& [id, g] : j.graded) ideal.push_back(g);
  } else {
    ideal.assign(j.positive_ids.size(), 1.0);
  }
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) {
    idcg += ideal[i] / std::log2(static_cast<double>(i) + 2.0);
  }
  if (idcg <= 0.0) {
    metrics_warning_sink()("IDCG is zero for query " + j.query_id);
    return 0.0;
  }
  return dcg / idcg;
}

inline double ndcg_at_k(const RankingResult& r, const RelevanceJudgment& j, std::size_t k) {
  return ndcg_at_k(r.ordered_ids, j, k);
}

struct MetricSummary {
  double mean = 0.0;
  std::size_t count = 0;
  double se = 0.0;  // sample sd / sqrt(n); 0 for n == 1
};

inline MetricSummary aggregate_metrics(std::span<const double> values) {
  if (values.empty()) throw DataError("aggregate_metrics: no values");
  MetricSummary s;
  s.count = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.count);
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.se = std::sqrt(ss / static_cast<double>(s.count - 1)) / std::sqrt(static_cast<double>(s.count));
  }
  return s;
}

// Expected MRR of a uniformly random ranking of n items with one positive.
inline double random_baseline_mrr(std::size_t n) {
  double h = 0.0;
  for (std::size_t i = 1; i <= n; ++i) h += 1.0 / static_cast<double>(i);
  return h / static_cast<double>(n);
}

}  // namespace poolrank
