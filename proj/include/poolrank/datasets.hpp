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

// Dataset files, synthetic generators and TSV ingestion.
//
// A dataset is JSONL, one query per line:
//   {"query_id": "q7", "features": [...] | "text": "...",
//    "positive_id": 12, "negative_ids": [3, 99], "pool_ids": [...]}
// Candidate ids are numbers for numeric stores and strings otherwise.
// "pool_ids" is optional and restricts the query's candidate universe;
// without it the query ranks the whole store.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "poolrank/common.hpp"
#include "poolrank/embed_store.hpp"
#include "poolrank/encoder.hpp"
#include "poolrank/metrics.hpp"
#include "poolrank/trainer.hpp"
#include "poolrank/tts.hpp"

namespace poolrank {

struct DatasetRecord {
  std::string query_id;
  std::optional<std::string> text;
  std::optional<std::vector<double>> features;
  std::string positive_id;
  std::vector<std::string> negative_ids;
  std::vector<std::string> pool_ids;

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

namespace detail {

inline nlohmann::json id_to_json(const std::string& id) {
  if (auto v = parse_u64(id)) return *v;
  return id;
}

inline std::string id_from_json(const nlohmann::json& j, const std::string& where) {
  if (j.is_number_unsigned() || j.is_number_integer()) {
    if (j.is_number_integer() && j.get<std::int64_t>() < 0) throw DataError(where + ": negative id");
    return std::to_string(j.get<std::uint64_t>());
  }
  if (j.is_string()) return j.get<std::string>();
  throw DataError(where + ": id must be a number or string");
}

}  // namespace detail

inline nlohmann::json record_to_json(const DatasetRecord& r) {
  nlohmann::json j;
  j["query_id"] = r.query_id;
  if (r.text) j["text"] = *r.text;
  if (r.features) j["features"] = *r.features;
  j["positive_id"] = detail::id_to_json(r.positive_id);
  if (!r.negative_ids.empty()) {
    j["negative_ids"] = nlohmann::json::array();
    for (const auto& id : r.negative_ids) j["negative_ids"].push_back(detail::id_to_json(id));
  }
  if (!r.pool_ids.empty()) {
    j["pool_ids"] = nlohmann::json::array();
    for (const auto& id : r.pool_ids) j["pool_ids"].push_back(detail::id_to_json(id));
  }
  return j;
}

inline DatasetRecord record_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw DataError(where + ": record must be an object");
  DatasetRecord r;
  if (!j.contains("query_id")) throw DataError(where + ": missing query_id");
  r.query_id = detail::id_from_json(j.at("query_id"), where);
  if (!j.contains("positive_id")) throw DataError(where + ": missing positive_id");
  r.positive_id = detail::id_from_json(j.at("positive_id"), where);
  if (j.contains("text")) {
    if (!j.at("text").is_string()) throw DataError(where + ": text must be a string");
    r.text = j.at("text").get<std::string>();
  }
  if (j.contains("features")) {
    const auto& f = j.at("features");
    if (!f.is_array()) throw DataError(where + ": features must be an array");
    std::vector<double> v;
    for (const auto& x : f) {
      if (!x.is_number()) throw DataError(where + ": features must be numbers");
      v.push_back(x.get<double>());
    }
    if (!all_finite(v)) throw DataError(where + ": non-finite feature value");
    r.features = std::move(v);
  }
  for (const char* key : {"negative_ids", "pool_ids"}) {
    if (!j.contains(key)) continue;
    const auto& a = j.at(key);
    if (!a.is_array()) throw DataError(where + ": " + key + " must be an array");
    auto& dst = std::string(key) == "negative_ids" ? r.negative_ids : r.pool_ids;
    for (const auto& x : a) dst.push_back(detail::id_from_json(x, where));
  }
  return r;
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

inline std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read dataset " + path.string());
  std::vector<DatasetRecord> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": invalid JSON: " + e.what());
    }
    DatasetRecord r = record_from_json(j, where);
    if (!seen.insert(r.query_id).second) throw DataError(where + ": duplicate query_id " + r.query_id);
    out.push_back(std::move(r));
  }
  return out;
}

// Checks the text/features rule: exactly one of them, or text in remote mode.
inline void validate_records(const std::vector<DatasetRecord>& records, bool remote) {
  for (const auto& r : records) {
    if (remote) {
      if (!r.text) throw DataError("query " + r.query_id + ": remote mode requires text");
    } else if (r.text.has_value() == r.features.has_value()) {
      throw DataError("query " + r.query_id + ": exactly one of text/features must be present");
    }
  }
}

// Applies the aggregation rule to records without negatives: every other
// query's positive, in dataset order.
inline void fill_missing_negatives(std::vector<DatasetRecord>& records) {
  for (auto& r : records) {
    if (!r.negative_ids.empty()) continue;
    std::unordered_set<std::string> seen{r.positive_id};
    for (const auto& o : records) {
      if (seen.insert(o.positive_id).second) r.negative_ids.push_back(o.positive_id);
    }
  }
}

// ---------------------------------------------------------------------------
// Candidate id <-> store row

class IdResolver {
 public:
  IdResolver() = default;

  // Numeric ids come from the matrix; a textual `.ids` sidecar (if any)
  // supplies names for a store whose ids did not parse as numbers.
  static IdResolver for_store(const EmbeddingMatrix& store,
                              const std::optional<std::filesystem::path>& store_path = std::nullopt) {
    IdResolver r;
    if (store_path) {
      const auto sidecar = ids_sidecar_path(*store_path);
      if (!store.has_custom_ids() && std::filesystem::exists(sidecar)) {
        auto names = read_id_map(sidecar);
        if (names.size() == store.count()) {
          const bool numeric = std::all_of(names.begin(), names.end(),
                                           [](const std::string& s) { return parse_u64(s).has_value(); });
          if (!numeric) return from_names(std::move(names));
        }
      }
    }
    std::vector<std::string> names(store.count());
    for (std::size_t i = 0; i < store.count(); ++i) names[i] = std::to_string(store.id(i));
    return from_names(std::move(names));
  }

  static IdResolver from_names(std::vector<std::string> names) {
    IdResolver r;
    r.names_ = std::move(names);
    for (std::size_t i = 0; i < r.names_.size(); ++i) {
      if (!r.rows_.emplace(r.names_[i], i).second) throw DataError("duplicate candidate id: " + r.names_[i]);
    }
    r.textual_ = !std::all_of(r.names_.begin(), r.names_.end(),
                              [](const std::string& s) { return parse_u64(s).has_value(); });
    return r;
  }

  std::size_t row(const std::string& id) const {
    auto it = rows_.find(id);
    if (it == rows_.end()) throw DataError("unknown candidate id: " + id);
    return it->second;
  }
  const std::string& name(std::size_t row) const { return names_.at(row); }
  bool textual() const { return textual_; }
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> rows_;
  bool textual_ = false;
};

// Candidate ids in a ranking rendered as JSON (numbers, or names for
// textual stores). `ids` are matrix ids; matrix row i has id store.id(i).
inline nlohmann::json ranking_record(const RankingResult& r, const EmbeddingMatrix& store,
                                     const IdResolver& names, std::size_t top_k) {
  nlohmann::json j = ranking_to_json(r, top_k);
  if (names.textual()) {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& id : j["ranking"]) ids.push_back(names.name(*store.row_of(id.get<std::uint64_t>())));
    j["ranking"] = std::move(ids);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Conversion to module inputs

inline std::vector<double> record_features(const DatasetRecord& r, std::size_t base_dim) {
  if (r.features) {
    if (r.features->size() != base_dim) {
      throw DimensionError("query " + r.query_id + ": features length " + std::to_string(r.features->size()) +
                           " != " + std::to_string(base_dim));
    }
    return *r.features;
  }
  if (r.text) return featurize_text(*r.text, base_dim).values;
  throw DataError("query " + r.query_id + " has neither text nor features");
}

// Feature width implied by the records (explicit features), else `fallback`.
inline std::size_t infer_base_dim(const std::vector<DatasetRecord>& records, std::size_t fallback) {
  for (const auto& r : records) {
    if (r.features) return r.features->size();
  }
  return fallback;
}

inline std::vector<std::size_t> resolve_all(const std::vector<std::string>& ids, const IdResolver& ids_map) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) rows.push_back(ids_map.row(id));
  return rows;
}

inline std::vector<QueryInstance> to_instances(const std::vector<DatasetRecord>& records,
                                               const IdResolver& ids, std::size_t base_dim) {
  std::vector<QueryInstance> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    QueryInstance q;
    q.query_id = r.query_id;
    q.features = record_features(r, base_dim);
    q.positive = ids.row(r.positive_id);
    q.negatives = resolve_all(r.negative_ids, ids);
    q.negatives.erase(std::remove(q.negatives.begin(), q.negatives.end(), q.positive), q.negatives.end());
    q.pool = resolve_all(r.pool_ids, ids);
    std::sort(q.pool.begin(), q.pool.end());
    out.push_back(std::move(q));
  }
  return out;
}

// Features are left empty in remote mode; the service reads the text.
inline std::vector<EvalQuery> to_eval_queries(const std::vector<DatasetRecord>& records,
                                              const EmbeddingMatrix& store, const IdResolver& ids,
                                              std::size_t base_dim, bool remote) {
  std::vector<EvalQuery> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    EvalQuery q;
    q.input.query_id = r.query_id;
    if (r.text) q.input.text = *r.text;
    if (!remote) q.input.features = record_features(r, base_dim);
    const std::size_t pos = ids.row(r.positive_id);
    q.judgment.query_id = r.query_id;
    q.judgment.positive_ids.insert(store.id(pos));
    if (r.pool_ids.empty()) {
      q.pool.resize(store.count());
      for (std::size_t i = 0; i < q.pool.size(); ++i) q.pool[i] = i;
    } else {
      q.pool = resolve_all(r.pool_ids, ids);
      std::sort(q.pool.begin(), q.pool.end());
      if (!std::binary_search(q.pool.begin(), q.pool.end(), pos)) {
        throw DataError("query " + r.query_id + ": positive " + r.positive_id + " not in its pool");
      }
    }
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct DatasetSplit {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> valid;
  std::vector<DatasetRecord> test;
};

// Seeded shuffle, then floor(0.8 n) / floor(0.1 n) / remainder.
inline DatasetSplit split_dataset(const std::vector<DatasetRecord>& records, std::uint64_t seed) {
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.query_id).second) throw DataError("duplicate query_id " + r.query_id);
  }
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);
  const std::size_t n = records.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_valid = n / 10;
  DatasetSplit s;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? s.train : (i < n_train + n_valid ? s.valid : s.test);
    dst.push_back(records[order[i]]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic generators

struct GeneratedData {
  EmbeddingMatrix store;
  std::vector<DatasetRecord> records;
  Tensor mixing;  // pool-dependent rule matrix R (empty for planted-linear)
};

namespace detail {

inline std::vector<double> unit_gaussian(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

inline EmbeddingMatrix unit_sphere_store(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> values;
  values.reserve(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (double x : unit_gaussian(rng, dim)) values.push_back(static_cast<float>(x));
  }
  return EmbeddingMatrix(n, dim, std::move(values));
}

// `count` distinct rows of [0, n) other than `exclude`, in sampled order.
inline std::vector<std::size_t> sample_excluding(Rng& rng, std::size_t n, std::size_t exclude,
                                                 std::size_t count) {
  std::vector<std::size_t> pool;
  pool.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (i != exclude) pool.push_back(i);
  }
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(count);
  return pool;
}

inline std::vector<std::string> row_names(const std::vector<std::size_t>& rows) {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(std::to_string(r));
  return out;
}

}  // namespace detail

struct PlantedLinearOptions {
  std::size_t n_candidates = 1000;
  std::size_t n_queries = 250;
  std::size_t dim = 32;
  // Query noise is N(0, noise^2 / dim) per coordinate, so its expected norm
  // is about `noise` against a unit-norm signal.
  double noise = 0.3;
  std::size_t negatives = 31;
  std::uint64_t seed = 0;
};

// Candidates uniform on the unit sphere; a query's features are its
// positive's embedding plus Gaussian noise.
inline GeneratedData gen_planted_linear(const PlantedLinearOptions& o) {
  if (o.n_candidates < 2) throw ConfigError("planted-linear: n_candidates must be >= 2");
  if (o.dim == 0) throw ConfigError("planted-linear: dim must be >= 1");
  if (!(o.noise >= 0.0)) throw ConfigError("planted-linear: noise must be >= 0");
  GeneratedData g;
  g.store = detail::unit_sphere_store(o.n_candidates, o.dim, derive_seed(o.seed, "gen-candidates"));
  Rng rng(derive_seed(o.seed, "gen-queries"));
  const double sd = o.noise / std::sqrt(static_cast<double>(o.dim));
  for (std::size_t q = 0; q < o.n_queries; ++q) {
    DatasetRecord r;
    r.query_id = "q" + std::to_string(q);
    const std::size_t pos = rng.below(o.n_candidates);
    std::vector<double> f(o.dim);
    const auto e = g.store.row(pos);
    for (std::size_t j = 0; j < o.dim; ++j) f[j] = static_cast<double>(e[j]) + sd * rng.normal();
    r.features = std::move(f);
    r.positive_id = std::to_string(pos);
    r.negative_ids = detail::row_names(detail::sample_excluding(rng, o.n_candidates, pos, o.negatives));
    g.records.push_back(std::move(r));
  }
  return g;
}

struct PoolDependentOptions {
  std::size_t n_candidates = 2000;
  std::size_t n_queries = 500;
  std::size_t dim = 8;
  std::size_t pool_size = 50;
  std::size_t negatives = 0;  // 0 => every other pool member
  std::uint64_t seed = 0;
};

// argmax over `pool` of <e(c), R (q * mean(pool))>; ties to the lower row.
inline std::size_t pool_dependent_positive(const EmbeddingMatrix& store, std::span<const std::size_t> pool,
                                           std::span<const double> q, const Tensor& mixing) {
  const std::size_t dim = store.dim();
  std::vector<double> mean(dim, 0.0);
  for (std::size_t r : pool) {
    const auto e = store.row(r);
    for (std::size_t j = 0; j < dim; ++j) mean[j] += e[j];
  }
  for (double& m : mean) m /= static_cast<double>(pool.size());
  std::vector<double> u(dim), v(dim);
  for (std::size_t j = 0; j < dim; ++j) u[j] = q[j] * mean[j];
  matvec(mixing, u, v);
  std::size_t best = pool.front();
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t r : pool) {
    const auto e = store.row(r);
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += v[j] * e[j];
    if (s > best_score || (s == best_score && r < best)) {
      best_score = s;
      best = r;
    }
  }
  return best;
}

// Each query gets its own pool: the pool_size candidates closest (by inner
// product) to a random direction. Its positive follows the rule above, so
// the pool mean is needed to rank correctly.
inline GeneratedData gen_pool_dependent(const PoolDependentOptions& o) {
  if (o.pool_size < 2 || o.pool_size > o.n_candidates) {
    throw ConfigError("pool-dependent: pool_size must be in [2, n_candidates]");
  }
  if (o.dim == 0) throw ConfigError("pool-dependent: dim must be >= 1");
  GeneratedData g;
  g.store = detail::unit_sphere_store(o.n_candidates, o.dim, derive_seed(o.seed, "gen-candidates"));
  {
    Rng rng(derive_seed(o.seed, "gen-mixing"));
    g.mixing = Tensor(o.dim, o.dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(o.dim));
    for (double& x : g.mixing.data) x = rng.normal() * scale;
  }
  Rng rng(derive_seed(o.seed, "gen-queries"));
  std::vector<std::pair<double, std::size_t>> by_score(o.n_candidates);
  for (std::size_t q = 0; q < o.n_queries; ++q) {
    const auto centre = detail::unit_gaussian(rng, o.dim);
    for (std::size_t i = 0; i < o.n_candidates; ++i) {
      const auto e = g.store.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < o.dim; ++j) s += centre[j] * e[j];
      by_score[i] = {-s, i};
    }
    std::partial_sort(by_score.begin(), by_score.begin() + static_cast<std::ptrdiff_t>(o.pool_size),
                      by_score.end());
    std::vector<std::size_t> pool(o.pool_size);
    for (std::size_t i = 0; i < o.pool_size; ++i) pool[i] = by_score[i].second;
    std::sort(pool.begin(), pool.end());

    DatasetRecord r;
    r.query_id = "q" + std::to_string(q);
    auto f = detail::unit_gaussian(rng, o.dim);
    const std::size_t pos = pool_dependent_positive(g.store, pool, f, g.mixing);
    r.features = std::move(f);
    r.positive_id = std::to_string(pos);
    std::vector<std::size_t> others;
    for (std::size_t p : pool) {
      if (p != pos) others.push_back(p);
    }
    if (o.negatives > 0 && o.negatives < others.size()) {
      for (std::size_t i = 0; i < o.negatives; ++i) std::swap(others[i], others[i + rng.below(others.size() - i)]);
      others.resize(o.negatives);
    }
    r.negative_ids = detail::row_names(others);
    r.pool_ids = detail::row_names(pool);
    g.records.push_back(std::move(r));
  }
  return g;
}

// ---------------------------------------------------------------------------
// TSV ingestion

struct IngestResult {
  std::vector<DatasetRecord> records;
  std::vector<std::string> candidate_ids;  // file order
  std::vector<std::string> candidate_texts;
};

namespace detail {

inline std::vector<std::pair<std::string, std::string>> read_id_text_tsv(const std::filesystem::path& path,
                                                                          const char* what) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>text");
    }
    std::string id = line.substr(0, tab);
    if (!seen.insert(id).second) throw DataError(std::string("duplicate ") + what + " id: " + id);
    out.emplace_back(std::move(id), line.substr(tab + 1));
  }
  return out;
}

}  // namespace detail

// qrels lines are `query_id<TAB>candidate_id` or TREC-style
// `query_id<TAB>iter<TAB>candidate_id<TAB>relevance` (relevance > 0 counts).
// The first relevant candidate per query is its positive; queries without
// one are dropped. Negatives: every other query's positive.
inline IngestResult ingest_tsv_pairs(const std::filesystem::path& queries_tsv,
                                     const std::filesystem::path& candidates_tsv,
                                     const std::filesystem::path& qrels_tsv) {
  const auto queries = detail::read_id_text_tsv(queries_tsv, "query");
  const auto candidates = detail::read_id_text_tsv(candidates_tsv, "candidate");
  std::unordered_set<std::string> query_ids, candidate_ids;
  for (const auto& [id, _] : queries) query_ids.insert(id);
  for (const auto& [id, _] : candidates) candidate_ids.insert(id);

  std::ifstream in(qrels_tsv);
  if (!in) throw DataError("cannot read " + qrels_tsv.string());
  std::unordered_map<std::string, std::string> positive;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t')) cols.push_back(c);
    std::string qid, cid;
    bool relevant = true;
    if (cols.size() == 2) {
      qid = cols[0];
      cid = cols[1];
    } else if (cols.size() == 4) {
      qid = cols[0];
      cid = cols[2];
      try {
        relevant = std::stod(cols[3]) > 0.0;
      } catch (const std::exception&) {
        throw DataError(qrels_tsv.string() + ":" + std::to_string(lineno) + ": bad relevance '" + cols[3] + "'");
      }
    } else {
      throw DataError(qrels_tsv.string() + ":" + std::to_string(lineno) + ": expected 2 or 4 tab-separated columns");
    }
    if (!query_ids.count(qid)) throw DataError("qrels reference unknown query id: " + qid);
    if (!candidate_ids.count(cid)) throw DataError("qrels reference unknown candidate id: " + cid);
    if (relevant) positive.emplace(qid, cid);
  }

  IngestResult res;
  for (const auto& [id, text] : candidates) {
    res.candidate_ids.push_back(id);
    res.candidate_texts.push_back(text);
  }
  for (const auto& [id, text] : queries) {
    auto it = positive.find(id);
    if (it == positive.end()) continue;
    DatasetRecord r;
    r.query_id = id;
    r.text = text;
    r.positive_id = it->second;
    res.records.push_back(std::move(r));
  }
  fill_missing_negatives(res.records);
  return res;
}

// Hashed-trigram candidate embeddings for ingested texts. Ids become the
// matrix ids when all are numeric; otherwise the caller writes them as a
// textual sidecar.
inline EmbeddingMatrix featurize_candidates(const IngestResult& r, std::size_t dim) {
  std::vector<float> v;
  v.reserve(r.candidate_texts.size() * dim);
  for (const auto& t : r.candidate_texts) {
    for (double x : featurize_text(t, dim).values) v.push_back(static_cast<float>(x));
  }
  std::vector<std::uint64_t> ids;
  for (const auto& id : r.candidate_ids) {
    auto n = parse_u64(id);
    if (!n) {
      ids.clear();
      break;
    }
    ids.push_back(*n);
  }
  return EmbeddingMatrix(r.candidate_texts.size(), dim, std::move(v), std::move(ids));
}

// Writes the store plus a `.ids` sidecar holding the original ids.
inline void write_ingested_store(const IngestResult& r, const EmbeddingMatrix& store,
                                 const std::filesystem::path& path) {
  write_store(store, path);
  write_id_map(ids_sidecar_path(path), r.candidate_ids);
}

}  // namespace poolrank
