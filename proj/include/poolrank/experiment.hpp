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

// End-to-end pipeline: data -> (train) -> width/depth sweep on the
// validation split -> best cell on the test split -> report directory.
//
// Report layout:
//   metrics.csv       metric,mean,se,n
//   per_query.jsonl   {"query_id", "mrr", "ndcg10"}
//   rankings.jsonl    test rankings (top report.top_k)
//   sweep.csv         width,depth,mrr,ndcg10
//   loss.csv          epoch,step,loss,lr (when trained)
//   checkpoint/       trained model (when trained)
//   data/             generated store + dataset (when generated)
//   manifest.json     config hash, seed, versions, timings, encoder calls,
//                     and a hash of every report file
// A failing phase moves whatever was written into failed/ and rethrows
// with the phase name.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poolrank/config.hpp"
#include "poolrank/datasets.hpp"
#include "poolrank/remote.hpp"
#include "poolrank/trainer.hpp"
#include "poolrank/tts.hpp"

namespace poolrank {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Config -> module settings

inline KMeansConfig kmeans_config(const Config& c) {
  KMeansConfig k;
  k.k = c.count("model.k");
  if (k.k == 0) throw ConfigError("model.k must be >= 1");
  k.max_iters = c.count("model.kmeans_iters");
  k.batch_size = c.count("model.kmeans_batch");
  if (const auto a = c.count("model.assignment_dim"); a > 0) k.assignment_dim = a;
  k.seed = derive_seed(c.u64("seed"), "kmeans");
  return k;
}

inline TrainConfig train_config(const Config& c) {
  TrainConfig t;
  t.temperature = c.real("train.temperature");
  t.lr = c.real("train.lr");
  t.epochs = c.count("train.epochs");
  t.batch_size = c.count("train.batch_size");
  t.num_splits = c.count("train.num_splits");
  t.negatives_per_query = c.count("train.negatives_per_query");
  t.grad_clip_norm = c.real("train.grad_clip_norm");
  t.warmup_fraction = c.real("train.warmup_fraction");
  t.weight_decay = c.real("train.weight_decay");
  t.seed = c.u64("seed");
  t.validate();
  return t;
}

inline TtsConfig tts_base_config(const Config& c) {
  TtsConfig t;
  t.retention = c.real("tts.retention");
  t.seed = derive_seed(c.u64("seed"), "tts");
  return t;
}

// Fresh model for a store of width `store_dim` and queries of width `base_dim`.
inline Model make_model(const Config& c, std::size_t store_dim, std::size_t base_dim) {
  Model m;
  m.kmeans = kmeans_config(c);
  m.zero_conditioning = c.boolean("model.zero_conditioning");
  const std::size_t out_dim = store_dim;
  std::size_t cond_dim = c.count("model.cond_dim");
  if (cond_dim == 0) cond_dim = store_dim;
  std::size_t proj_hidden = c.count("model.projector_hidden");
  if (proj_hidden == 0) proj_hidden = store_dim;
  const auto enc_hidden_raw = c.integer("model.encoder_hidden");
  if (enc_hidden_raw < -1) throw ConfigError("model.encoder_hidden must be >= -1");
  const std::size_t enc_hidden = enc_hidden_raw < 0 ? out_dim : static_cast<std::size_t>(enc_hidden_raw);
  const std::uint64_t seed = c.u64("seed");
  m.projector = ProjectorParams::init(m.kmeans.k * store_dim, proj_hidden, cond_dim,
                                      derive_seed(seed, "init-projector"));
  RefEncoderParams::InitOptions opt;
  opt.store_dim = store_dim;
  opt.seed = derive_seed(seed, "init-encoder");
  opt.scale = c.real("model.init_scale");
  opt.warm_start = c.boolean("model.warm_start");
  m.encoder = RefEncoderParams::init(base_dim, cond_dim, enc_hidden, out_dim, opt);
  return m;
}

inline bool remote_mode(const Config& c) {
  const auto& mode = c.str("encoder.mode");
  if (mode == "remote") return true;
  if (mode == "reference") return false;
  throw ConfigError("encoder.mode must be reference or remote, got '" + mode + "'");
}

inline RemoteClientConfig remote_config(const Config& c, std::size_t out_dim) {
  RemoteClientConfig r;
  r.host = c.str("encoder.host");
  r.port = static_cast<int>(c.count("encoder.port"));
  r.out_dim = out_dim;
  r.b64 = c.boolean("encoder.b64");
  r.timeout = std::chrono::milliseconds(c.count("encoder.timeout_ms"));
  return r;
}

inline std::unique_ptr<ConditionedEncoder> make_encoder(const Config& c, const EmbeddingMatrix& store,
                                                        const Model& m) {
  if (remote_mode(c)) {
    auto enc = std::make_unique<RemoteEncoder>(store, m.kmeans, m.projector, remote_config(c, m.encoder.out_dim));
    enc->client().check_dims();
    return enc;
  }
  return std::make_unique<ReferenceEncoder>(store, m.kmeans, m.projector, m.encoder, m.zero_conditioning);
}

// Parses every key the pipeline reads, so a bad value fails before any work.
inline void validate_experiment_config(const Config& c) {
  c.u64("seed");
  kmeans_config(c);
  train_config(c);
  remote_mode(c);
  c.count("model.cond_dim");
  c.count("model.projector_hidden");
  c.integer("model.encoder_hidden");
  c.real("model.init_scale");
  c.boolean("model.warm_start");
  c.boolean("model.zero_conditioning");
  c.count("report.top_k");
  TtsConfig t = tts_base_config(c);
  t.validate();
  const auto widths = c.count_list("tts.widths");
  const auto depths = c.count_list("tts.depths");
  if (sweep_grid(widths, depths).empty()) throw ConfigError("tts grid has no valid (width, depth) cell");
  if (c.str("paths.store").empty()) {
    const auto& gen = c.str("data.generator");
    if (gen != "planted-linear" && gen != "pool-dependent") {
      throw ConfigError("data.generator must be planted-linear or pool-dependent, got '" + gen + "'");
    }
    c.count("data.n_candidates");
    c.count("data.n_queries");
    c.count("data.dim");
    c.real("data.noise");
    c.count("data.pool_size");
    c.count("data.negatives");
  }
}

// ---------------------------------------------------------------------------
// Data

struct Workspace {
  std::filesystem::path store_path;
  std::filesystem::path dataset_path;
  EmbeddingMatrix store;
  IdResolver ids;
  std::vector<DatasetRecord> records;
};

inline GeneratedData generate_from_config(const Config& c) {
  const auto& gen = c.str("data.generator");
  const std::uint64_t seed = derive_seed(c.u64("seed"), "data");
  if (gen == "planted-linear") {
    PlantedLinearOptions o;
    o.n_candidates = c.count("data.n_candidates");
    o.n_queries = c.count("data.n_queries");
    o.dim = c.count("data.dim");
    o.noise = c.real("data.noise");
    o.negatives = c.count("data.negatives");
    o.seed = seed;
    return gen_planted_linear(o);
  }
  if (gen == "pool-dependent") {
    PoolDependentOptions o;
    o.n_candidates = c.count("data.n_candidates");
    o.n_queries = c.count("data.n_queries");
    o.dim = c.count("data.dim");
    o.pool_size = c.count("data.pool_size");
    o.negatives = c.count("data.negatives");
    o.seed = seed;
    return gen_pool_dependent(o);
  }
  throw ConfigError("data.generator must be planted-linear or pool-dependent, got '" + gen + "'");
}

inline Workspace open_workspace(const std::filesystem::path& store_path,
                                const std::filesystem::path& dataset_path) {
  Workspace w;
  w.store_path = store_path;
  w.dataset_path = dataset_path;
  if (!std::filesystem::exists(store_path)) throw ConfigError("store not found: " + store_path.string());
  if (!std::filesystem::exists(dataset_path)) throw ConfigError("dataset not found: " + dataset_path.string());
  w.store = read_store(store_path);
  w.ids = IdResolver::for_store(w.store, store_path);
  w.records = read_dataset(dataset_path);
  return w;
}

// Uses paths.store/paths.dataset when both are set; otherwise generates into
// `data_dir` (store.lrke + dataset.jsonl).
inline Workspace load_workspace(const Config& c, const std::filesystem::path& data_dir) {
  const auto& sp = c.str("paths.store");
  const auto& dp = c.str("paths.dataset");
  if (sp.empty() != dp.empty()) throw ConfigError("paths.store and paths.dataset must be set together");
  if (!sp.empty()) return open_workspace(sp, dp);
  GeneratedData g = generate_from_config(c);
  std::filesystem::create_directories(data_dir);
  write_store(g.store, data_dir / "store.lrke");
  write_dataset(data_dir / "dataset.jsonl", g.records);
  return open_workspace(data_dir / "store.lrke", data_dir / "dataset.jsonl");
}

// ---------------------------------------------------------------------------
// Report helpers

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_sweep_csv(const std::filesystem::path& path, const SweepResult& s) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "width,depth,mrr,ndcg10\n";
  for (const auto& c : s.cells) {
    out << c.width << ',' << c.depth << ',' << format_double(c.mrr) << ',' << format_double(c.ndcg10) << '\n';
  }
}

inline void write_metrics_csv(const std::filesystem::path& path,
                              const std::vector<std::pair<std::string, MetricSummary>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "metric,mean,se,n\n";
  for (const auto& [name, m] : rows) {
    out << name << ',' << format_double(m.mean) << ',' << format_double(m.se) << ',' << m.count << '\n';
  }
}

inline std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

// ---------------------------------------------------------------------------
// Building blocks shared with the CLI verbs

struct TrainOutcome {
  Model model;
  OptimizerState optimizer;
  std::vector<LossRecord> log;
};

inline TrainOutcome train_model(const Config& c, const EmbeddingMatrix& store, const IdResolver& ids,
                                std::vector<DatasetRecord> train_records, Model init) {
  fill_missing_negatives(train_records);
  validate_records(train_records, false);
  auto instances = to_instances(train_records, ids, init.encoder.base_dim);
  Trainer trainer(std::move(instances), store, train_config(c), std::move(init));
  trainer.run();
  return {trainer.model(), trainer.optimizer(), trainer.log()};
}

struct RankOutcome {
  CellEvaluation eval;
  std::vector<TtsTrace> traces;
};

// Rankings of `records` under one (width, depth) cell.
inline RankOutcome rank_records(const Config& c, const Workspace& w, const Model& m,
                                const std::vector<DatasetRecord>& records, std::size_t width,
                                std::size_t depth, bool keep_traces) {
  const bool remote = remote_mode(c);
  validate_records(records, remote);
  const auto queries = to_eval_queries(records, w.store, w.ids, m.encoder.base_dim, remote);
  const EmbeddingMatrix candidates = encode_candidates_ref(w.store, m.encoder);
  auto encoder = make_encoder(c, w.store, m);
  TtsConfig cfg = tts_base_config(c);
  cfg.width = width;
  cfg.depth = depth;
  RankOutcome out;
  if (!keep_traces) {
    out.eval = evaluate_cell(queries, candidates, *encoder, cfg);
    return out;
  }
  out.eval.cell.width = width;
  out.eval.cell.depth = depth;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    TtsConfig qcfg = cfg;
    qcfg.seed = derive_seed(cfg.seed, "tts-query", qi);
    auto o = tts_rank(queries[qi].input, queries[qi].pool, candidates, *encoder, qcfg);
    out.eval.cell.encoder_calls += o.trace.encoder_calls;
    out.eval.mrr_values.push_back(mrr(o.ranking, queries[qi].judgment));
    out.eval.ndcg_values.push_back(ndcg_at_k(o.ranking, queries[qi].judgment, 10));
    out.eval.rankings.push_back(std::move(o.ranking));
    out.traces.push_back(std::move(o.trace));
  }
  if (!queries.empty()) {
    out.eval.cell.mrr = aggregate_metrics(out.eval.mrr_values).mean;
    out.eval.cell.ndcg10 = aggregate_metrics(out.eval.ndcg_values).mean;
  }
  return out;
}

inline SweepResult sweep_records(const Config& c, const Workspace& w, const Model& m,
                                 const std::vector<DatasetRecord>& records) {
  const bool remote = remote_mode(c);
  validate_records(records, remote);
  if (records.empty()) throw DataError("tts sweep: no validation queries");
  const auto queries = to_eval_queries(records, w.store, w.ids, m.encoder.base_dim, remote);
  const EmbeddingMatrix candidates = encode_candidates_ref(w.store, m.encoder);
  auto encoder = make_encoder(c, w.store, m);
  const auto widths = c.count_list("tts.widths");
  const auto depths = c.count_list("tts.depths");
  return tts_sweep(queries, candidates, *encoder, widths, depths, tts_base_config(c));
}

inline void write_rankings(const std::filesystem::path& path, const std::vector<RankingResult>& rankings,
                           const Workspace& w, std::size_t top_k) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : rankings) out << ranking_record(r, w.store, w.ids, top_k).dump() << '\n';
}

inline void write_per_query(const std::filesystem::path& path, const CellEvaluation& ev) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < ev.rankings.size(); ++i) {
    nlohmann::json j{{"query_id", ev.rankings[i].query_id},
                     {"mrr", ev.mrr_values[i]},
                     {"ndcg10", ev.ndcg_values[i]}};
    out << j.dump() << '\n';
  }
}

// Metrics for a rankings JSONL against a dataset (ids compared as text).
inline std::vector<std::pair<std::string, MetricSummary>> evaluate_rankings_file(
    const std::filesystem::path& rankings, const std::vector<DatasetRecord>& records) {
  std::map<std::string, std::string> positive;
  for (const auto& r : records) positive[r.query_id] = r.positive_id;
  std::ifstream in(rankings);
  if (!in) throw DataError("cannot read " + rankings.string());
  std::vector<double> mrrs, ndcgs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = rankings.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": invalid JSON: " + e.what());
    }
    const std::string qid = detail::id_from_json(j.at("query_id"), where);
    auto it = positive.find(qid);
    if (it == positive.end()) throw DataError(where + ": query " + qid + " not in dataset");
    // Ids are interned to integers so the metric functions apply unchanged.
    std::map<std::string, std::uint64_t> intern;
    std::vector<std::uint64_t> order;
    for (const auto& id : j.at("ranking")) {
      const auto s = detail::id_from_json(id, where);
      order.push_back(intern.emplace(s, intern.size()).first->second);
    }
    RelevanceJudgment judgment;
    judgment.query_id = qid;
    judgment.positive_ids.insert(intern.emplace(it->second, intern.size()).first->second);
    mrrs.push_back(mrr(order, judgment));
    ndcgs.push_back(ndcg_at_k(order, judgment, 10));
  }
  return {{"mrr", aggregate_metrics(mrrs)}, {"ndcg@10", aggregate_metrics(ndcgs)}};
}

// ---------------------------------------------------------------------------
// run_experiment

struct RunSummary {
  std::filesystem::path output;
  SweepResult sweep;
  MetricSummary test_mrr;
  MetricSummary test_ndcg10;
  nlohmann::json manifest;
};

namespace detail {

inline void quarantine_outputs(const std::filesystem::path& out, const std::string& phase,
                               const std::string& message) {
  namespace fs = std::filesystem;
  const fs::path failed = out / "failed";
  fs::create_directories(failed);
  for (const auto& entry : fs::directory_iterator(out)) {
    if (entry.path().filename() == "failed") continue;
    fs::rename(entry.path(), failed / entry.path().filename());
  }
  std::ofstream(failed / "error.txt") << "phase: " << phase << "\nerror: " << message << '\n';
}

}  // namespace detail

inline RunSummary run_experiment(const Config& c) {
  namespace fs = std::filesystem;
  using Clock = std::chrono::steady_clock;
  validate_experiment_config(c);
  RunSummary summary;
  const fs::path out = c.str("paths.output");
  summary.output = out;
  fs::create_directories(out);
  fs::remove_all(out / "failed");

  nlohmann::json timings = nlohmann::json::object();
  nlohmann::json calls = nlohmann::json::object();
  auto phase = [&](const std::string& name, auto&& fn) {
    const auto t0 = Clock::now();
    try {
      fn();
    } catch (const std::exception& e) {
      detail::quarantine_outputs(out, name, e.what());
      rethrow_with_prefix("phase " + name + ": ");
    }
    timings[name] = std::chrono::duration<double>(Clock::now() - t0).count();
  };

  Workspace w;
  DatasetSplit split;
  Model model;
  std::vector<std::string> outputs;

  phase("data", [&] {
    w = load_workspace(c, out / "data");
    split = split_dataset(w.records, c.u64("seed"));
    if (split.valid.empty() || split.test.empty()) {
      throw DataError("dataset too small for an 8:1:1 split (" + std::to_string(w.records.size()) + " queries)");
    }
  });

  phase("train", [&] {
    const auto& ckpt = c.str("paths.checkpoint");
    if (!ckpt.empty()) {
      if (!fs::exists(ckpt)) throw ConfigError("checkpoint not found: " + ckpt);
      model = load_checkpoint(ckpt).model;
      return;
    }
    model = make_model(c, w.store.dim(), infer_base_dim(w.records, w.store.dim()));
    if (c.count("train.epochs") == 0) return;
    auto trained = train_model(c, w.store, w.ids, split.train, model);
    model = trained.model;
    save_checkpoint(out / "checkpoint", trained.model, trained.optimizer, train_config(c), trained.log);
    write_loss_csv(out / "loss.csv", trained.log);
    outputs.push_back("loss.csv");
  });

  phase("sweep", [&] {
    summary.sweep = sweep_records(c, w, model, split.valid);
    write_sweep_csv(out / "sweep.csv", summary.sweep);
    outputs.push_back("sweep.csv");
    std::size_t total = 0;
    for (const auto& cell : summary.sweep.cells) total += cell.encoder_calls;
    calls["sweep"] = total;
  });

  phase("test", [&] {
    const auto& best = summary.sweep.best;
    const auto ranked = rank_records(c, w, model, split.test, best.width, best.depth, false);
    summary.test_mrr = aggregate_metrics(ranked.eval.mrr_values);
    summary.test_ndcg10 = aggregate_metrics(ranked.eval.ndcg_values);
    write_metrics_csv(out / "metrics.csv", {{"mrr", summary.test_mrr}, {"ndcg@10", summary.test_ndcg10}});
    write_per_query(out / "per_query.jsonl", ranked.eval);
    write_rankings(out / "rankings.jsonl", ranked.eval.rankings, w, c.count("report.top_k"));
    outputs.insert(outputs.end(), {"metrics.csv", "per_query.jsonl", "rankings.jsonl"});
    calls["test"] = ranked.eval.cell.encoder_calls;
  });

  phase("report", [&] {
    nlohmann::json m;
    m["config_hash"] = hex64(fnv1a64(c.canonical()));
    m["seed"] = c.u64("seed");
    m["versions"] = {{"poolrank", kVersion}, {"store_format", kStoreVersion}, {"compiler", __VERSION__}};
    m["config"] = c.values();
    m["splits"] = {{"train", split.train.size()}, {"valid", split.valid.size()}, {"test", split.test.size()}};
    m["best"] = {{"width", summary.sweep.best.width}, {"depth", summary.sweep.best.depth}};
    m["encoder_calls"] = calls;
    m["wall_clock_seconds"] = timings;
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& f : outputs) hashes[f] = file_hash(out / f);
    m["outputs"] = hashes;
    std::ofstream(out / "manifest.json", std::ios::trunc) << m.dump(2) << '\n';
    summary.manifest = std::move(m);
  });
  return summary;
}

}  // namespace poolrank
