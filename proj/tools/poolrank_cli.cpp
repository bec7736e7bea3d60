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

// poolrank command line. Exit codes: 0 ok, 2 config, 3 data, 4 numeric,
// 5 remote encoder.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "poolrank/experiment.hpp"
#include "poolrank/stub_server.hpp"

namespace fs = std::filesystem;
using namespace poolrank;

namespace {

// --config FILE plus one --section.key flag per schema entry.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "config file (TOML-style sections)")->check(CLI::ExistingFile);
    for (const auto& k : config_schema()) {
      const std::string name = k.name;
      app->add_option_function<std::string>(
             "--" + name, [this, name](const std::string& v) { overrides[name] = v; },
             std::string(k.help) + " [" + k.default_value + "]")
          ->group("Config keys");
    }
  }

  Config build() const {
    Config c = file.empty() ? Config() : Config::from_file(file);
    for (const auto& [k, v] : overrides) c.set(k, v);
    return c;
  }
};

Workspace workspace_from(const Config& c) {
  if (c.str("paths.store").empty() || c.str("paths.dataset").empty()) {
    throw ConfigError("--paths.store and --paths.dataset are required");
  }
  return open_workspace(c.str("paths.store"), c.str("paths.dataset"));
}

Model model_from(const Config& c, const Workspace& w) {
  const auto& ckpt = c.str("paths.checkpoint");
  if (!ckpt.empty()) {
    if (!fs::exists(ckpt)) throw ConfigError("checkpoint not found: " + ckpt);
    return load_checkpoint(ckpt).model;
  }
  return make_model(c, w.store.dim(), infer_base_dim(w.records, w.store.dim()));
}

void print_summary(const std::vector<std::pair<std::string, MetricSummary>>& rows) {
  for (const auto& [name, m] : rows) {
    std::cout << name << " = " << m.mean << " (se " << m.se << ", n " << m.count << ")\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"poolrank: candidate-pool-conditioned embedding ranking"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // gen-data
  ConfigFlags gen_flags;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic store + dataset (data.* keys)");
  gen_flags.attach(gen);
  gen->add_option("--out", gen_out, "output directory")->required();

  // ingest
  std::string ing_queries, ing_candidates, ing_qrels, ing_out;
  std::size_t ing_dim = 64;
  std::uint64_t ing_seed = 0;
  auto* ingest = app.add_subcommand("ingest", "build a store + dataset from id<TAB>text TSV files");
  ingest->add_option("--queries", ing_queries, "queries TSV")->required()->check(CLI::ExistingFile);
  ingest->add_option("--candidates", ing_candidates, "candidates TSV")->required()->check(CLI::ExistingFile);
  ingest->add_option("--qrels", ing_qrels, "qrels TSV (qid, cid) or (qid, iter, cid, rel)")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", ing_out, "output directory")->required();
  ingest->add_option("--dim", ing_dim, "hashed trigram embedding width")->capture_default_str();
  ingest->add_option("--seed", ing_seed, "split seed")->capture_default_str();

  // train
  ConfigFlags train_flags;
  std::string train_out;
  auto* train = app.add_subcommand("train", "train on paths.dataset; writes a checkpoint directory");
  train_flags.attach(train);
  train->add_option("--out", train_out, "checkpoint directory")->required();

  // rank
  ConfigFlags rank_flags;
  std::string rank_out, rank_trace;
  std::size_t rank_width = 0, rank_depth = 0;
  auto* rank_cmd = app.add_subcommand("rank", "rank every dataset query (reference or remote encoder)");
  rank_flags.attach(rank_cmd);
  rank_cmd->add_option("--width", rank_width, "partitions per round")->capture_default_str();
  rank_cmd->add_option("--depth", rank_depth, "refinement rounds")->capture_default_str();
  rank_cmd->add_option("--out", rank_out, "rankings JSONL")->required();
  rank_cmd->add_option("--dump-trace", rank_trace, "write per-query refinement traces as JSON");

  // tts-sweep
  ConfigFlags sweep_flags;
  std::string sweep_out;
  auto* sweep = app.add_subcommand("tts-sweep", "evaluate the tts.widths x tts.depths grid on paths.dataset");
  sweep_flags.attach(sweep);
  sweep->add_option("--out", sweep_out, "sweep CSV")->required();

  // eval
  std::string eval_rankings, eval_dataset, eval_out;
  auto* eval = app.add_subcommand("eval", "MRR and NDCG@10 of a rankings JSONL");
  eval->add_option("--rankings", eval_rankings, "rankings JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", eval_dataset, "dataset JSONL")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "metrics CSV (metric,mean,se,n)");

  // run
  ConfigFlags run_flags;
  auto* run = app.add_subcommand("run", "full pipeline: data, train, sweep, test, report");
  run_flags.attach(run);

  // serve-stub
  std::string stub_host = "127.0.0.1", stub_model = "stub";
  int stub_port = 8089;
  std::size_t stub_hidden = 16;
  auto* stub = app.add_subcommand("serve-stub", "serve a deterministic stand-in for the embedding service");
  stub->add_option("--host", stub_host)->capture_default_str();
  stub->add_option("--port", stub_port)->capture_default_str();
  stub->add_option("--hidden-size", stub_hidden, "embedding width")->capture_default_str();
  stub->add_option("--model", stub_model, "model_id to report")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) {
      const Config c = gen_flags.build();
      const auto g = generate_from_config(c);
      fs::create_directories(gen_out);
      write_store(g.store, fs::path(gen_out) / "store.lrke");
      write_dataset(fs::path(gen_out) / "dataset.jsonl", g.records);
      std::cout << "wrote " << g.store.count() << " candidates and " << g.records.size() << " queries to "
                << gen_out << '\n';
    } else if (ingest->parsed()) {
      const auto r = ingest_tsv_pairs(ing_queries, ing_candidates, ing_qrels);
      const auto store = featurize_candidates(r, ing_dim);
      const fs::path out = ing_out;
      fs::create_directories(out);
      write_ingested_store(r, store, out / "store.lrke");
      write_dataset(out / "dataset.jsonl", r.records);
      const auto s = split_dataset(r.records, ing_seed);
      write_dataset(out / "train.jsonl", s.train);
      write_dataset(out / "valid.jsonl", s.valid);
      write_dataset(out / "test.jsonl", s.test);
      std::cout << "ingested " << r.records.size() << " queries, " << store.count() << " candidates (split "
                << s.train.size() << "/" << s.valid.size() << "/" << s.test.size() << ")\n";
    } else if (train->parsed()) {
      const Config c = train_flags.build();
      const Workspace w = workspace_from(c);
      const auto t = train_model(c, w.store, w.ids, w.records, model_from(c, w));
      save_checkpoint(train_out, t.model, t.optimizer, train_config(c), t.log);
      const auto means = Trainer::epoch_mean_losses(t.log);
      for (std::size_t e = 0; e < means.size(); ++e) std::cout << "epoch " << e << " loss " << means[e] << '\n';
    } else if (rank_cmd->parsed()) {
      const Config c = rank_flags.build();
      const Workspace w = workspace_from(c);
      const Model m = model_from(c, w);
      const auto r = rank_records(c, w, m, w.records, rank_width, rank_depth, !rank_trace.empty());
      write_rankings(rank_out, r.eval.rankings, w, c.count("report.top_k"));
      if (!rank_trace.empty()) {
        nlohmann::json j = nlohmann::json::array();
        for (std::size_t i = 0; i < r.traces.size(); ++i) {
          nlohmann::json t = trace_to_json(r.traces[i]);
          t["query_id"] = r.eval.rankings[i].query_id;
          j.push_back(std::move(t));
        }
        std::ofstream(rank_trace, std::ios::trunc) << j.dump(2) << '\n';
      }
      print_summary({{"mrr", aggregate_metrics(r.eval.mrr_values)},
                     {"ndcg@10", aggregate_metrics(r.eval.ndcg_values)}});
      std::cout << "encoder_calls = " << r.eval.cell.encoder_calls << '\n';
    } else if (sweep->parsed()) {
      const Config c = sweep_flags.build();
      const Workspace w = workspace_from(c);
      const auto s = sweep_records(c, w, model_from(c, w), w.records);
      write_sweep_csv(sweep_out, s);
      std::cout << "best width=" << s.best.width << " depth=" << s.best.depth << " mrr=" << s.best.mrr << '\n';
    } else if (eval->parsed()) {
      const auto rows = evaluate_rankings_file(eval_rankings, read_dataset(eval_dataset));
      if (!eval_out.empty()) write_metrics_csv(eval_out, rows);
      print_summary(rows);
    } else if (run->parsed()) {
      const Config c = run_flags.build();
      const auto s = run_experiment(c);
      std::cout << "best width=" << s.sweep.best.width << " depth=" << s.sweep.best.depth << '\n';
      print_summary({{"test mrr", s.test_mrr}, {"test ndcg@10", s.test_ndcg10}});
      std::cout << "report: " << s.output.string() << '\n';
    } else if (stub->parsed()) {
      StubOptions opt;
      opt.hidden_size = stub_hidden;
      opt.model_id = stub_model;
      StubServer server(opt);
      std::cerr << "serve-stub listening on " << stub_host << ':' << stub_port << '\n';
      server.serve_forever(stub_host, stub_port);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitOk;
}
