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

// Contrastive training of the projector and reference encoder.
//
// Each step takes a batch of queries; every query draws one of its
// precomputed candidate-pool splits at random, and the aggregate of that
// split conditions its embedding. The objective is the temperature-scaled
// softmax cross-entropy of the positive against the query's negatives,
// averaged over the batch. Gradients are hand-derived (see batch_pass) and
// checked against finite differences in the tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "poolrank/aggregator.hpp"
#include "poolrank/common.hpp"
#include "poolrank/embed_store.hpp"
#include "poolrank/encoder.hpp"

namespace poolrank {

struct QueryInstance {
  std::string query_id;
  std::vector<double> features;
  std::size_t positive = 0;             // store row
  std::vector<std::size_t> negatives;   // store rows
  std::vector<std::size_t> pool;        // store rows; empty => whole store
};

struct TrainConfig {
  double temperature = 0.15;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t epochs = 15;
  std::size_t batch_size = 20;
  std::size_t num_splits = 10;
  std::size_t negatives_per_query = 0;  // 0 => every listed negative
  double grad_clip_norm = 0.5;
  double warmup_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
      throw ConfigError("warmup_fraction must be in (0, 1)");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (num_splits == 0) throw ConfigError("num_splits must be >= 1");
    if (!(grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be > 0");
  }
};

// Everything trainable plus the aggregation settings it was trained with.
struct Model {
  KMeansConfig kmeans;
  ProjectorParams projector;
  RefEncoderParams encoder;
  bool zero_conditioning = false;

  bool uses_projector() const { return !zero_conditioning && encoder.cond_dim > 0; }

  friend bool operator==(const Model&, const Model&) = default;
};

// Visits trainable tensors in a fixed order: fn(name, tensor, decays).
template <class M, class F>
  requires std::same_as<std::remove_const_t<M>, Model>
void for_each_param(M& m, F&& fn) {
  fn("W1", m.projector.W1, true);
  fn("b1", m.projector.b1, false);
  fn("norm_gain", m.projector.norm_gain, false);
  fn("norm_bias", m.projector.norm_bias, false);
  fn("W2", m.projector.W2, true);
  fn("b2", m.projector.b2, false);
  if (m.encoder.has_hidden()) {
    fn("Wh", m.encoder.Wh, true);
    fn("bh", m.encoder.bh, false);
  }
  fn("Wq", m.encoder.Wq, true);
  fn("bq", m.encoder.bq, false);
  if (m.encoder.has_candidate_map()) fn("Wc", m.encoder.Wc, true);
}

inline std::vector<std::pair<std::string, Tensor*>> param_list(Model& m) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for_each_param(m, [&](const char* name, Tensor& t, bool) { out.emplace_back(name, &t); });
  return out;
}

// A Model-shaped container of zeros, used to hold gradients.
inline Model zeros_like(const Model& m) {
  Model z = m;
  for_each_param(z, [](const char*, Tensor& t, bool) { t.fill(0.0); });
  return z;
}

// ---------------------------------------------------------------------------
// Loss

struct InfoNceResult {
  double loss = 0.0;
  std::vector<double> scores;  // positive first, already divided by tau
};

// -log softmax of the positive among {positive} + negatives, stabilized by
// subtracting the max score.
inline InfoNceResult infonce_from_scores(std::vector<double> scores) {
  const double top = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - top);
  InfoNceResult r;
  r.loss = (top + std::log(sum)) - scores.front();
  if (r.loss < 0.0) r.loss = 0.0;  // rounding
  r.scores = std::move(scores);
  return r;
}

inline InfoNceResult infonce_loss(std::span<const double> h_q, std::span<const double> h_pos,
                                  const std::vector<std::vector<double>>& h_negs,
                                  double temperature) {
  if (h_negs.empty()) throw DataError("infonce_loss: no negatives");
  if (!(temperature > 0.0)) throw ConfigError("infonce_loss: temperature must be > 0");
  if (h_pos.size() != h_q.size()) throw DimensionError("infonce_loss: positive dim mismatch");
  std::vector<double> scores;
  scores.reserve(h_negs.size() + 1);
  scores.push_back(dot(h_q, h_pos) / temperature);
  for (const auto& n : h_negs) {
    if (n.size() != h_q.size()) throw DimensionError("infonce_loss: negative dim mismatch");
    scores.push_back(dot(h_q, n) / temperature);
  }
  return infonce_from_scores(std::move(scores));
}

// ---------------------------------------------------------------------------
// Forward / backward over one batch

struct BatchItem {
  std::size_t query = 0;               // index into the dataset
  std::vector<double> g;               // raw aggregate of the sampled split
  std::vector<std::size_t> negatives;  // store rows used this step
};

struct BatchPass {
  double loss = 0.0;  // mean over items
  std::optional<Model> grads;
  std::optional<ProjectorForward> projector_forward;
  std::vector<char> relu_pattern;  // sign of every ReLU pre-activation
};

inline BatchPass batch_pass(const Model& m, std::span<const QueryInstance> data,
                            std::span<const BatchItem> items, const EmbeddingMatrix& store,
                            double temperature, bool want_grads) {
  if (items.empty()) throw DataError("empty training batch");
  const double inv_b = 1.0 / static_cast<double>(items.size());
  const RefEncoderParams& enc = m.encoder;
  BatchPass pass;
  if (want_grads) pass.grads = zeros_like(m);

  if (m.uses_projector()) {
    std::vector<std::vector<double>> gs;
    gs.reserve(items.size());
    for (const auto& it : items) gs.push_back(it.g);
    pass.projector_forward = project_forward(gs, m.projector, Mode::kTrain);
    for (double y : pass.projector_forward->pre_relu.data) pass.relu_pattern.push_back(y > 0.0);
  }

  Tensor dcond(items.size(), enc.cond_dim);
  const std::vector<double> zero_cond(enc.cond_dim, 0.0);

  for (std::size_t i = 0; i < items.size(); ++i) {
    const BatchItem& it = items[i];
    const QueryInstance& q = data[it.query];
    if (it.negatives.empty()) throw DataError("query " + q.query_id + " has no negatives");
    std::span<const double> cond = zero_cond;
    if (m.uses_projector()) cond = pass.projector_forward->out.row(i);
    const EncoderForward ef = encoder_forward(q.features, cond, enc);
    for (double z : ef.pre_relu) pass.relu_pattern.push_back(z > 0.0);

    std::vector<std::size_t> rows;
    rows.reserve(it.negatives.size() + 1);
    rows.push_back(q.positive);
    rows.insert(rows.end(), it.negatives.begin(), it.negatives.end());
    std::vector<std::vector<double>> hc;
    hc.reserve(rows.size());
    std::vector<double> scores;
    scores.reserve(rows.size());
    for (std::size_t r : rows) {
      hc.push_back(candidate_embedding(store, r, enc));
      scores.push_back(dot(ef.out, hc.back()) / temperature);
    }
    const InfoNceResult l = infonce_from_scores(scores);
    pass.loss += l.loss * inv_b;
    if (!want_grads) continue;

    Model& g = *pass.grads;
    const double top = *std::max_element(l.scores.begin(), l.scores.end());
    double z = 0.0;
    for (double s : l.scores) z += std::exp(s - top);
    std::vector<double> dhq(enc.out_dim, 0.0);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const double p = std::exp(l.scores[j] - top) / z;
      const double ds = (p - (j == 0 ? 1.0 : 0.0)) * inv_b / temperature;
      for (std::size_t d = 0; d < enc.out_dim; ++d) dhq[d] += ds * hc[j][d];
      if (enc.has_candidate_map()) {
        std::vector<double> dhc(enc.out_dim);
        for (std::size_t d = 0; d < enc.out_dim; ++d) dhc[d] = ds * ef.out[d];
        const auto e = store.row(rows[j]);
        const std::vector<double> ed(e.begin(), e.end());
        add_outer(g.encoder.Wc, dhc, ed);
      }
    }
    std::vector<double> dx(enc.input_dim(), 0.0);
    if (enc.has_hidden()) {
      add_outer(g.encoder.Wq, dhq, ef.hidden);
      for (std::size_t d = 0; d < enc.out_dim; ++d) g.encoder.bq[d] += dhq[d];
      std::vector<double> dz(enc.hidden_dim);
      matvec_transposed(enc.Wq, dhq, dz);
      for (std::size_t h = 0; h < enc.hidden_dim; ++h) dz[h] = ef.pre_relu[h] > 0.0 ? dz[h] : 0.0;
      add_outer(g.encoder.Wh, dz, ef.input);
      for (std::size_t h = 0; h < enc.hidden_dim; ++h) g.encoder.bh[h] += dz[h];
      matvec_transposed(enc.Wh, dz, dx);
    } else {
      add_outer(g.encoder.Wq, dhq, ef.input);
      for (std::size_t d = 0; d < enc.out_dim; ++d) g.encoder.bq[d] += dhq[d];
      matvec_transposed(enc.Wq, dhq, dx);
    }
    for (std::size_t c = 0; c < enc.cond_dim; ++c) dcond(i, c) = dx[enc.base_dim + c];
  }

  if (want_grads && m.uses_projector()) {
    Model& g = *pass.grads;
    const ProjectorParams& p = m.projector;
    const ProjectorForward& f = *pass.projector_forward;
    const std::size_t b = items.size();
    const std::size_t hd = p.hidden_dim;
    Tensor dn(b, hd);
    for (std::size_t i = 0; i < b; ++i) {
      const auto dc = dcond.row(i);
      add_outer(g.projector.W2, dc, f.activated.row(i));
      for (std::size_t o = 0; o < p.out_dim; ++o) g.projector.b2[o] += dc[o];
      std::vector<double> da(hd);
      matvec_transposed(p.W2, dc, da);
      for (std::size_t h = 0; h < hd; ++h) {
        const double dy = f.pre_relu(i, h) > 0.0 ? da[h] : 0.0;
        g.projector.norm_gain[h] += dy * f.normalized(i, h);
        g.projector.norm_bias[h] += dy;
        dn(i, h) = dy * p.norm_gain[h];
      }
    }
    std::vector<double> sum_dn(hd, 0.0), sum_dn_n(hd, 0.0);
    if (f.batch_stats) {
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t h = 0; h < hd; ++h) {
          sum_dn[h] += dn(i, h);
          sum_dn_n[h] += dn(i, h) * f.normalized(i, h);
        }
    }
    const double inv_n = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<double> dh(hd);
      for (std::size_t h = 0; h < hd; ++h) {
        const double sigma = std::sqrt(f.var[h] + p.eps);
        dh[h] = f.batch_stats
                    ? (dn(i, h) - sum_dn[h] * inv_n - f.normalized(i, h) * sum_dn_n[h] * inv_n) / sigma
                    : dn(i, h) / sigma;
      }
      add_outer(g.projector.W1, dh, items[i].g);
      for (std::size_t h = 0; h < hd; ++h) g.projector.b1[h] += dh[h];
    }
  }
  return pass;
}

// ---------------------------------------------------------------------------
// Splits

// For each query, one partition of its candidate universe (pool, or the whole
// store) into num_splits subsets. Subset entries are store rows.
inline std::vector<std::vector<std::vector<std::size_t>>> precompute_splits(
    std::span<const QueryInstance> data, const EmbeddingMatrix& store, std::size_t num_splits,
    std::uint64_t seed) {
  if (num_splits == 0) throw ConfigError("num_splits must be >= 1");
  std::vector<std::vector<std::vector<std::size_t>>> out;
  out.reserve(data.size());
  std::vector<std::size_t> all(store.count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (std::size_t qi = 0; qi < data.size(); ++qi) {
    const auto& universe = data[qi].pool.empty() ? all : data[qi].pool;
    if (universe.empty()) throw DataError("query " + data[qi].query_id + " has an empty pool");
    const Partition p = random_partition(universe.size(), num_splits, derive_seed(seed, "splits", qi));
    std::vector<std::vector<std::size_t>> subsets;
    for (const auto& s : p.subsets) {
      std::vector<std::size_t> rows;
      rows.reserve(s.size());
      for (std::size_t pos : s) rows.push_back(universe[pos]);
      std::sort(rows.begin(), rows.end());
      subsets.push_back(std::move(rows));
    }
    out.push_back(std::move(subsets));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerState {
  Model m1;  // first moments (Model-shaped)
  Model m2;  // second moments
  std::size_t step = 0;
};

// Linear warm-up from 0 to cfg.lr, then cosine decay towards 0.
inline double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return 0.0;
  const auto warmup = static_cast<std::size_t>(
      std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps) - 1e-9));
  if (step < warmup) return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
  const std::size_t decay_steps = std::max<std::size_t>(1, total_steps - warmup);
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(decay_steps));
  return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

inline double global_grad_norm(Model& grads) {
  double ss = 0.0;
  for_each_param(grads, [&](const char*, Tensor& t, bool) {
    for (double v : t.data) ss += v * v;
  });
  return std::sqrt(ss);
}

inline void clip_gradients(Model& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for_each_param(grads, [&](const char*, Tensor& t, bool) {
    for (double& v : t.data) v *= scale;
  });
}

// AdamW with decoupled weight decay on weight matrices only.
inline void adamw_update(Model& model, Model& grads, OptimizerState& opt, const TrainConfig& cfg,
                         double lr) {
  ++opt.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  auto params = param_list(model);
  auto g = param_list(grads);
  auto m1 = param_list(opt.m1);
  auto m2 = param_list(opt.m2);
  std::vector<bool> decays;
  for_each_param(model, [&](const char*, Tensor&, bool d) { decays.push_back(d); });
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k].second;
    const Tensor& gr = *g[k].second;
    Tensor& a = *m1[k].second;
    Tensor& b = *m2[k].second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      a[i] = cfg.beta1 * a[i] + (1.0 - cfg.beta1) * gr[i];
      b[i] = cfg.beta2 * b[i] + (1.0 - cfg.beta2) * gr[i] * gr[i];
      const double mhat = a[i] / bc1;
      const double vhat = b[i] / bc2;
      if (decays[k]) p[i] -= lr * cfg.weight_decay * p[i];
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

class Trainer {
 public:
  Trainer(std::vector<QueryInstance> data, const EmbeddingMatrix& store, TrainConfig cfg, Model init)
      : data_(std::move(data)), store_(&store), cfg_(cfg), model_(std::move(init)) {
    cfg_.validate();
    if (data_.empty()) throw DataError("training set is empty");
    for (const auto& q : data_) {
      if (q.positive >= store.count()) throw DataError("query " + q.query_id + ": positive id not in store");
      if (q.negatives.empty()) throw DataError("query " + q.query_id + " has no negatives");
      for (std::size_t n : q.negatives) {
        if (n >= store.count()) throw DataError("query " + q.query_id + ": negative id not in store");
        if (n == q.positive) throw DataError("query " + q.query_id + ": positive listed as negative");
      }
      if (q.features.size() != model_.encoder.base_dim) {
        throw DimensionError("query " + q.query_id + ": features length " +
                             std::to_string(q.features.size()) + " != base_dim " +
                             std::to_string(model_.encoder.base_dim));
      }
    }
    opt_.m1 = zeros_like(model_);
    opt_.m2 = zeros_like(model_);
    splits_ = precompute_splits(data_, store, cfg_.num_splits, derive_seed(cfg_.seed, "splits"));
    steps_per_epoch_ = (data_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
  }

  // Continue from saved model + optimizer state.
  void restore(Model model, OptimizerState opt, std::vector<LossRecord> log) {
    model_ = std::move(model);
    opt_ = std::move(opt);
    log_ = std::move(log);
  }

  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  std::size_t total_steps() const { return steps_per_epoch_ * cfg_.epochs; }
  std::size_t step() const { return opt_.step; }
  const Model& model() const { return model_; }
  const OptimizerState& optimizer() const { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<LossRecord>& log() const { return log_; }
  const std::vector<QueryInstance>& data() const { return data_; }

  // Runs until total_steps() or stop_at (exclusive step index).
  void run(std::optional<std::size_t> stop_at = std::nullopt) {
    const std::size_t end = std::min(total_steps(), stop_at.value_or(total_steps()));
    while (opt_.step < end) train_step();
  }

  // Items of the batch for `step` (deterministic in seed and step).
  std::vector<BatchItem> batch_for_step(std::size_t step) {
    const std::size_t epoch = step / steps_per_epoch_;
    const std::size_t b = step % steps_per_epoch_;
    if (epoch != order_epoch_) {
      order_.resize(data_.size());
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
      Rng rng(derive_seed(cfg_.seed, "epoch-order", epoch));
      rng.shuffle(order_);
      order_epoch_ = epoch;
    }
    const std::size_t begin = b * cfg_.batch_size;
    const std::size_t stop = std::min(data_.size(), begin + cfg_.batch_size);
    std::vector<BatchItem> items;
    for (std::size_t k = begin; k < stop; ++k) {
      const std::size_t qi = order_[k];
      BatchItem it;
      it.query = qi;
      const std::size_t splits = splits_[qi].size();
      Rng rng(derive_seed(cfg_.seed, "split-pick", step, qi));
      const std::size_t r = rng.below(splits);
      if (model_.uses_projector()) it.g = aggregate_cached(qi, r);
      it.negatives = data_[qi].negatives;
      if (cfg_.negatives_per_query > 0 && it.negatives.size() > cfg_.negatives_per_query) {
        // Partial Fisher-Yates: the first n entries are a uniform sample.
        for (std::size_t i = 0; i < cfg_.negatives_per_query; ++i) {
          std::swap(it.negatives[i], it.negatives[i + rng.below(it.negatives.size() - i)]);
        }
        it.negatives.resize(cfg_.negatives_per_query);
      }
      items.push_back(std::move(it));
    }
    return items;
  }

  void train_step() {
    const std::size_t step = opt_.step;
    const auto items = batch_for_step(step);
    BatchPass pass = batch_pass(model_, data_, items, *store_, cfg_.temperature, true);
    if (!std::isfinite(pass.loss)) {
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    Model& grads = *pass.grads;
    for_each_param(grads, [&](const char* name, Tensor& t, bool) {
      if (!all_finite(t.data)) {
        throw NumericError(std::string("non-finite gradient in ") + name + " at step " +
                           std::to_string(step));
      }
    });
    clip_gradients(grads, cfg_.grad_clip_norm);
    const double lr = scheduled_lr(cfg_, step, total_steps());
    adamw_update(model_, grads, opt_, cfg_, lr);
    if (pass.projector_forward) update_running_stats(model_.projector, *pass.projector_forward, items.size());
    log_.push_back({step / steps_per_epoch_, step, pass.loss, lr});
  }

  // Mean step loss per epoch, in epoch order.
  std::vector<double> epoch_means() const { return epoch_mean_losses(log_); }

  static std::vector<double> epoch_mean_losses(const std::vector<LossRecord>& log) {
    std::map<std::size_t, std::pair<double, std::size_t>> acc;
    for (const auto& r : log) {
      acc[r.epoch].first += r.loss;
      ++acc[r.epoch].second;
    }
    std::vector<double> out;
    for (const auto& [e, s] : acc) out.push_back(s.first / static_cast<double>(s.second));
    return out;
  }

 private:
  const std::vector<double>& aggregate_cached(std::size_t qi, std::size_t r) {
    auto key = std::make_pair(qi, r);
    auto it = g_cache_.find(key);
    if (it == g_cache_.end()) {
      it = g_cache_.emplace(key, aggregate(splits_[qi][r], *store_, model_.kmeans).values).first;
    }
    return it->second;
  }

  std::vector<QueryInstance> data_;
  const EmbeddingMatrix* store_;
  TrainConfig cfg_;
  Model model_;
  OptimizerState opt_;
  std::vector<LossRecord> log_;
  std::vector<std::vector<std::vector<std::size_t>>> splits_;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> g_cache_;
  std::vector<std::size_t> order_;
  std::size_t order_epoch_ = static_cast<std::size_t>(-1);
  std::size_t steps_per_epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: a directory holding meta.json and one f64 store file per
// tensor (parameters, BatchNorm buffers, optimizer moments).

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"temperature", c.temperature}, {"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2},
          {"adam_eps", c.adam_eps}, {"weight_decay", c.weight_decay}, {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"num_splits", c.num_splits},
          {"negatives_per_query", c.negatives_per_query}, {"grad_clip_norm", c.grad_clip_norm},
          {"warmup_fraction", c.warmup_fraction}, {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.temperature = j.at("temperature");
  c.lr = j.at("lr");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.adam_eps = j.at("adam_eps");
  c.weight_decay = j.at("weight_decay");
  c.epochs = j.at("epochs");
  c.batch_size = j.at("batch_size");
  c.num_splits = j.at("num_splits");
  c.negatives_per_query = j.at("negatives_per_query");
  c.grad_clip_norm = j.at("grad_clip_norm");
  c.warmup_fraction = j.at("warmup_fraction");
  c.seed = j.at("seed");
  return c;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

struct Checkpoint {
  Model model;
  OptimizerState optimizer;
  TrainConfig config;
  std::vector<LossRecord> log;
};

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,step,loss,lr\n";
  out << std::setprecision(17);
  for (const auto& r : log) out << r.epoch << ',' << r.step << ',' << r.loss << ',' << r.lr << '\n';
}

inline std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<LossRecord> log;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    LossRecord r;
    char comma;
    ls >> r.epoch >> comma >> r.step >> comma >> r.loss >> comma >> r.lr;
    if (!ls) throw DataError("malformed loss log line: " + line);
    log.push_back(r);
  }
  return log;
}

inline void save_checkpoint(const std::filesystem::path& dir, const Model& model,
                            const OptimizerState& opt, const TrainConfig& cfg,
                            const std::vector<LossRecord>& log) {
  std::filesystem::create_directories(dir);
  Model m = model;
  Model m1 = opt.m1;
  Model m2 = opt.m2;
  for_each_param(m, [&](const char* name, Tensor& t, bool) { write_tensor(t, dir / (std::string(name) + ".lrke")); });
  for_each_param(m1, [&](const char* name, Tensor& t, bool) { write_tensor(t, dir / ("adam_m." + std::string(name) + ".lrke")); });
  for_each_param(m2, [&](const char* name, Tensor& t, bool) { write_tensor(t, dir / ("adam_v." + std::string(name) + ".lrke")); });
  write_tensor(model.projector.running_mean, dir / "running_mean.lrke");
  write_tensor(model.projector.running_var, dir / "running_var.lrke");
  write_loss_csv(dir / "loss.csv", log);

  nlohmann::json meta;
  meta["format"] = 1;
  meta["step"] = opt.step;
  meta["rng_state"] = hex64(cfg.seed) + hex64(opt.step);
  meta["config"] = train_config_to_json(cfg);
  meta["dims"] = {{"projector_in", model.projector.in_dim},
                  {"projector_hidden", model.projector.hidden_dim},
                  {"projector_out", model.projector.out_dim},
                  {"base_dim", model.encoder.base_dim},
                  {"cond_dim", model.encoder.cond_dim},
                  {"encoder_hidden", model.encoder.hidden_dim},
                  {"out_dim", model.encoder.out_dim},
                  {"store_dim", model.encoder.Wc.cols}};
  meta["projector"] = {{"momentum", model.projector.momentum}, {"eps", model.projector.eps}};
  meta["kmeans"] = {{"k", model.kmeans.k}, {"max_iters", model.kmeans.max_iters},
                    {"batch_size", model.kmeans.batch_size},
                    {"assignment_dim", model.kmeans.assignment_dim ? nlohmann::json(*model.kmeans.assignment_dim) : nlohmann::json(nullptr)},
                    {"seed", model.kmeans.seed}, {"tol", model.kmeans.tol}};
  meta["zero_conditioning"] = model.zero_conditioning;
  std::ofstream out(dir / "meta.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw DataError("missing " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint meta.json: " + std::string(e.what()));
  }
  Checkpoint ck;
  ck.config = train_config_from_json(meta.at("config"));
  const auto& d = meta.at("dims");
  Model& m = ck.model;
  m.projector.in_dim = d.at("projector_in");
  m.projector.hidden_dim = d.at("projector_hidden");
  m.projector.out_dim = d.at("projector_out");
  m.projector.momentum = meta.at("projector").at("momentum");
  m.projector.eps = meta.at("projector").at("eps");
  m.encoder.base_dim = d.at("base_dim");
  m.encoder.cond_dim = d.at("cond_dim");
  m.encoder.hidden_dim = d.at("encoder_hidden");
  m.encoder.out_dim = d.at("out_dim");
  const auto& km = meta.at("kmeans");
  m.kmeans.k = km.at("k");
  m.kmeans.max_iters = km.at("max_iters");
  m.kmeans.batch_size = km.at("batch_size");
  if (!km.at("assignment_dim").is_null()) m.kmeans.assignment_dim = km.at("assignment_dim").get<std::size_t>();
  m.kmeans.seed = km.at("seed");
  m.kmeans.tol = km.at("tol");
  m.zero_conditioning = meta.at("zero_conditioning");
  const bool has_wc = d.at("store_dim").get<std::size_t>() != 0;
  if (has_wc) m.encoder.Wc = Tensor(1, 1);  // marks presence for for_each_param
  if (m.encoder.hidden_dim == 0) {
    m.encoder.Wh = Tensor();
    m.encoder.bh = Tensor();
  }
  for_each_param(m, [&](const char* name, Tensor& t, bool) { t = read_tensor(dir / (std::string(name) + ".lrke")); });
  m.projector.running_mean = read_tensor(dir / "running_mean.lrke");
  m.projector.running_var = read_tensor(dir / "running_var.lrke");
  m.encoder.validate();
  m.projector.validate();
  ck.optimizer.m1 = m;
  ck.optimizer.m2 = m;
  for_each_param(ck.optimizer.m1, [&](const char* name, Tensor& t, bool) { t = read_tensor(dir / ("adam_m." + std::string(name) + ".lrke")); });
  for_each_param(ck.optimizer.m2, [&](const char* name, Tensor& t, bool) { t = read_tensor(dir / ("adam_v." + std::string(name) + ".lrke")); });
  ck.optimizer.step = meta.at("step");
  ck.log = read_loss_csv(dir / "loss.csv");
  return ck;
}

}  // namespace poolrank
