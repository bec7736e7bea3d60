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

// Query encoders conditioned on an aggregated candidate vector.
//
// The reference encoder is a small MLP over [query features ; conditioning]
// with an optional linear map on the candidate side. It is pure, so tests
// can differentiate it exactly; the remote encoder (remote.hpp) delegates
// the same contract to an HTTP service.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poolrank/aggregator.hpp"
#include "poolrank/common.hpp"
#include "poolrank/embed_store.hpp"

namespace poolrank {

// ---------------------------------------------------------------------------
// Text featurizer
//
// Hashed bag of byte trigrams. For every trigram t (sliding window over the
// UTF-8 bytes; strings of 1-2 bytes form a single gram):
//   bucket(t) = FNV-1a-64(t) mod base_dim
//              (offset basis 0xcbf29ce484222325, prime 0x100000001b3)
//   sign(t)   = +1 if the top bit of FNV-1a-64("#" + t) is 0, else -1
// Contributions are summed and the vector is L2-normalized.

inline std::uint64_t trigram_bucket_hash(std::string_view gram) { return fnv1a64(gram); }

inline double trigram_sign(std::string_view gram) {
  std::string salted;
  salted.reserve(gram.size() + 1);
  salted.push_back('#');
  salted.append(gram);
  return (fnv1a64(salted) >> 63) == 0 ? 1.0 : -1.0;
}

struct QueryFeatures {
  std::vector<double> values;
};

inline QueryFeatures featurize_text(std::string_view text, std::size_t base_dim) {
  if (base_dim == 0) throw ConfigError("featurize_text: base_dim must be >= 1");
  QueryFeatures f;
  f.values.assign(base_dim, 0.0);
  if (text.empty()) return f;
  auto add = [&](std::string_view gram) {
    f.values[trigram_bucket_hash(gram) % base_dim] += trigram_sign(gram);
  };
  if (text.size() < 3) {
    add(text);
  } else {
    for (std::size_t i = 0; i + 3 <= text.size(); ++i) add(text.substr(i, 3));
  }
  double norm = 0.0;
  for (double v : f.values) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (double& v : f.values) v /= norm;
  return f;
}

// ---------------------------------------------------------------------------
// Reference encoder

struct RefEncoderParams {
  std::size_t base_dim = 0;
  std::size_t cond_dim = 0;
  std::size_t hidden_dim = 0;  // 0 => depth 0 (single linear layer)
  std::size_t out_dim = 0;
  Tensor Wh;  // hidden x (base + cond)
  Tensor bh;
  Tensor Wq;  // out x (hidden or base + cond)
  Tensor bq;
  Tensor Wc;  // out x store_dim; empty => identity candidate side

  std::size_t input_dim() const { return base_dim + cond_dim; }
  bool has_hidden() const { return hidden_dim > 0; }
  bool has_candidate_map() const { return !Wc.empty(); }

  struct InitOptions {
    std::size_t store_dim = 0;  // Wc created when != out_dim
    std::uint64_t seed = 0;
    double scale = 1.0;  // uniform bound is scale / sqrt(fan_in)
    // Start from a map that passes the query features through unchanged
    // (requires out_dim == base_dim and hidden_dim >= base_dim when deep).
    bool warm_start = true;
    double warm_shift = 1.0;
  };

  static RefEncoderParams init(std::size_t base_dim, std::size_t cond_dim,
                               std::size_t hidden_dim, std::size_t out_dim,
                               const InitOptions& opt) {
    RefEncoderParams p;
    p.base_dim = base_dim;
    p.cond_dim = cond_dim;
    p.hidden_dim = hidden_dim;
    p.out_dim = out_dim;
    Rng rng(opt.seed);
    auto fill = [&](Tensor& t) {
      const double bound = opt.scale / std::sqrt(static_cast<double>(std::max<std::size_t>(1, t.cols)));
      for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * bound;
    };
    const std::size_t in = base_dim + cond_dim;
    if (hidden_dim > 0) {
      p.Wh = Tensor(hidden_dim, in);
      fill(p.Wh);
      p.bh = Tensor::vector(hidden_dim);
      p.Wq = Tensor(out_dim, hidden_dim);
    } else {
      p.Wq = Tensor(out_dim, in);
    }
    fill(p.Wq);
    p.bq = Tensor::vector(out_dim);
    if (opt.store_dim != 0 && opt.store_dim != out_dim) {
      p.Wc = Tensor(out_dim, opt.store_dim);
      fill(p.Wc);
    }
    if (opt.warm_start && out_dim == base_dim) {
      if (hidden_dim == 0) {
        for (std::size_t i = 0; i < base_dim; ++i)
          for (std::size_t j = 0; j < base_dim; ++j) p.Wq(i, j) = i == j ? 1.0 : 0.0;
      } else if (hidden_dim >= base_dim) {
        // relu(q + shift) - shift == q while q > -shift.
        for (std::size_t i = 0; i < base_dim; ++i) {
          for (std::size_t j = 0; j < base_dim; ++j) p.Wh(i, j) = i == j ? 1.0 : 0.0;
          p.bh[i] = opt.warm_shift;
        }
        for (std::size_t i = 0; i < out_dim; ++i) {
          for (std::size_t j = 0; j < hidden_dim; ++j) p.Wq(i, j) = (i == j) ? 1.0 : 0.0;
          p.bq[i] = -opt.warm_shift;
        }
      }
    }
    return p;
  }

  void validate() const {
    auto need = [](const Tensor& t, std::size_t r, std::size_t c, const char* name) {
      if (t.rows != r || t.cols != c) {
        throw DimensionError(std::string("encoder ") + name + " has shape " +
                             std::to_string(t.rows) + "x" + std::to_string(t.cols) +
                             ", expected " + std::to_string(r) + "x" + std::to_string(c));
      }
    };
    if (has_hidden()) {
      need(Wh, hidden_dim, input_dim(), "Wh");
      need(bh, hidden_dim, 1, "bh");
      need(Wq, out_dim, hidden_dim, "Wq");
    } else {
      need(Wq, out_dim, input_dim(), "Wq");
    }
    need(bq, out_dim, 1, "bq");
    if (has_candidate_map() && Wc.rows != out_dim) {
      throw DimensionError("encoder Wc must have out_dim rows");
    }
  }

  friend bool operator==(const RefEncoderParams&, const RefEncoderParams&) = default;
};

enum class Provenance { kReference, kRemote, kMock };

struct QueryEmbedding {
  std::vector<double> values;
  Provenance provenance = Provenance::kReference;
  std::optional<std::size_t> subset_tag;
};

// Forward pass with intermediates (input, pre-activation, hidden, output).
struct EncoderForward {
  std::vector<double> input;
  std::vector<double> pre_relu;
  std::vector<double> hidden;
  std::vector<double> out;
};

inline EncoderForward encoder_forward(std::span<const double> q, std::span<const double> cond,
                                      const RefEncoderParams& p) {
  if (q.size() != p.base_dim) {
    throw DimensionError("query features length " + std::to_string(q.size()) +
                         " != base_dim " + std::to_string(p.base_dim));
  }
  if (cond.size() != p.cond_dim) {
    throw DimensionError("conditioning length " + std::to_string(cond.size()) +
                         " != cond_dim " + std::to_string(p.cond_dim));
  }
  EncoderForward f;
  f.input.reserve(p.input_dim());
  f.input.insert(f.input.end(), q.begin(), q.end());
  f.input.insert(f.input.end(), cond.begin(), cond.end());
  f.out.assign(p.out_dim, 0.0);
  if (p.has_hidden()) {
    f.pre_relu.assign(p.hidden_dim, 0.0);
    matvec(p.Wh, f.input, f.pre_relu);
    f.hidden.resize(p.hidden_dim);
    for (std::size_t j = 0; j < p.hidden_dim; ++j) {
      f.pre_relu[j] += p.bh[j];
      f.hidden[j] = f.pre_relu[j] > 0.0 ? f.pre_relu[j] : 0.0;
    }
    matvec(p.Wq, f.hidden, f.out);
  } else {
    matvec(p.Wq, f.input, f.out);
  }
  for (std::size_t j = 0; j < p.out_dim; ++j) f.out[j] += p.bq[j];
  return f;
}

inline QueryEmbedding encode_query_ref(const QueryFeatures& q, const ConditioningVector& cond,
                                       const RefEncoderParams& params) {
  QueryEmbedding e;
  e.values = encoder_forward(q.values, cond.values, params).out;
  if (!all_finite(e.values)) throw NumericError("non-finite query embedding");
  e.provenance = Provenance::kReference;
  return e;
}

// h_c for one store row in double precision.
inline std::vector<double> candidate_embedding(const EmbeddingMatrix& store, std::size_t row,
                                               const RefEncoderParams& p) {
  const auto e = store.row(row);
  std::vector<double> x(e.begin(), e.end());
  if (!p.has_candidate_map()) {
    if (store.dim() != p.out_dim) {
      throw DimensionError("candidate dim " + std::to_string(store.dim()) +
                           " != out_dim " + std::to_string(p.out_dim) + " and no Wc");
    }
    return x;
  }
  if (p.Wc.cols != store.dim()) {
    throw DimensionError("Wc expects dim " + std::to_string(p.Wc.cols) + ", store has " +
                         std::to_string(store.dim()));
  }
  std::vector<double> out(p.out_dim);
  matvec(p.Wc, x, out);
  return out;
}

// Candidate tower over the whole store, stored as binary32 for scoring.
inline EmbeddingMatrix encode_candidates_ref(const EmbeddingMatrix& store,
                                             const RefEncoderParams& params) {
  if (!params.has_candidate_map()) {
    if (store.dim() != params.out_dim) {
      throw DimensionError("candidate dim " + std::to_string(store.dim()) +
                           " != out_dim " + std::to_string(params.out_dim) + " and no Wc");
    }
    return store;
  }
  std::vector<float> v(store.count() * params.out_dim);
  parallel_for(store.count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const auto h = candidate_embedding(store, r, params);
      for (std::size_t j = 0; j < params.out_dim; ++j) v[r * params.out_dim + j] = static_cast<float>(h[j]);
    }
  }, 256);
  return EmbeddingMatrix(store.count(), params.out_dim, std::move(v), store.ids());
}

inline std::uint64_t tensor_hash(const Tensor& t) {
  std::uint64_t h = hash_combine(t.rows, t.cols);
  for (double v : t.data) h = hash_combine(h, std::bit_cast<std::uint64_t>(v));
  return h;
}

// Caches encode_candidates_ref; recomputes exactly when Wc (or the store
// shape) changes.
class CandidateCache {
 public:
  const EmbeddingMatrix& get(const EmbeddingMatrix& store, const RefEncoderParams& params) {
    const std::uint64_t key = hash_combine(
        hash_combine(tensor_hash(params.Wc), store.count()),
        hash_combine(store.dim(), reinterpret_cast<std::uintptr_t>(store.values().data())));
    if (!cached_ || key != key_) {
      cached_ = encode_candidates_ref(store, params);
      key_ = key;
      ++recomputations_;
    }
    return *cached_;
  }
  std::size_t recomputations() const { return recomputations_; }

 private:
  std::optional<EmbeddingMatrix> cached_;
  std::uint64_t key_ = 0;
  std::size_t recomputations_ = 0;
};

// ---------------------------------------------------------------------------
// Encoder abstraction used by ranking and test-time scaling: produce a query
// embedding conditioned on a subset of the candidate store.

struct QueryInput {
  std::string query_id;
  std::string text;
  std::vector<double> features;
};

class ConditionedEncoder {
 public:
  virtual ~ConditionedEncoder() = default;
  virtual QueryEmbedding encode(const QueryInput& query,
                                std::span<const std::size_t> subset) = 0;
  virtual std::size_t out_dim() const = 0;
};

// Aggregator (eval mode) followed by the reference encoder.
class ReferenceEncoder : public ConditionedEncoder {
 public:
  ReferenceEncoder(const EmbeddingMatrix& store, KMeansConfig kmeans,
                   const ProjectorParams& projector, const RefEncoderParams& encoder,
                   bool zero_conditioning = false)
      : store_(&store), kmeans_(kmeans), projector_(&projector), encoder_(&encoder),
        zero_conditioning_(zero_conditioning) {}

  QueryEmbedding encode(const QueryInput& query, std::span<const std::size_t> subset) override {
    ConditioningVector cond;
    if (zero_conditioning_) {
      cond.values.assign(encoder_->cond_dim, 0.0);
    } else if (encoder_->cond_dim > 0) {
      cond = build_conditioning(subset, *store_, kmeans_, *projector_, Mode::kEval);
    }
    return encode_query_ref(features_for(query), cond, *encoder_);
  }

  std::size_t out_dim() const override { return encoder_->out_dim; }

  QueryFeatures features_for(const QueryInput& query) const {
    if (!query.features.empty()) return QueryFeatures{query.features};
    return featurize_text(query.text, encoder_->base_dim);
  }

 private:
  const EmbeddingMatrix* store_;
  KMeansConfig kmeans_;
  const ProjectorParams* projector_;
  const RefEncoderParams* encoder_;
  bool zero_conditioning_;
};

}  // namespace poolrank
