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

// Client for the embedding service wire protocol.
//
//   POST /embed_query
//     {"request_id": str, "task": str, "query_text": str,
//      "conditioning": [double...]                        (encoding "json")
//      | "conditioning": "<base64 f32 LE>", "encoding": "b64f32"}
//   -> {"request_id": str, "embedding": [...] | "<base64>", "encoding"?,
//       "token_count": int, "model_id": str}
//   POST /embed_candidate {"request_id", "text"} -> same response shape
//   GET  /health -> {"status": "ok", "model_id": str, "hidden_size": int}

#include <chrono>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "poolrank/aggregator.hpp"
#include "poolrank/common.hpp"
#include "poolrank/encoder.hpp"

namespace poolrank {

// --- base64 of little-endian f32 arrays -------------------------------------

inline std::string base64_encode(std::string_view bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (static_cast<std::uint8_t>(bytes[i]) << 16) |
                            (static_cast<std::uint8_t>(bytes[i + 1]) << 8) |
                            static_cast<std::uint8_t>(bytes[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = static_cast<std::uint8_t>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= static_cast<std::uint8_t>(bytes[i + 1]) << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::string base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw MalformedResponseError("base64 length not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        v[k] = value(c);
        if (v[k] < 0 || pad > 0) throw MalformedResponseError("invalid base64 payload");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out += static_cast<char>((w >> 16) & 0xff);
    if (pad < 2) out += static_cast<char>((w >> 8) & 0xff);
    if (pad < 1) out += static_cast<char>(w & 0xff);
  }
  return out;
}

inline std::string encode_f32_b64(std::span<const double> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(bytes.data() + 4 * i, &f, 4);
  }
  return base64_encode(bytes);
}

inline std::vector<double> decode_f32_b64(std::string_view text) {
  const std::string bytes = base64_decode(text);
  if (bytes.size() % 4 != 0) throw MalformedResponseError("b64f32 payload not a multiple of 4 bytes");
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + 4 * i, 4);
    out[i] = f;
  }
  return out;
}

// --- client -------------------------------------------------------------------

struct RemoteClientConfig {
  std::string host = "127.0.0.1";
  int port = 8089;
  std::size_t out_dim = 0;  // 0 => accept whatever the service returns
  int attempts = 3;
  std::chrono::milliseconds backoff{100};
  std::chrono::milliseconds timeout{30000};
  std::string task = "passage_ranking";
  bool b64 = false;
};

inline std::vector<double> parse_embedding(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("embedding")) {
    throw MalformedResponseError("response has no embedding field");
  }
  const auto& e = body.at("embedding");
  std::vector<double> v;
  if (body.value("encoding", std::string("json")) == "b64f32") {
    if (!e.is_string()) throw MalformedResponseError("b64f32 embedding must be a string");
    v = decode_f32_b64(e.get<std::string>());
  } else {
    if (!e.is_array()) throw MalformedResponseError("embedding must be an array");
    v.reserve(e.size());
    for (const auto& x : e) {
      if (!x.is_number()) throw MalformedResponseError("embedding contains a non-number");
      v.push_back(x.get<double>());
    }
  }
  if (!all_finite(v)) throw MalformedResponseError("embedding contains non-finite values");
  return v;
}

class RemoteClient {
 public:
  explicit RemoteClient(RemoteClientConfig cfg) : cfg_(std::move(cfg)) {}

  const RemoteClientConfig& config() const { return cfg_; }

  nlohmann::json health() { return call("GET", "/health", nlohmann::json()); }

  // Fails with RemoteDimensionError if the service hidden size != out_dim.
  void check_dims() {
    const auto h = health();
    if (!h.contains("hidden_size") || !h.at("hidden_size").is_number_integer()) {
      throw MalformedResponseError("health response lacks hidden_size");
    }
    const auto hs = h.at("hidden_size").get<std::size_t>();
    if (cfg_.out_dim != 0 && hs != cfg_.out_dim) {
      throw RemoteDimensionError("dimension mismatch: expected " + std::to_string(cfg_.out_dim) +
                                 ", service hidden_size " + std::to_string(hs));
    }
  }

  QueryEmbedding embed_query(std::string_view query_text, std::span<const double> conditioning) {
    nlohmann::json req;
    req["request_id"] = "q" + std::to_string(++counter_);
    req["task"] = cfg_.task;
    req["query_text"] = std::string(query_text);
    if (cfg_.b64) {
      req["encoding"] = "b64f32";
      req["conditioning"] = encode_f32_b64(conditioning);
    } else {
      req["conditioning"] = std::vector<double>(conditioning.begin(), conditioning.end());
    }
    const auto body = call("POST", "/embed_query", req);
    QueryEmbedding e;
    e.values = parse_embedding(body);
    e.provenance = Provenance::kRemote;
    if (cfg_.out_dim != 0 && e.values.size() != cfg_.out_dim) {
      throw RemoteDimensionError("dimension mismatch: expected " + std::to_string(cfg_.out_dim) +
                                 ", got " + std::to_string(e.values.size()));
    }
    return e;
  }

  std::vector<double> embed_candidate(std::string_view text) {
    nlohmann::json req{{"request_id", "c" + std::to_string(++counter_)}, {"text", std::string(text)}};
    return parse_embedding(call("POST", "/embed_candidate", req));
  }

 private:
  nlohmann::json call(const std::string& method, const std::string& path, const nlohmann::json& req) {
    std::string last_error;
    bool timed_out = false;
    for (int attempt = 0; attempt < std::max(1, cfg_.attempts); ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(cfg_.backoff * (1 << (attempt - 1)));
      httplib::Client cli(cfg_.host, cfg_.port);
      const auto secs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout);
      cli.set_connection_timeout(secs);
      cli.set_read_timeout(secs);
      cli.set_write_timeout(secs);
      httplib::Result res = method == "GET"
                                ? cli.Get(path)
                                : cli.Post(path, req.dump(), "application/json");
      if (!res) {
        const auto err = res.error();
        timed_out = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout;
        last_error = httplib::to_string(err);
        continue;
      }
      if (res->status >= 500) {
        timed_out = false;
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw MalformedResponseError(path + ": HTTP " + std::to_string(res->status) + ": " + res->body);
      }
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw MalformedResponseError(path + ": invalid JSON: " + e.what());
      }
    }
    const std::string where = cfg_.host + ":" + std::to_string(cfg_.port) + path;
    if (timed_out) throw RemoteTimeoutError("timeout talking to " + where + " (" + last_error + ")");
    throw RemoteConnectionError("cannot reach " + where + " after " + std::to_string(cfg_.attempts) +
                                " attempts (" + last_error + ")");
  }

  RemoteClientConfig cfg_;
  std::uint64_t counter_ = 0;
};

inline QueryEmbedding encode_query_remote(std::string_view query_text, const ConditioningVector& cond,
                                          const RemoteClientConfig& cfg) {
  RemoteClient client(cfg);
  return client.embed_query(query_text, cond.values);
}

// Aggregator in eval mode, then the remote service.
class RemoteEncoder : public ConditionedEncoder {
 public:
  RemoteEncoder(const EmbeddingMatrix& store, KMeansConfig kmeans, const ProjectorParams& projector,
                RemoteClientConfig cfg)
      : store_(&store), kmeans_(kmeans), projector_(&projector), client_(std::move(cfg)) {}

  QueryEmbedding encode(const QueryInput& query, std::span<const std::size_t> subset) override {
    if (query.text.empty()) throw DataError("remote encoding needs query text (" + query.query_id + ")");
    const auto cond = build_conditioning(subset, *store_, kmeans_, *projector_, Mode::kEval);
    return client_.embed_query(query.text, cond.values);
  }

  std::size_t out_dim() const override { return client_.config().out_dim; }
  RemoteClient& client() { return client_; }

 private:
  const EmbeddingMatrix* store_;
  KMeansConfig kmeans_;
  const ProjectorParams* projector_;
  RemoteClient client_;
};

}  // namespace poolrank
