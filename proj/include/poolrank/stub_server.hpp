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

// In-process test double for the embedding service. Speaks the same wire
// protocol as remote.hpp expects.
//
// Embedding for /embed_query: featurize_text(query_text, hidden) +
// conditioning, or a fixed vector when one is configured.

#include <atomic>
#include <chrono>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "poolrank/encoder.hpp"
#include "poolrank/remote.hpp"

namespace poolrank {

struct StubOptions {
  std::size_t hidden_size = 16;
  std::string model_id = "stub";
  std::optional<std::vector<double>> fixed;  // returned verbatim
  std::size_t reply_dim_override = 0;        // != 0 => wrong-size replies
  int fail_first = 0;                        // first N requests answer 503
  std::chrono::milliseconds delay{0};
};

class StubServer {
 public:
  explicit StubServer(StubOptions opt) : opt_(std::move(opt)) {
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json j{{"status", "ok"}, {"model_id", opt_.model_id}, {"hidden_size", opt_.hidden_size}};
      res.set_content(j.dump(), "application/json");
    });
    server_.Post("/embed_query", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, true);
    });
    server_.Post("/embed_candidate", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, false);
    });
  }

  ~StubServer() { stop(); }
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  // Binds (port 0 => ephemeral) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw RemoteConnectionError("stub: cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Serves on the calling thread until stop().
  void serve_forever(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw RemoteConnectionError("stub: cannot listen on port " + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  int requests() const { return requests_.load(); }

 private:
  void handle(const httplib::Request& req, httplib::Response& res, bool query) {
    const int n = ++requests_;
    if (opt_.delay.count() > 0) std::this_thread::sleep_for(opt_.delay);
    if (n <= opt_.fail_first) {
      res.status = 503;
      res.set_content("{\"error\":\"warming up\"}", "application/json");
      return;
    }
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      res.status = 400;
      res.set_content("{\"error\":\"invalid json\"}", "application/json");
      return;
    }
    std::vector<double> embedding;
    std::string text = query ? body.value("query_text", std::string()) : body.value("text", std::string());
    if (opt_.fixed) {
      embedding = *opt_.fixed;
    } else {
      embedding = featurize_text(text, opt_.hidden_size).values;
      if (query) {
        std::vector<double> cond;
        try {
          cond = parse_conditioning(body);
        } catch (const Error& e) {
          res.status = 400;
          res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
          return;
        }
        if (cond.size() != opt_.hidden_size) {
          res.status = 400;
          res.set_content(nlohmann::json{{"error", "conditioning length " + std::to_string(cond.size()) +
                                                       " != hidden size " + std::to_string(opt_.hidden_size)}}
                              .dump(),
                          "application/json");
          return;
        }
        for (std::size_t i = 0; i < cond.size(); ++i) embedding[i] += cond[i];
      }
    }
    if (opt_.reply_dim_override != 0) embedding.resize(opt_.reply_dim_override, 0.0);
    nlohmann::json out{{"request_id", body.value("request_id", std::string())},
                       {"token_count", text.size()},
                       {"model_id", opt_.model_id}};
    if (body.value("encoding", std::string("json")) == "b64f32") {
      out["encoding"] = "b64f32";
      out["embedding"] = encode_f32_b64(embedding);
    } else {
      out["embedding"] = embedding;
    }
    res.set_content(out.dump(), "application/json");
  }

  static std::vector<double> parse_conditioning(const nlohmann::json& body) {
    if (!body.contains("conditioning")) return {};
    const auto& c = body.at("conditioning");
    if (body.value("encoding", std::string("json")) == "b64f32") return decode_f32_b64(c.get<std::string>());
    return c.get<std::vector<double>>();
  }

  StubOptions opt_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<int> requests_{0};
};

}  // namespace poolrank
