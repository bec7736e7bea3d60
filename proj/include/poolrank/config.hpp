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

// Experiment configuration: a flat key/value file with TOML-style sections.
//
//   seed = 7
//   [train]
//   epochs = 15          # comments run to end of line
//   [tts]
//   widths = [0, 1, 2]
//   [paths]
//   output = "runs/demo"
//
// Keys are addressed as "section.key" ("seed" for the root section). Every
// known key is listed in config_schema() together with its default; the CLI
// exposes each one as --section.key.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "poolrank/common.hpp"

namespace poolrank {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "0", "root seed; every stochastic component derives a named sub-stream"},
      {"paths.store", "", "candidate store (.lrke); empty => generated under output/data"},
      {"paths.dataset", "", "dataset JSONL; empty => generated under output/data"},
      {"paths.checkpoint", "", "checkpoint directory to load instead of training"},
      {"paths.output", "poolrank-out", "report directory"},
      {"data.generator", "planted-linear", "planted-linear | pool-dependent (used when paths are empty)"},
      {"data.n_candidates", "1000", "generated candidate count"},
      {"data.n_queries", "250", "generated query count"},
      {"data.dim", "32", "generated embedding dimension"},
      {"data.noise", "0.3", "planted-linear query noise (relative to unit signal)"},
      {"data.pool_size", "100", "pool-dependent per-query pool size"},
      {"data.negatives", "31", "negatives listed per generated query"},
      {"model.k", "4", "clusters per aggregate"},
      {"model.assignment_dim", "0", "prefix dim for cluster assignment (0 => full dim)"},
      {"model.kmeans_batch", "1024", "mini-batch size for K-means"},
      {"model.kmeans_iters", "100", "K-means iteration cap"},
      {"model.projector_hidden", "0", "projector hidden width (0 => store dim)"},
      {"model.cond_dim", "0", "conditioning width (0 => store dim)"},
      {"model.encoder_hidden", "-1", "encoder hidden width (-1 => out dim, 0 => linear)"},
      {"model.init_scale", "0.1", "uniform init bound multiplier"},
      {"model.warm_start", "true", "initialize the encoder to pass query features through"},
      {"model.zero_conditioning", "false", "ablation: feed zeros instead of the conditioning vector"},
      {"train.epochs", "15", "training epochs (0 => evaluate the initial model)"},
      {"train.lr", "1e-4", "peak learning rate"},
      {"train.temperature", "0.15", "InfoNCE temperature"},
      {"train.batch_size", "20", "queries per step"},
      {"train.num_splits", "10", "random pool splits per query"},
      {"train.negatives_per_query", "0", "negatives sampled per step (0 => all listed)"},
      {"train.grad_clip_norm", "0.5", "global gradient norm clip"},
      {"train.warmup_fraction", "0.1", "linear warm-up fraction before cosine decay"},
      {"train.weight_decay", "0.01", "AdamW decoupled weight decay"},
      {"tts.widths", "[0]", "widths to sweep"},
      {"tts.depths", "[0]", "depths to sweep"},
      {"tts.retention", "0.5", "fraction of each partition kept per round"},
      {"encoder.mode", "reference", "reference | remote"},
      {"encoder.host", "127.0.0.1", "remote service host"},
      {"encoder.port", "8089", "remote service port"},
      {"encoder.b64", "false", "send/receive b64f32 payloads"},
      {"encoder.timeout_ms", "30000", "remote request timeout"},
      {"report.top_k", "100", "ranking entries persisted per query"},
  };
  return keys;
}

class Config {
 public:
  Config() {
    for (const auto& k : config_schema()) values_[k.name] = k.default_value;
  }

  static Config from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str(), path.string());
  }

  static Config from_string(const std::string& text, const std::string& origin = "<string>") {
    Config c;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = strip_comment(line);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[' && line.back() == ']' && line.find('=') == std::string::npos) {
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string full = section.empty() ? key : section + "." + key;
      c.set(full, unquote(trim(line.substr(eq + 1))));
    }
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("unknown config key: " + key);
    values_[key] = value;
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a number, got '" + s + "'");
    }
  }

  std::int64_t integer(const std::string& key) const {
    const auto& s = str(key);
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ConfigError(key + ": expected an integer, got '" + s + "'");
    }
    return v;
  }

  std::size_t count(const std::string& key) const {
    const auto v = integer(key);
    if (v < 0) throw ConfigError(key + ": must be >= 0");
    return static_cast<std::size_t>(v);
  }

  std::uint64_t u64(const std::string& key) const {
    const auto& s = str(key);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ConfigError(key + ": expected an unsigned integer, got '" + s + "'");
    }
    return v;
  }

  bool boolean(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(key + ": expected true/false, got '" + s + "'");
  }

  std::vector<std::size_t> count_list(const std::string& key) const {
    std::string s = trim(str(key));
    if (!s.empty() && s.front() == '[') s = s.substr(1);
    if (!s.empty() && s.back() == ']') s.pop_back();
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      std::size_t v = 0;
      auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || p != item.data() + item.size()) {
        throw ConfigError(key + ": bad list element '" + item + "'");
      }
      out.push_back(v);
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  // Canonical text form (sorted keys); hashing it identifies the config.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }
  static std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace poolrank
