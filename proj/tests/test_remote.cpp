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

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "poolrank/remote.hpp"
#include "poolrank/stub_server.hpp"
#include "test_util.hpp"

namespace poolrank {
namespace {

using namespace std::chrono_literals;

RemoteClientConfig client_for(int port, std::size_t out_dim) {
  RemoteClientConfig c;
  c.port = port;
  c.out_dim = out_dim;
  c.backoff = 5ms;
  c.timeout = 5000ms;
  return c;
}

TEST(Base64, KnownVectors) {
  EXPECT_EQ(base64_encode(""), "");
  EXPECT_EQ(base64_encode("M"), "TQ==");
  EXPECT_EQ(base64_encode("Ma"), "TWE=");
  EXPECT_EQ(base64_encode("Man"), "TWFu");
  EXPECT_EQ(base64_decode("TWFu"), "Man");
  EXPECT_EQ(base64_decode("TWE="), "Ma");
  EXPECT_EQ(base64_decode("TQ=="), "M");
}

TEST(Base64, FloatRoundTrip) {
  const std::vector<double> v{0.0, -1.5, 3.25, std::ldexp(1.0, -100), 65504.0};
  EXPECT_EQ(decode_f32_b64(encode_f32_b64(v)), v);
  EXPECT_TRUE(decode_f32_b64(encode_f32_b64(std::vector<double>{})).empty());
}

TEST(RemoteClient, FixedVectorPassesThrough) {
  StubOptions o;
  o.hidden_size = 4;
  o.fixed = std::vector<double>{0.5, -0.25, 1.0, 2.0};
  StubServer stub(o);
  RemoteClient client(client_for(stub.start(), 4));
  const std::vector<double> cond{1, 2, 3, 4};
  const auto e = client.embed_query("anything", cond);
  EXPECT_EQ(e.values, *o.fixed);
  EXPECT_EQ(e.provenance, Provenance::kRemote);
}

TEST(RemoteClient, StubAddsConditioningToFeatures) {
  StubOptions o;
  o.hidden_size = 8;
  StubServer stub(o);
  const int port = stub.start();
  const std::vector<double> cond{0.5, 0, 0, 0, 0, 0, 0, -1};
  auto expect = featurize_text("hello", 8).values;
  for (std::size_t i = 0; i < 8; ++i) expect[i] += cond[i];
  RemoteClient json_client(client_for(port, 8));
  const auto a = json_client.embed_query("hello", cond).values;
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(a[i], expect[i], 1e-12);

  auto cfg = client_for(port, 8);
  cfg.b64 = true;
  RemoteClient b64_client(cfg);
  const auto b = b64_client.embed_query("hello", cond).values;
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(b[i], static_cast<double>(static_cast<float>(expect[i])));

  EXPECT_EQ(json_client.embed_candidate("hello"), featurize_text("hello", 8).values);
}

TEST(RemoteClient, HealthAndDimensionCheck) {
  StubOptions o;
  o.hidden_size = 6;
  o.model_id = "tiny";
  StubServer stub(o);
  const int port = stub.start();
  RemoteClient ok(client_for(port, 6));
  EXPECT_EQ(ok.health()["model_id"], "tiny");
  EXPECT_NO_THROW(ok.check_dims());
  RemoteClient wrong(client_for(port, 8));
  try {
    wrong.check_dims();
    FAIL() << "expected RemoteDimensionError";
  } catch (const RemoteDimensionError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("expected 8"), std::string::npos) << m;
    EXPECT_NE(m.find("6"), std::string::npos) << m;
  }
}

TEST(RemoteClient, WrongReplySizeIsDimensionError) {
  StubOptions o;
  o.hidden_size = 4;
  o.reply_dim_override = 3;
  StubServer stub(o);
  RemoteClient client(client_for(stub.start(), 4));
  try {
    client.embed_query("q", std::vector<double>(4, 0.0));
    FAIL() << "expected RemoteDimensionError";
  } catch (const RemoteDimensionError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("expected 4"), std::string::npos) << m;
    EXPECT_NE(m.find("got 3"), std::string::npos) << m;
  }
}

TEST(RemoteClient, RetriesAfterServiceUnavailable) {
  StubOptions o;
  o.hidden_size = 4;
  o.fail_first = 2;
  StubServer stub(o);
  RemoteClient client(client_for(stub.start(), 4));
  EXPECT_NO_THROW(client.embed_query("q", std::vector<double>(4, 0.0)));
  EXPECT_EQ(stub.requests(), 3);

  StubOptions always;
  always.hidden_size = 4;
  always.fail_first = 100;
  StubServer down(always);
  RemoteClient failing(client_for(down.start(), 4));
  EXPECT_THROW(failing.embed_query("q", std::vector<double>(4, 0.0)), RemoteConnectionError);
  EXPECT_EQ(down.requests(), 3);
}

TEST(RemoteClient, ServiceDownIsConnectionError) {
  int port = 0;
  {
    StubServer s(StubOptions{});
    port = s.start();
  }
  RemoteClient client(client_for(port, 4));
  try {
    client.embed_query("q", std::vector<double>(4, 0.0));
    FAIL() << "expected RemoteConnectionError";
  } catch (const RemoteConnectionError& e) {
    EXPECT_NE(std::string(e.what()).find("3 attempts"), std::string::npos) << e.what();
  }
}

TEST(RemoteClient, SlowServiceTimesOut) {
  StubOptions o;
  o.hidden_size = 4;
  o.delay = 500ms;
  StubServer stub(o);
  auto cfg = client_for(stub.start(), 4);
  cfg.timeout = 50ms;
  cfg.attempts = 1;
  RemoteClient client(cfg);
  EXPECT_THROW(client.embed_query("q", std::vector<double>(4, 0.0)), RemoteTimeoutError);
}

TEST(RemoteClient, ClientErrorsAreNotRetried) {
  StubOptions o;
  o.hidden_size = 4;
  StubServer stub(o);
  RemoteClient client(client_for(stub.start(), 4));
  // Conditioning length does not match the service width: HTTP 400.
  EXPECT_THROW(client.embed_query("q", std::vector<double>(3, 0.0)), MalformedResponseError);
  EXPECT_EQ(stub.requests(), 1);
}

TEST(ParseEmbedding, RejectsMalformedBodies) {
  EXPECT_THROW(parse_embedding(nlohmann::json::object()), MalformedResponseError);
  EXPECT_THROW(parse_embedding(nlohmann::json{{"embedding", "x"}}), MalformedResponseError);
  EXPECT_THROW(parse_embedding(nlohmann::json{{"embedding", {1, "a"}}}), MalformedResponseError);
  EXPECT_EQ(parse_embedding(nlohmann::json{{"embedding", {1.5, 2}}}), (std::vector<double>{1.5, 2}));
}

TEST(RemoteEncoder, ConditionsOnSubsetThroughService) {
  const auto store = testing::random_matrix(40, 4, 3);
  KMeansConfig k;
  k.k = 2;
  const auto proj = ProjectorParams::init(8, 4, 4, 1);
  StubOptions o;
  o.hidden_size = 4;
  StubServer stub(o);
  RemoteEncoder enc(store, k, proj, client_for(stub.start(), 4));
  const QueryInput q{"q1", "cheap flights", {}};
  const std::vector<std::size_t> a{0, 1, 2, 3, 4, 5, 6, 7}, b{20, 21, 22, 23, 24, 25};
  const auto ea = enc.encode(q, a).values;
  const auto eb = enc.encode(q, b).values;
  EXPECT_NE(ea, eb);
  const auto cond = build_conditioning(a, store, k, proj);
  const auto direct = encode_query_remote("cheap flights", cond, client_for(stub.port(), 4)).values;
  EXPECT_EQ(ea, direct);
  EXPECT_EQ(enc.out_dim(), 4u);
  EXPECT_THROW(enc.encode(QueryInput{"q2", "", {1, 2, 3, 4}}, a), DataError);
}

}  // namespace
}  // namespace poolrank
