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

#include <set>
#include <stdexcept>
#include <vector>

#include "poolrank/common.hpp"

namespace poolrank {
namespace {

TEST(Fnv1a64, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("abc"), 0xe71fa2190541574bULL);
  EXPECT_EQ(fnv1a64("abcd"), 0xfc179f83ee0724ddULL);
}

TEST(DeriveSeed, StreamsAreDistinctAndStable) {
  EXPECT_EQ(derive_seed(7, "kmeans"), derive_seed(7, "kmeans"));
  EXPECT_NE(derive_seed(7, "kmeans"), derive_seed(7, "splits"));
  EXPECT_NE(derive_seed(7, "kmeans"), derive_seed(8, "kmeans"));
  EXPECT_NE(derive_seed(7, "round", 1), derive_seed(7, "round", 2));
  static_assert(derive_seed(1, "x") == derive_seed(1, "x"));
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next(), b.next());
  }
  Rng c(42), d(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(c.normal(), d.normal());
  }
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  Rng rng(3);
  std::set<std::size_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, UniformMomentsAreSane) {
  Rng rng(11);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng rng(5);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  rng.shuffle(v);
  std::multiset<int> s(v.begin(), v.end());
  EXPECT_EQ(s, (std::multiset<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST(ExitCodes, MapByFamily) {
  EXPECT_EQ(exit_code_for(ConfigError("x")), kExitConfig);
  EXPECT_EQ(exit_code_for(DataError("x")), kExitData);
  EXPECT_EQ(exit_code_for(DimensionError("x")), kExitData);
  EXPECT_EQ(exit_code_for(NumericError("x")), kExitNumeric);
  EXPECT_EQ(exit_code_for(RemoteConnectionError("x")), kExitRemote);
  EXPECT_EQ(exit_code_for(RemoteTimeoutError("x")), kExitRemote);
  EXPECT_EQ(exit_code_for(MalformedResponseError("x")), kExitRemote);
  EXPECT_EQ(exit_code_for(RemoteDimensionError("x")), kExitRemote);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), kExitData);
}

TEST(RethrowWithPrefix, KeepsFamilyAndPrependsPrefix) {
  auto wrap = [](auto thrower) {
    try {
      thrower();
    } catch (const std::exception&) {
      rethrow_with_prefix("phase x: ");
    }
  };
  try {
    wrap([] { throw RemoteTimeoutError("slow"); });
    FAIL();
  } catch (const RemoteTimeoutError& e) {
    EXPECT_STREQ(e.what(), "phase x: slow");
  }
  try {
    wrap([] { throw NumericError("nan"); });
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_STREQ(e.what(), "phase x: nan");
  }
  try {
    wrap([] { throw ConfigError("bad"); });
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_STREQ(e.what(), "phase x: bad");
  }
  try {
    wrap([] { throw DimensionError("dim"); });
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_STREQ(e.what(), "phase x: dim");
  }
  try {
    wrap([] { throw std::out_of_range("oops"); });
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "phase x: oops");
  }
}

TEST(Tensor, MatvecAndTranspose) {
  Tensor a(2, 3);
  a.data = {1, 2, 3, 4, 5, 6};
  std::vector<double> x{1, 0, -1}, y(2);
  matvec(a, x, y);
  EXPECT_EQ(y, (std::vector<double>{-2, -2}));
  std::vector<double> u{1, 1}, z(3);
  matvec_transposed(a, u, z);
  EXPECT_EQ(z, (std::vector<double>{5, 7, 9}));
  Tensor g(2, 3);
  add_outer(g, u, x);
  EXPECT_EQ(g.data, (std::vector<double>{1, 0, -1, 1, 0, -1}));
}

TEST(ParallelFor, CoversRangeExactlyOnce) {
  std::vector<int> hits(100000, 0);
  parallel_for(hits.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) ++hits[i];
  }, 1000);
  for (int h : hits) ASSERT_EQ(h, 1);
}

}  // namespace
}  // namespace poolrank
