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

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "poolrank/aggregator.hpp"
#include "test_util.hpp"

namespace poolrank {
namespace {

TEST(RandomPartition, FourIntoTwo) {
  const auto p = random_partition(4, 2, 1);
  ASSERT_EQ(p.subsets.size(), 2u);
  EXPECT_EQ(p.subsets[0].size(), 2u);
  EXPECT_EQ(p.subsets[1].size(), 2u);
  std::set<std::size_t> all;
  for (const auto& s : p.subsets) all.insert(s.begin(), s.end());
  EXPECT_EQ(all, (std::set<std::size_t>{0, 1, 2, 3}));
  EXPECT_TRUE(is_valid_partition(p));
}

TEST(RandomPartition, ClampsToN) {
  const auto p = random_partition(3, 5, 9);
  ASSERT_EQ(p.subsets.size(), 3u);
  for (const auto& s : p.subsets) EXPECT_EQ(s.size(), 1u);
  EXPECT_TRUE(is_valid_partition(p));
}

TEST(RandomPartition, SeedsGiveDifferentPartitions) {
  std::set<std::vector<std::vector<std::size_t>>> distinct;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto p = random_partition(10, 3, seed);
    // Compare as sets of sets so relabelled subsets count as equal.
    for (auto& s : p.subsets) std::sort(s.begin(), s.end());
    std::sort(p.subsets.begin(), p.subsets.end());
    distinct.insert(p.subsets);
  }
  EXPECT_GE(distinct.size(), 95u);
}

TEST(RandomPartition, LawsHoldForRandomShapes) {
  Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(60);
    const std::size_t m = 1 + rng.below(15);
    const auto p = random_partition(n, m, trial);
    EXPECT_EQ(p.subsets.size(), std::min(n, m));
    EXPECT_TRUE(is_valid_partition(p)) << n << " " << m;
    std::size_t lo = n, hi = 0;
    for (const auto& s : p.subsets) {
      lo = std::min(lo, s.size());
      hi = std::max(hi, s.size());
    }
    EXPECT_LE(hi - lo, 1u);
    EXPECT_EQ(p, random_partition(n, m, trial));
  }
  EXPECT_THROW(random_partition(0, 1, 0), ConfigError);
  EXPECT_THROW(random_partition(1, 0, 0), ConfigError);
}

TEST(Aggregate, SinglePoint) {
  const auto store = testing::random_matrix(5, 3, 1);
  KMeansConfig k;
  k.k = 1;
  const std::vector<std::size_t> subset{2};
  const auto g = aggregate(subset, store, k);
  ASSERT_EQ(g.values.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(g.values[j], static_cast<double>(store.row(2)[j]));
  EXPECT_EQ(g.k_used, 1u);
}

TEST(Aggregate, AntipodalMeanIsZero) {
  const auto store = EmbeddingMatrix::from_rows({{0.6, -0.8}, {-0.6, 0.8}});
  KMeansConfig k;
  k.k = 1;
  const std::vector<std::size_t> subset{0, 1};
  const auto g = aggregate(subset, store, k);
  EXPECT_EQ(g.values, (std::vector<double>{0.0, 0.0}));
}

TEST(Aggregate, PlantedClustersOrderedBySize) {
  Rng rng(31);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 3; ++i) rows.push_back({-4 + 0.1 * rng.normal(), 2 + 0.1 * rng.normal()});
  for (int i = 0; i < 5; ++i) rows.push_back({4 + 0.1 * rng.normal(), 1 + 0.1 * rng.normal()});
  const auto store = EmbeddingMatrix::from_rows(rows);
  KMeansConfig k;
  k.k = 2;
  const std::vector<std::size_t> subset{0, 1, 2, 3, 4, 5, 6, 7};
  const auto g = aggregate(subset, store, k);
  auto mean = [&](std::size_t b, std::size_t e, std::size_t j) {
    double s = 0;
    for (std::size_t i = b; i < e; ++i) s += store.row(i)[j];
    return s / static_cast<double>(e - b);
  };
  // Larger cluster (rows 3..7) first.
  ASSERT_EQ(g.values.size(), 4u);
  EXPECT_NEAR(g.values[0], mean(3, 8, 0), 1e-12);
  EXPECT_NEAR(g.values[1], mean(3, 8, 1), 1e-12);
  EXPECT_NEAR(g.values[2], mean(0, 3, 0), 1e-12);
  EXPECT_NEAR(g.values[3], mean(0, 3, 1), 1e-12);
}

TEST(Aggregate, EqualSizesOrderedLexicographically) {
  const auto store = EmbeddingMatrix::from_rows({{5, 0}, {5.2, 0}, {-5, 1}, {-5.2, 1}});
  KMeansConfig k;
  k.k = 2;
  const std::vector<std::size_t> subset{0, 1, 2, 3};
  const auto g = aggregate(subset, store, k);
  EXPECT_LT(g.values[0], 0.0);
  EXPECT_GT(g.values[2], 0.0);
}

TEST(Aggregate, ZeroPadsWhenSubsetSmallerThanK) {
  const auto store = testing::random_matrix(6, 3, 4);
  KMeansConfig k;
  k.k = 4;
  const std::vector<std::size_t> subset{1, 5};
  const auto g = aggregate(subset, store, k);
  EXPECT_EQ(g.k_used, 2u);
  ASSERT_EQ(g.values.size(), 12u);
  for (std::size_t j = 6; j < 12; ++j) EXPECT_EQ(g.values[j], 0.0);
  EXPECT_NE(g.values[0], 0.0);
}

TEST(Aggregate, FixedWidthForAnySubset) {
  const auto store = testing::random_matrix(40, 5, 8);
  KMeansConfig k;
  k.k = 3;
  Rng rng(1);
  for (int t = 0; t < 30; ++t) {
    std::vector<std::size_t> subset;
    const std::size_t n = 1 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i) subset.push_back(rng.below(40));
    std::sort(subset.begin(), subset.end());
    subset.erase(std::unique(subset.begin(), subset.end()), subset.end());
    EXPECT_EQ(aggregate(subset, store, k).values.size(), 15u);
  }
}

TEST(Aggregate, Errors) {
  const auto store = testing::random_matrix(3, 2, 1);
  KMeansConfig k;
  k.k = 1;
  EXPECT_THROW(aggregate({}, store, k), DataError);
  const std::vector<std::size_t> bad{7};
  EXPECT_THROW(aggregate(bad, store, k), DataError);
}

ProjectorParams identity_projector(std::size_t n) {
  ProjectorParams p;
  p.in_dim = p.hidden_dim = p.out_dim = n;
  p.W1 = Tensor::identity(n);
  p.b1 = Tensor::vector(n);
  p.norm_gain = Tensor::vector(n, 1.0);
  p.norm_bias = Tensor::vector(n);
  p.running_mean = Tensor::vector(n);
  p.running_var = Tensor::vector(n, 1.0);
  p.W2 = Tensor::identity(n);
  p.b2 = Tensor::vector(n);
  p.eps = 0.0;
  return p;
}

TEST(Project, IdentityPipelineAppliesRelu) {
  const auto p = identity_projector(2);
  const std::vector<double> g{1, -2};
  EXPECT_EQ(project(g, p).values, (std::vector<double>{1, 0}));
}

TEST(Project, ZeroInZeroOut) {
  Rng rng(3);
  auto p = ProjectorParams::init(4, 5, 3, 11);
  for (double& v : p.b1.data) v = 0;
  for (double& v : p.norm_bias.data) v = 0;
  for (double& v : p.b2.data) v = 0;
  const std::vector<double> g(4, 0.0);
  EXPECT_EQ(project(g, p).values, (std::vector<double>(3, 0.0)));
}

TEST(Project, MatchesStraightLineRecomputation) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = ProjectorParams::init(6, 4, 3, 100 + trial);
    for (double& v : p.b1.data) v = rng.normal();
    for (double& v : p.norm_gain.data) v = rng.normal();
    for (double& v : p.norm_bias.data) v = rng.normal();
    for (double& v : p.running_mean.data) v = rng.normal();
    for (double& v : p.running_var.data) v = 0.5 + rng.uniform();
    for (double& v : p.b2.data) v = rng.normal();
    const auto g = testing::random_vector(6, rng);

    std::vector<double> expect(3, 0.0);
    double a[4];
    for (int h = 0; h < 4; ++h) {
      double z = p.b1.data[h];
      for (int i = 0; i < 6; ++i) z += p.W1.data[h * 6 + i] * g[i];
      const double n = (z - p.running_mean.data[h]) / std::sqrt(p.running_var.data[h] + p.eps);
      const double y = p.norm_gain.data[h] * n + p.norm_bias.data[h];
      a[h] = y > 0 ? y : 0;
    }
    for (int o = 0; o < 3; ++o) {
      double s = p.b2.data[o];
      for (int h = 0; h < 4; ++h) s += p.W2.data[o * 4 + h] * a[h];
      expect[o] = s;
    }
    const auto got = project(g, p, Mode::kEval).values;
    for (int o = 0; o < 3; ++o) EXPECT_NEAR(got[o], expect[o], 1e-12);
    // A lone sample in train mode uses the same running statistics.
    EXPECT_EQ(project(g, p, Mode::kTrain).values, got);
  }
}

TEST(Project, DimensionMismatch) {
  const auto p = identity_projector(2);
  const std::vector<double> g{1, 2, 3};
  EXPECT_THROW(project(g, p), DimensionError);
}

TEST(ProjectForward, TrainBatchStatisticsAndRunningUpdate) {
  auto p = identity_projector(2);
  p.eps = 1e-5;
  const std::vector<std::vector<double>> gs{{1, 10}, {3, 10}, {5, 13}};
  const auto f = project_forward(gs, p, Mode::kTrain);
  ASSERT_TRUE(f.batch_stats);
  EXPECT_NEAR(f.mean[0], 3.0, 1e-15);
  EXPECT_NEAR(f.var[0], 8.0 / 3.0, 1e-15);
  EXPECT_NEAR(f.mean[1], 11.0, 1e-15);
  for (std::size_t h = 0; h < 2; ++h) {
    double s = 0;
    for (std::size_t i = 0; i < 3; ++i) s += f.normalized(i, h);
    EXPECT_NEAR(s, 0.0, 1e-12);
  }
  const auto before = p;
  update_running_stats(p, f, 3);
  EXPECT_NEAR(p.running_mean[0], 0.9 * 0.0 + 0.1 * 3.0, 1e-15);
  EXPECT_NEAR(p.running_var[0], 0.9 * 1.0 + 0.1 * (8.0 / 3.0) * 1.5, 1e-15);
  // Eval forward never touches the stats.
  const auto e = project_forward(gs, p, Mode::kEval);
  EXPECT_FALSE(e.batch_stats);
  EXPECT_NE(before.running_mean, p.running_mean);
}

TEST(BuildConditioning, ComposesAggregateAndProject) {
  const auto store = testing::random_matrix(30, 4, 6);
  KMeansConfig k;
  k.k = 3;
  k.seed = 9;
  const auto params = ProjectorParams::init(12, 8, 4, 2);
  const std::vector<std::size_t> subset{3, 1, 4, 15, 9, 26, 5, 10, 20};
  const auto cv = build_conditioning(subset, store, k, params);
  const auto expect = project(aggregate(subset, store, k).values, params);
  EXPECT_EQ(cv.values, expect.values);
  EXPECT_EQ(cv.k_used, 3u);
  EXPECT_TRUE(std::is_sorted(cv.source_subset.begin(), cv.source_subset.end()));
  EXPECT_EQ(build_conditioning(subset, store, k, params).values, cv.values);
}

TEST(BuildConditioning, PermutationInvariant) {
  const auto store = testing::random_matrix(80, 5, 7);
  KMeansConfig k;
  k.k = 4;
  k.batch_size = 8;  // mini-batch path, where sampling order matters most
  const auto params = ProjectorParams::init(20, 6, 5, 3);
  Rng rng(10);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < 80; ++i)
      if (rng.uniform() < 0.4) subset.push_back(i);
    if (subset.size() < 2) continue;
    auto shuffled = subset;
    rng.shuffle(shuffled);
    EXPECT_EQ(build_conditioning(subset, store, k, params).values,
              build_conditioning(shuffled, store, k, params).values);
  }
}

TEST(ProjectorParams, ValidateCatchesBadShapes) {
  auto p = ProjectorParams::init(4, 3, 2, 1);
  EXPECT_NO_THROW(p.validate());
  p.running_var[0] = 0.0;
  EXPECT_THROW(p.validate(), NumericError);
  p = ProjectorParams::init(4, 3, 2, 1);
  p.W2 = Tensor(3, 3);
  EXPECT_THROW(p.validate(), DimensionError);
}

}  // namespace
}  // namespace poolrank
