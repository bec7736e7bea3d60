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
#include <fstream>
#include <limits>
#include <vector>

#include "poolrank/clustering.hpp"
#include "test_util.hpp"

namespace poolrank {
namespace {

const std::vector<std::vector<double>> kCorners = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};

EmbeddingMatrix four_gaussians(std::uint64_t seed, std::size_t per = 100, double sigma = 0.05) {
  Rng rng(seed);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < per; ++i) {
    for (const auto& c : kCorners) rows.push_back({c[0] + sigma * rng.normal(), c[1] + sigma * rng.normal()});
  }
  return EmbeddingMatrix::from_rows(rows);
}

// Independent Lloyd: farthest-point init from row 0, then alternate until stable.
std::vector<std::vector<double>> oracle_lloyd(const EmbeddingMatrix& m, std::size_t k) {
  const std::size_t n = m.count(), d = m.dim();
  auto dist = [&](std::size_t i, const std::vector<double>& c) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += (m.row(i)[j] - c[j]) * (m.row(i)[j] - c[j]);
    return s;
  };
  std::vector<std::vector<double>> cs;
  cs.emplace_back(m.row(0).begin(), m.row(0).end());
  while (cs.size() < k) {
    std::size_t far = 0;
    double best = -1;
    for (std::size_t i = 0; i < n; ++i) {
      double nearest = std::numeric_limits<double>::infinity();
      for (const auto& c : cs) nearest = std::min(nearest, dist(i, c));
      if (nearest > best) {
        best = nearest;
        far = i;
      }
    }
    cs.emplace_back(m.row(far).begin(), m.row(far).end());
  }
  std::vector<std::size_t> a(n, k);
  for (int it = 0; it < 1000; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (dist(i, cs[c]) < dist(i, cs[arg])) arg = c;
      changed |= arg != a[i];
      a[i] = arg;
    }
    if (!changed) break;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> sum(d, 0.0);
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (a[i] == c) {
          for (std::size_t j = 0; j < d; ++j) sum[j] += m.row(i)[j];
          ++cnt;
        }
      if (cnt)
        for (std::size_t j = 0; j < d; ++j) cs[c][j] = sum[j] / static_cast<double>(cnt);
    }
  }
  return cs;
}

double brute_wcss(const EmbeddingMatrix& m, const Tensor& c, const std::vector<std::uint32_t>& a) {
  double s = 0;
  for (std::size_t i = 0; i < m.count(); ++i)
    for (std::size_t j = 0; j < m.dim(); ++j) {
      const double d = m.row(i)[j] - c(a[i], j);
      s += d * d;
    }
  return s;
}

// Each centroid matched to a distinct target within tol.
bool matches_distinct(const Tensor& c, const std::vector<std::vector<double>>& targets, double tol) {
  std::vector<bool> used(targets.size(), false);
  for (std::size_t r = 0; r < c.rows; ++r) {
    bool found = false;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      if (used[t]) continue;
      double s = 0;
      for (std::size_t j = 0; j < c.cols; ++j) s += (c(r, j) - targets[t][j]) * (c(r, j) - targets[t][j]);
      if (std::sqrt(s) <= tol) {
        used[t] = found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

TEST(KMeansFit, TwoSeparatedPairs) {
  const auto m = EmbeddingMatrix::from_rows({{0, 0}, {0.1, 0}, {10, 10}, {10.1, 10}});
  KMeansConfig cfg;
  cfg.k = 2;
  const auto cs = kmeans_fit(m, cfg);
  // Means of the float-rounded inputs.
  const double a = (0.0 + static_cast<double>(0.1f)) / 2.0;
  const double b = (10.0 + static_cast<double>(10.1f)) / 2.0;
  EXPECT_TRUE(matches_distinct(cs.centroids, {{a, 0}, {b, 10}}, 1e-9));
  EXPECT_EQ(cs.sizes, (std::vector<std::size_t>{2, 2}));
  EXPECT_EQ(cs.assignments[0], cs.assignments[1]);
  EXPECT_EQ(cs.assignments[2], cs.assignments[3]);
}

TEST(KMeansFit, KEqualsCount) {
  const auto m = testing::random_matrix(7, 3, 21);
  KMeansConfig cfg;
  cfg.k = 7;
  const auto cs = kmeans_fit(m, cfg);
  std::vector<bool> used(7, false);
  for (std::size_t c = 0; c < 7; ++c) {
    EXPECT_EQ(cs.sizes[c], 1u);
    bool found = false;
    for (std::size_t i = 0; i < 7; ++i) {
      bool same = true;
      for (std::size_t j = 0; j < 3; ++j) same &= cs.centroids(c, j) == static_cast<double>(m.row(i)[j]);
      if (same && !used[i]) used[i] = found = true;
    }
    EXPECT_TRUE(found) << "centroid " << c;
  }
}

TEST(KMeansFit, FourGaussiansFullBatchMatchesOracle) {
  const auto m = four_gaussians(2024);
  KMeansConfig cfg;
  cfg.k = 4;
  cfg.batch_size = 1024;  // >= n: full batch
  cfg.seed = 5;
  const auto cs = kmeans_fit(m, cfg);
  EXPECT_TRUE(matches_distinct(cs.centroids, kCorners, 0.05));
  const auto oracle = oracle_lloyd(m, 4);
  EXPECT_TRUE(matches_distinct(cs.centroids, oracle, 1e-9));
}

TEST(KMeansFit, MiniBatchWithinFivePercentOfLloyd) {
  const auto m = four_gaussians(7);
  KMeansConfig cfg;
  cfg.k = 4;
  cfg.batch_size = 32;
  cfg.seed = 3;
  const auto mb = kmeans_fit(m, cfg);
  const auto full = lloyd_full(m, 4, 3, 100);
  const double w_mb = wcss(m, mb.centroids, mb.assignments);
  const double w_full = wcss(m, full.centroids, full.assignments);
  EXPECT_LE(w_mb, 1.05 * w_full);
  EXPECT_TRUE(matches_distinct(mb.centroids, kCorners, 0.05));
}

TEST(KMeansFit, CentroidsAreExactMeansOfAssignedRows) {
  const auto m = testing::random_matrix(300, 6, 17);
  KMeansConfig cfg;
  cfg.k = 5;
  cfg.batch_size = 64;
  const auto cs = kmeans_fit(m, cfg);
  std::size_t total = 0;
  for (std::size_t c = 0; c < 5; ++c) {
    std::vector<double> sum(6, 0.0);
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < 300; ++i) {
      ASSERT_LT(cs.assignments[i], 5u);
      if (cs.assignments[i] != c) continue;
      ++cnt;
      for (std::size_t j = 0; j < 6; ++j) sum[j] += m.row(i)[j];
    }
    EXPECT_EQ(cnt, cs.sizes[c]);
    total += cnt;
    ASSERT_GT(cnt, 0u);
    for (std::size_t j = 0; j < 6; ++j) {
      const double mean = sum[j] / static_cast<double>(cnt);
      EXPECT_NEAR(cs.centroids(c, j), mean, 1e-6 * std::max(1.0, std::abs(mean)));
    }
  }
  EXPECT_EQ(total, 300u);
}

TEST(KMeansFit, TwoPhaseAssignmentOnPrefix) {
  // First two coordinates carry the cluster structure; the rest is noise.
  Rng rng(44);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 200; ++i) {
    const double cx = (i % 2) ? 5.0 : -5.0;
    rows.push_back({cx + 0.1 * rng.normal(), 0.1 * rng.normal(), 3 * rng.normal(), 3 * rng.normal()});
  }
  const auto m = EmbeddingMatrix::from_rows(rows);
  KMeansConfig cfg;
  cfg.k = 2;
  cfg.assignment_dim = 2;
  const auto cs = kmeans_fit(m, cfg);
  EXPECT_EQ(cs.assignment_dim, 2u);
  EXPECT_EQ(cs.dim, 4u);
  EXPECT_EQ(cs.centroids.cols, 4u);
  for (int i = 0; i < 200; i += 2) EXPECT_EQ(cs.assignments[i], cs.assignments[0]);
  for (int i = 1; i < 200; i += 2) EXPECT_EQ(cs.assignments[i], cs.assignments[1]);
  // Full-dimension means of the prefix-defined groups.
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < 200; ++i)
        if (cs.assignments[i] == c) {
          s += m.row(i)[j];
          ++cnt;
        }
      EXPECT_NEAR(cs.centroids(c, j), s / static_cast<double>(cnt), 1e-9);
    }
  }
  // Assignment on the prefix is a fixed point for the prefix of the centres.
  const auto view = truncate_view(m, 2);
  for (std::size_t i = 0; i < 200; ++i) {
    EXPECT_EQ(detail::nearest(view.row(i), cs.centroids).first, cs.assignments[i]);
  }
}

TEST(KMeansFit, Deterministic) {
  const auto m = testing::random_matrix(500, 4, 2);
  KMeansConfig cfg;
  cfg.k = 6;
  cfg.batch_size = 50;
  cfg.seed = 77;
  EXPECT_EQ(kmeans_fit(m, cfg), kmeans_fit(m, cfg));
}

TEST(KMeansFit, Errors) {
  const auto m = testing::random_matrix(3, 2, 1);
  KMeansConfig cfg;
  cfg.k = 4;
  try {
    kmeans_fit(m, cfg);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("k exceeds candidate count"), std::string::npos);
  }
  const EmbeddingMatrix empty(0, 2, {});
  cfg.k = 1;
  EXPECT_THROW(kmeans_fit(empty, cfg), DataError);
  cfg.k = 0;
  EXPECT_THROW(kmeans_fit(m, cfg), ConfigError);
  cfg.k = 1;
  cfg.assignment_dim = 3;
  EXPECT_THROW(kmeans_fit(m, cfg), DimensionError);
}

TEST(KMeansFit, DuplicatePointsStillFillEveryCluster) {
  const auto m = EmbeddingMatrix::from_rows({{1, 1}, {1, 1}, {1, 1}, {2, 2}});
  KMeansConfig cfg;
  cfg.k = 3;
  const auto cs = kmeans_fit(m, cfg);
  for (auto s : cs.sizes) EXPECT_GT(s, 0u);
}

TEST(Lloyd, SingleAndTwoPoints) {
  const auto one = EmbeddingMatrix::from_rows({{3, -1}});
  const auto cs1 = lloyd_full(one, 1, 0, 10);
  EXPECT_EQ(cs1.centroids.data, (std::vector<double>{3, -1}));
  EXPECT_EQ(wcss(one, cs1.centroids, cs1.assignments), 0.0);

  const auto two = EmbeddingMatrix::from_rows({{0, 0}, {2, 4}});
  const auto cs2 = lloyd_full(two, 1, 0, 10);
  EXPECT_EQ(cs2.centroids.data, (std::vector<double>{1, 2}));
}

TEST(Lloyd, MonotoneAndFixedPoint) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = testing::random_matrix(200, 3, 100 + seed);
    const auto cs = lloyd_full(m, 5, seed, 100);
    for (std::size_t t = 1; t < cs.wcss_history.size(); ++t) {
      EXPECT_LE(cs.wcss_history[t], cs.wcss_history[t - 1] + 1e-9) << "seed " << seed << " iter " << t;
    }
    if (cs.converged) {
      for (std::size_t i = 0; i < m.count(); ++i) {
        EXPECT_EQ(detail::nearest(m.row(i), cs.centroids).first, cs.assignments[i]);
      }
    }
  }
}

TEST(Wcss, Examples) {
  const auto m = EmbeddingMatrix::from_rows({{1, 1}, {3, 3}});
  Tensor c(2, 2);
  c.data = {1, 1, 3, 3};
  EXPECT_EQ(wcss(m, c, std::vector<std::uint32_t>{0, 1}), 0.0);

  const auto p = EmbeddingMatrix::from_rows({{2, 0}});
  Tensor origin(1, 2);
  EXPECT_EQ(wcss(p, origin, std::vector<std::uint32_t>{0}), 4.0);

  const auto r = testing::random_matrix(10, 3, 55);
  KMeansConfig cfg;
  cfg.k = 2;
  const auto cs = kmeans_fit(r, cfg);
  EXPECT_NEAR(wcss(r, cs.centroids, cs.assignments), brute_wcss(r, cs.centroids, cs.assignments), 1e-12);

  EXPECT_THROW(wcss(r, cs.centroids, std::vector<std::uint32_t>{0}), DimensionError);
  EXPECT_THROW(wcss(r, Tensor(2, 1), cs.assignments), DimensionError);
}

TEST(CentroidSetFile, StorePlusAssignSidecar) {
  testing::TempDir dir("centroids");
  const auto m = four_gaussians(1, 10);
  KMeansConfig cfg;
  cfg.k = 4;
  const auto cs = kmeans_fit(m, cfg);
  write_centroid_set(cs, dir / "c.lrke");
  const auto back = read_store(dir / "c.lrke");
  ASSERT_EQ(back.count(), 4u);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(back.row(c)[j], static_cast<float>(cs.centroids(c, j)));
  std::ifstream in(dir / "c.lrke.assign", std::ios::binary);
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), {}};
  ASSERT_EQ(bytes.size(), 4 * m.count());
  for (std::size_t i = 0; i < m.count(); ++i) {
    std::uint32_t a = 0;
    std::memcpy(&a, bytes.data() + 4 * i, 4);
    EXPECT_EQ(a, cs.assignments[i]);
  }
}

}  // namespace
}  // namespace poolrank
