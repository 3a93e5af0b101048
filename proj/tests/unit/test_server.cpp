#include <gtest/gtest.h>

#include <cmath>

#include "fedcascade/server.hpp"
#include "oracles.hpp"

using namespace fedcascade;

namespace {

GramSummary scalar_summary(double sigma, double b, std::uint64_t count) {
  GramSummary g = GramSummary::empty(1);
  SymMatrix s(1);
  s.set(0, 0, sigma);
  g.sigma = s;
  g.b = {b};
  g.count = count;
  return g;
}

GramSummary random_summary(std::size_t d, Rng& rng, std::size_t n) {
  GramSummary g = GramSummary::empty(d);
  for (std::size_t k = 0; k < n; ++k) g.add(random_unit_vector(d, rng), rng.uniform() < 0.4);
  return g;
}

}  // namespace

TEST(ReceiveUpload, ScalarEstimate) {
  ServerState ss(2, 1, 1.0);
  receive_upload(ss, 0, scalar_summary(1.0, 0.5, 1));
  EXPECT_DOUBLE_EQ(ss.theta(0)[0], 0.25);
  EXPECT_EQ(ss.summary(0).count, 1u);
}

TEST(ReceiveUpload, EmptyUploadIsFixedPoint) {
  Rng rng(1);
  ServerState ss(3, 4, 1.0);
  receive_upload(ss, 1, random_summary(4, rng, 20));
  const ServerState before = ss;
  receive_upload(ss, 1, GramSummary::empty(4));
  EXPECT_EQ(ss.summary(1).sigma, before.summary(1).sigma);
  EXPECT_EQ(ss.summary(1).count, before.summary(1).count);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(ss.theta(1)[i], before.theta(1)[i], 1e-15);
}

TEST(ReceiveUpload, UploadsCommute) {
  Rng rng(2);
  const GramSummary a = random_summary(3, rng, 10), b = random_summary(3, rng, 7);
  ServerState x(2, 3, 1.0), y(2, 3, 1.0);
  receive_upload(x, 0, a);
  receive_upload(x, 0, b);
  receive_upload(y, 0, b);
  receive_upload(y, 0, a);
  EXPECT_EQ(x.summary(0).count, y.summary(0).count);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(x.theta(0)[i], y.theta(0)[i], 1e-12);
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_NEAR(x.summary(0).sigma(i, j), y.summary(0).sigma(i, j), 1e-12);
  }
}

TEST(ReceiveUpload, UnknownUserAndBadDimension) {
  ServerState ss(2, 2, 1.0);
  EXPECT_THROW(receive_upload(ss, 5, GramSummary::empty(2)), std::out_of_range);
  EXPECT_THROW(receive_upload(ss, 0, GramSummary::empty(3)), DimensionMismatch);
}

TEST(ReceiveUpload, CachedEstimateMatchesRecompute) {
  Rng rng(3);
  ServerState ss(4, 5, 0.7);
  for (int step = 0; step < 200; ++step) {
    const std::size_t u = rng.below(4);
    receive_upload(ss, u, random_summary(5, rng, 1 + rng.below(4)));
    for (std::size_t v = 0; v < 4; ++v) {
      const Vector fresh = ss.estimate_from_scratch(v);
      SymMatrix m = ss.summary(v).sigma;
      m.add_diagonal(0.7);
      const Vector oracle_theta = oracle::gauss_solve(oracle::to_mat(m), ss.summary(v).b);
      for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_NEAR(ss.theta(v)[i], fresh[i], 1e-9);
        EXPECT_NEAR(ss.theta(v)[i], oracle_theta[i], 1e-9);
      }
    }
  }
}

TEST(HeterogeneityThreshold, HandValues) {
  EXPECT_DOUBLE_EQ(heterogeneity_threshold(0, 0, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(heterogeneity_threshold(0, 0, 0.5), 1.0);
  EXPECT_NEAR(heterogeneity_threshold(100, 100, 1.0), 0.471572911189744519, 1e-14);
}

TEST(HeterogeneityThreshold, StrictlyDecreasingInEachCount) {
  for (std::uint64_t a = 0; a < 300; a += 7)
    for (std::uint64_t b = 0; b < 300; b += 11) {
      EXPECT_GT(heterogeneity_threshold(a, b, 1.3), heterogeneity_threshold(a + 1, b, 1.3));
      EXPECT_GT(heterogeneity_threshold(a, b, 1.3), heterogeneity_threshold(a, b + 1, 1.3));
    }
}

TEST(UpdateGraph, ColdStartAndIdenticalDataKeepEdges) {
  ServerState ss(3, 2, 1.0);
  EXPECT_EQ(update_graph(ss, 0, 1.0), 0u);
  EXPECT_EQ(ss.edge_count(), 3u);
  Rng rng(4);
  const GramSummary g = random_summary(2, rng, 50);
  receive_upload(ss, 0, g);
  receive_upload(ss, 1, g);
  update_graph(ss, 0, 0.01);
  EXPECT_TRUE(ss.has_edge(0, 1));
}

TEST(UpdateGraph, ScalarSeparation) {
  ServerState ss(2, 1, 1.0);
  receive_upload(ss, 0, scalar_summary(100.0, 100.0, 100));
  receive_upload(ss, 1, scalar_summary(100.0, -100.0, 100));
  EXPECT_NEAR(ss.theta(0)[0], 100.0 / 101.0, 1e-15);
  EXPECT_NEAR(distance2(ss.theta(0), ss.theta(1)), 1.98019801980198, 1e-13);
  EXPECT_EQ(update_graph(ss, 0, 1.0), 1u);
  EXPECT_FALSE(ss.has_edge(0, 1));
  EXPECT_FALSE(ss.has_edge(1, 0));
}

TEST(UpdateGraph, TouchesOnlyIncidentEdgesAndOnlyDeletes) {
  Rng rng(5);
  ServerState ss(8, 3, 1.0);
  for (int step = 0; step < 300; ++step) {
    const std::size_t u = rng.below(8);
    GramSummary g = GramSummary::empty(3);
    const Vector dir = (u % 2) ? Vector{1.0, 0.0, 0.0} : Vector{0.0, 1.0, 0.0};
    for (int k = 0; k < 5; ++k) {
      const Vector x = random_unit_vector(3, rng);
      g.add(x, rng.uniform() < std::clamp(dot(x, dir), 0.0, 1.0));
    }
    receive_upload(ss, u, g);
    const ServerState before = ss;
    update_graph(ss, u, 0.5);
    EXPECT_TRUE(ss.edges_subset_of(before));
    for (std::size_t a = 0; a < 8; ++a) {
      EXPECT_FALSE(ss.has_edge(a, a));
      for (std::size_t b = 0; b < 8; ++b)
        if (a != u && b != u) {
          EXPECT_EQ(ss.has_edge(a, b), before.has_edge(a, b));
        }
    }
  }
}

TEST(ConnectedComponent, HandCases) {
  ServerState ss(3, 1, 1.0);
  EXPECT_EQ(connected_component(ss, 1), (std::vector<std::size_t>{0, 1, 2}));
  // Path 0-1-2 then delete (1,2).
  ss.remove_edge(0, 2);
  ss.remove_edge(1, 2);
  EXPECT_EQ(connected_component(ss, 0), (std::vector<std::size_t>{0, 1}));
  ss.remove_edge(0, 1);
  EXPECT_EQ(connected_component(ss, 2), (std::vector<std::size_t>{2}));
  EXPECT_EQ(connected_components(ss).size(), 3u);
  EXPECT_THROW(connected_component(ss, 3), std::out_of_range);
}

TEST(ConnectedComponent, MatchesReachabilityClosure) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(10);
    ServerState ss(n, 1, 1.0);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        if (rng.uniform() < 0.75) ss.remove_edge(a, b);
    // Floyd-Warshall style transitive closure.
    std::vector<std::vector<char>> reach(n, std::vector<char>(n, 0));
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) reach[a][b] = a == b || ss.has_edge(a, b);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
          if (reach[a][k] && reach[k][b]) reach[a][b] = 1;
    for (std::size_t u = 0; u < n; ++u) {
      std::vector<std::size_t> want;
      for (std::size_t v = 0; v < n; ++v)
        if (reach[u][v]) want.push_back(v);
      EXPECT_EQ(connected_component(ss, u), want);
    }
  }
}

TEST(AggregateComponent, PriorAndScalarCase) {
  for (double lambda : {0.1, 1.0, 7.0}) {
    ServerState ss(3, 2, lambda);
    const ClusterModel m = aggregate_component(ss, {1});
    EXPECT_EQ(m.sigma, regularized(2, lambda));
    EXPECT_EQ(m.b, (Vector{0.0, 0.0}));
    EXPECT_EQ(m.theta, (Vector{0.0, 0.0}));
  }
  ServerState ss(2, 1, 1.0);
  receive_upload(ss, 0, scalar_summary(1.0, 0.5, 1));
  receive_upload(ss, 1, scalar_summary(2.0, 1.0, 2));
  const ClusterModel m = aggregate_component(ss, {0, 1});
  EXPECT_DOUBLE_EQ(m.sigma(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(m.theta[0], 0.375);
  EXPECT_THROW(aggregate_component(ss, {}), std::invalid_argument);
}

TEST(AggregateComponent, PermutationInvariant) {
  Rng rng(7);
  ServerState ss(5, 3, 1.0);
  for (std::size_t u = 0; u < 5; ++u) receive_upload(ss, u, random_summary(3, rng, 10 + u));
  const ClusterModel a = aggregate_component(ss, {0, 2, 4});
  const ClusterModel b = aggregate_component(ss, {4, 0, 2});
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(a.theta[i], b.theta[i], 1e-12);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a.sigma(i, j), b.sigma(i, j), 1e-12);
  }
  const Vector check = oracle::gauss_solve(oracle::to_mat(a.sigma), a.b);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.theta[i], check[i], 1e-9);
}
