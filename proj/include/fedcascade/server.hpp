#pragma once

// Central server: per-agent uploaded statistics, the deletion-only
// heterogeneity graph over users, and connected-component cluster models.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedcascade/agent.hpp"
#include "fedcascade/numerics.hpp"

namespace fedcascade {

struct ClusterModel {
  SymMatrix sigma;  // lambda I + component sum
  Vector b;
  Vector theta;
};

class ServerState {
 public:
  ServerState() = default;
  ServerState(std::size_t num_users, std::size_t d, double lambda)
      : lambda_(lambda),
        summaries_(num_users, GramSummary::empty(d)),
        theta_(num_users, Vector(d, 0.0)),
        adjacency_(num_users, std::vector<char>(num_users, 1)) {
    if (!(lambda > 0.0)) throw std::invalid_argument("ServerState: lambda must be > 0");
    for (std::size_t u = 0; u < num_users; ++u) adjacency_[u][u] = 0;
    edge_count_ = num_users * (num_users - 1) / 2;
  }

  std::size_t num_users() const { return summaries_.size(); }
  double lambda() const { return lambda_; }
  const GramSummary& summary(std::size_t u) const { return summaries_.at(u); }
  const Vector& theta(std::size_t u) const { return theta_.at(u); }
  bool has_edge(std::size_t a, std::size_t b) const { return adjacency_.at(a).at(b) != 0; }
  std::size_t edge_count() const { return edge_count_; }

  std::vector<std::size_t> neighbors(std::size_t u) const {
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < num_users(); ++v)
      if (adjacency_.at(u)[v]) out.push_back(v);
    return out;
  }

  void receive_upload(std::size_t user, const GramSummary& upload) {
    if (user >= num_users()) throw std::out_of_range("unknown user id " + std::to_string(user));
    summaries_[user] += upload;
    theta_[user] = estimate_from_scratch(user);
  }

  // (lambda I + Sigma_ser)^{-1} b_ser, recomputed without the cache.
  Vector estimate_from_scratch(std::size_t user) const {
    SymMatrix m = summaries_.at(user).sigma;
    m.add_diagonal(lambda_);
    return Factorization::of(m).solve(summaries_[user].b);
  }

  void remove_edge(std::size_t a, std::size_t b) {
    if (a == b || !adjacency_.at(a).at(b)) return;
    adjacency_[a][b] = adjacency_[b][a] = 0;
    --edge_count_;
  }

  // True iff every edge of *this is also an edge of earlier.
  bool edges_subset_of(const ServerState& earlier) const {
    for (std::size_t a = 0; a < num_users(); ++a)
      for (std::size_t b = a + 1; b < num_users(); ++b)
        if (adjacency_[a][b] && !earlier.adjacency_.at(a).at(b)) return false;
    return true;
  }

  const std::vector<std::vector<char>>& adjacency() const { return adjacency_; }

 private:
  double lambda_ = 1.0;
  std::vector<GramSummary> summaries_;
  std::vector<Vector> theta_;
  std::vector<std::vector<char>> adjacency_;
  std::size_t edge_count_ = 0;
};

inline void receive_upload(ServerState& ss, std::size_t user, const GramSummary& upload) {
  ss.receive_upload(user, upload);
}

// alpha_d (sqrt((1 + ln(1 + T_a)) / (1 + T_a)) + sqrt((1 + ln(1 + T_b)) / (1 + T_b)))
inline double heterogeneity_threshold(std::uint64_t count_a, std::uint64_t count_b,
                                      double alpha_d) {
  auto term = [](std::uint64_t n) {
    const double m = 1.0 + static_cast<double>(n);
    return std::sqrt((1.0 + std::log(m)) / m);
  };
  return alpha_d * (term(count_a) + term(count_b));
}

// Deletes every edge (acting, u) whose estimate gap exceeds the threshold.
// Returns the number of deleted edges.
inline std::size_t update_graph(ServerState& ss, std::size_t acting, double alpha_d) {
  const Vector& mine = ss.theta(acting);
  const std::uint64_t my_count = ss.summary(acting).count;
  std::vector<std::size_t> doomed;
  for (std::size_t u : ss.neighbors(acting)) {
    const double gap = distance2(mine, ss.theta(u));
    if (gap > heterogeneity_threshold(my_count, ss.summary(u).count, alpha_d)) doomed.push_back(u);
  }
  for (std::size_t u : doomed) ss.remove_edge(acting, u);
  return doomed.size();
}

// Breadth-first traversal; returned ids ascend.
inline std::vector<std::size_t> connected_component(const ServerState& ss, std::size_t user) {
  const std::size_t n = ss.num_users();
  if (user >= n) throw std::out_of_range("unknown user id " + std::to_string(user));
  std::vector<char> seen(n, 0);
  std::queue<std::size_t> frontier;
  frontier.push(user);
  seen[user] = 1;
  std::vector<std::size_t> out;
  while (!frontier.empty()) {
    const std::size_t u = frontier.front();
    frontier.pop();
    out.push_back(u);
    const auto& row = ss.adjacency()[u];
    for (std::size_t v = 0; v < n; ++v)
      if (row[v] && !seen[v]) {
        seen[v] = 1;
        frontier.push(v);
      }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// All components, ordered by smallest member.
inline std::vector<std::vector<std::size_t>> connected_components(const ServerState& ss) {
  std::vector<char> placed(ss.num_users(), 0);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t u = 0; u < ss.num_users(); ++u) {
    if (placed[u]) continue;
    auto comp = connected_component(ss, u);
    for (std::size_t v : comp) placed[v] = 1;
    out.push_back(std::move(comp));
  }
  return out;
}

inline ClusterModel aggregate_component(const ServerState& ss,
                                        const std::vector<std::size_t>& component) {
  if (component.empty()) throw std::invalid_argument("aggregate_component: empty component");
  const std::size_t d = ss.theta(component.front()).size();
  ClusterModel m{regularized(d, ss.lambda()), Vector(d, 0.0), {}};
  for (std::size_t u : component) {
    m.sigma += ss.summary(u).sigma;
    axpy(1.0, ss.summary(u).b, m.b);
  }
  m.theta = Factorization::of(m.sigma).solve(m.b);
  return m;
}

}  // namespace fedcascade
