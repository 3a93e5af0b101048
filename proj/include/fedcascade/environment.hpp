#pragma once

// Cascade-click environment: users partitioned into clusters with a shared
// preference vector, per-round item contexts, click sampling under the
// cascade model, and the exact top-K oracle used for pseudo-regret.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedcascade/bundle.hpp"
#include "fedcascade/numerics.hpp"
#include "fedcascade/rng.hpp"

namespace fedcascade {

enum class ThetaMode { kOrthogonal, kRandomNormalized };

struct SyntheticConfig {
  std::size_t num_users = 40;
  std::size_t num_clusters = 5;
  std::size_t dim = 20;
  std::size_t items_per_round = 200;
  std::size_t K = 4;
  std::uint64_t horizon = 1000;
  ThetaMode theta_mode = ThetaMode::kOrthogonal;
  bool clip_weights = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_users == 0) throw std::invalid_argument("num_users must be >= 1");
    if (num_clusters == 0) throw std::invalid_argument("num_clusters must be >= 1");
    if (num_clusters > num_users)
      throw std::invalid_argument("num_clusters must not exceed num_users");
    if (dim == 0) throw std::invalid_argument("dim must be >= 1");
    if (K == 0) throw std::invalid_argument("K must be >= 1");
    if (K > items_per_round) throw std::invalid_argument("K must not exceed items_per_round");
    if (theta_mode == ThetaMode::kOrthogonal && num_clusters > dim)
      throw std::invalid_argument("orthogonal theta_mode needs num_clusters <= dim");
  }
};

struct GroundTruth {
  std::size_t num_users = 0;
  std::vector<std::size_t> cluster_of;
  std::vector<Vector> thetas;
  double realized_gamma = std::numeric_limits<double>::infinity();
  // Fixed item pool for ratings mode; empty means fresh Gaussian items.
  std::vector<Vector> item_pool;

  std::size_t dim() const { return thetas.front().size(); }
  std::size_t num_clusters() const { return thetas.size(); }
  const Vector& theta_of(std::size_t user) const { return thetas[cluster_of.at(user)]; }

  std::vector<std::vector<std::size_t>> clusters() const {
    std::vector<std::vector<std::size_t>> out(thetas.size());
    for (std::size_t u = 0; u < num_users; ++u) out[cluster_of[u]].push_back(u);
    return out;
  }
};

struct Item {
  std::size_t id = 0;
  Vector x;
};

struct RoundContext {
  std::uint64_t t = 0;
  std::size_t user = 0;
  std::vector<Item> items;
};

// Ordered positions into RoundContext::items.
struct Action {
  std::vector<std::size_t> items;
  bool operator==(const Action&) const = default;
};

struct Feedback {
  std::size_t observed = 0;  // min(O_t, len(a))
  std::vector<bool> clicks;  // length == observed
  bool clicked = false;
  int reward = 0;
};

inline double min_pairwise_distance(const std::vector<Vector>& vs) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < vs.size(); ++i)
    for (std::size_t j = i + 1; j < vs.size(); ++j) best = std::min(best, distance2(vs[i], vs[j]));
  return best;
}

inline Vector random_unit_vector(std::size_t dim, Rng& rng) {
  Vector v(dim);
  double n = 0.0;
  do {
    for (double& x : v) x = rng.normal();
    n = norm2(v);
  } while (n == 0.0);
  for (double& x : v) x /= n;
  return v;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

inline GroundTruth generate_synthetic(const SyntheticConfig& cfg, Rng& rng) {
  cfg.validate();
  GroundTruth gt;
  gt.num_users = cfg.num_users;
  if (cfg.theta_mode == ThetaMode::kOrthogonal) {
    // Gram-Schmidt on Gaussian draws, redrawing the rare near-dependent vector.
    while (gt.thetas.size() < cfg.num_clusters) {
      Vector v = random_unit_vector(cfg.dim, rng);
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& q : gt.thetas) axpy(-dot(v, q), q, v);
      const double n = norm2(v);
      if (n < 1e-6) continue;
      for (double& x : v) x /= n;
      gt.thetas.push_back(std::move(v));
    }
  } else {
    for (std::size_t j = 0; j < cfg.num_clusters; ++j)
      gt.thetas.push_back(random_unit_vector(cfg.dim, rng));
  }
  gt.cluster_of.resize(cfg.num_users);
  for (std::size_t u = 0; u < cfg.num_users; ++u) gt.cluster_of[u] = u % cfg.num_clusters;
  shuffle(gt.cluster_of, rng);
  gt.realized_gamma = min_pairwise_distance(gt.thetas);
  return gt;
}

// Ratings-mode world: samples num_users users (all of them when num_users
// equals the bundle's user count) and keeps only the clusters they occupy.
inline GroundTruth ground_truth_from_bundle(const EmbeddingBundle& b, std::size_t num_users,
                                            Rng& rng) {
  validate_bundle(b);
  const std::size_t available = b.user_ids.size();
  if (num_users == 0 || num_users > available)
    throw std::invalid_argument("num_users must be in [1, " + std::to_string(available) +
                                "] for this bundle");
  std::vector<std::size_t> users(available);
  std::iota(users.begin(), users.end(), std::size_t{0});
  if (num_users < available) {
    for (std::size_t i = 0; i < num_users; ++i)
      std::swap(users[i], users[i + rng.below(available - i)]);
    users.resize(num_users);
  }
  std::vector<std::size_t> remap(b.centers.size(), SIZE_MAX);
  GroundTruth gt;
  gt.num_users = num_users;
  for (std::size_t u : users) {
    const std::size_t c = b.cluster_of[u];
    if (remap[c] == SIZE_MAX) {
      remap[c] = gt.thetas.size();
      gt.thetas.push_back(b.centers[c]);
    }
    gt.cluster_of.push_back(remap[c]);
  }
  gt.item_pool = b.item_features;
  gt.realized_gamma = min_pairwise_distance(gt.thetas);
  return gt;
}

inline RoundContext draw_round(const GroundTruth& gt, std::size_t items_per_round,
                               std::uint64_t t, Rng& arrivals, Rng& items) {
  if (t < 1) throw std::invalid_argument("draw_round: t must be >= 1");
  RoundContext ctx;
  ctx.t = t;
  ctx.user = static_cast<std::size_t>(arrivals.below(gt.num_users));
  ctx.items.reserve(items_per_round);
  if (gt.item_pool.empty()) {
    for (std::size_t i = 0; i < items_per_round; ++i)
      ctx.items.push_back({i, random_unit_vector(gt.dim(), items)});
  } else {
    const std::size_t n = gt.item_pool.size();
    if (n < items_per_round)
      throw std::invalid_argument("item pool has " + std::to_string(n) + " items, fewer than " +
                                  std::to_string(items_per_round) + " per round");
    // Partial Fisher-Yates: the first items_per_round slots are a uniform sample.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < items_per_round; ++i) {
      std::swap(idx[i], idx[i + items.below(n - i)]);
      ctx.items.push_back({idx[i], gt.item_pool[idx[i]]});
    }
  }
  return ctx;
}

inline double expected_weight(const GroundTruth& gt, std::size_t user, std::span<const double> x,
                              bool clip) {
  const double w = dot(gt.theta_of(user), x);
  return clip ? std::clamp(w, 0.0, 1.0) : w;
}

inline void validate_action(const RoundContext& ctx, const Action& a) {
  if (a.items.empty()) throw std::invalid_argument("action must contain at least one item");
  std::vector<bool> seen(ctx.items.size(), false);
  for (std::size_t i : a.items) {
    if (i >= ctx.items.size()) throw std::invalid_argument("action item out of range");
    if (seen[i]) throw std::invalid_argument("action contains a duplicate item");
    seen[i] = true;
  }
}

// Scans the list in order and stops at the first click. Consumes exactly
// `observed` uniforms from rng.
inline Feedback play(const GroundTruth& gt, const RoundContext& ctx, const Action& a, bool clip,
                     Rng& rng) {
  validate_action(ctx, a);
  Feedback fb;
  for (std::size_t k = 0; k < a.items.size(); ++k) {
    const double w = expected_weight(gt, ctx.user, ctx.items[a.items[k]].x, clip);
    if (w < 0.0 || w > 1.0)
      throw std::domain_error("click probability " + std::to_string(w) +
                              " outside [0,1] with clip_weights=false");
    const bool click = rng.uniform() < w;
    fb.clicks.push_back(click);
    ++fb.observed;
    if (click) {
      fb.clicked = true;
      fb.reward = 1;
      break;
    }
  }
  return fb;
}

// 1 - prod(1 - w_k); the empty list has reward 0.
inline double expected_reward(std::span<const double> weights) {
  double miss = 1.0;
  for (double w : weights) {
    if (w < 0.0 || w > 1.0) throw std::domain_error("expected_reward: weight outside [0,1]");
    miss *= 1.0 - w;
  }
  return 1.0 - miss;
}

// The K largest values in decreasing order, ties to the lower index.
inline Action oracle_topk(std::span<const double> values, std::size_t K) {
  if (K == 0) throw std::invalid_argument("oracle_topk: K must be >= 1");
  if (values.size() < K) throw std::invalid_argument("oracle_topk: fewer items than K");
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(K), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (values[a] != values[b]) return values[a] > values[b];
                      return a < b;
                    });
  idx.resize(K);
  return Action{std::move(idx)};
}

inline Vector true_weights(const GroundTruth& gt, const RoundContext& ctx, bool clip) {
  Vector w;
  w.reserve(ctx.items.size());
  for (const auto& it : ctx.items) w.push_back(expected_weight(gt, ctx.user, it.x, clip));
  return w;
}

// f(a*, w) - f(a, w) with a* the top-|a| items by true expected weight.
inline double per_round_regret(std::span<const double> weights, const Action& a) {
  const Action best = oracle_topk(weights, a.items.size());
  Vector wb, wa;
  for (std::size_t i : best.items) wb.push_back(weights[i]);
  for (std::size_t i : a.items) wa.push_back(weights[i]);
  return std::max(0.0, expected_reward(wb) - expected_reward(wa));
}

inline double per_round_regret(const GroundTruth& gt, const RoundContext& ctx, const Action& a,
                               bool clip = true) {
  validate_action(ctx, a);
  return per_round_regret(true_weights(gt, ctx, clip), a);
}

}  // namespace fedcascade
