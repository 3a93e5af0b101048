#pragma once

// Round-by-round simulation of the federated cascading bandit: one user
// arrives, its agent acts on its (possibly stale) model, and a triggered
// communication runs the upload / graph update / download round-trip.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fedcascade/agent.hpp"
#include "fedcascade/bundle.hpp"
#include "fedcascade/environment.hpp"
#include "fedcascade/rng.hpp"
#include "fedcascade/server.hpp"

namespace fedcascade {

// Synthetic world, or the ratings world of `bundle` when it is set. In
// ratings mode num_clusters, dim and theta_mode of `synthetic` are ignored,
// and the served users are sampled from the bundle with user_sample_seed
// (shared by every replication).
struct EnvironmentConfig {
  SyntheticConfig synthetic;
  std::shared_ptr<const EmbeddingBundle> bundle;
  std::uint64_t user_sample_seed = 0;

  bool ratings_mode() const { return bundle != nullptr; }
  std::size_t dim() const { return bundle ? bundle->d : synthetic.dim; }
};

struct RoundRecord {
  std::uint64_t t = 0;
  std::size_t user = 0;
  std::vector<std::size_t> action;  // item ids in display order
  double pseudo_regret = 0.0;
  bool communicated = false;
  Trigger trigger = Trigger::kNone;
  bool coin_fired = false;  // auxiliary coin outcome, whether or not it decided the round
  std::optional<double> cluster_error_rate;
};

// Per-round diagnostics handed to observers; not retained in RunResult.
struct StepTrace {
  RoundRecord record;
  bool agent_synced = false;  // agent had downloaded at least once before acting
  Vector played_ucb;
  Vector played_weight;
};

struct RunResult {
  std::vector<RoundRecord> records;
  std::vector<double> cumulative_regret;
  std::vector<std::uint64_t> cumulative_comm;
  std::vector<std::vector<std::size_t>> final_components;
  std::vector<std::uint64_t> forced_triggers;  // per agent
  std::vector<std::uint64_t> arrivals;         // per agent
  std::uint64_t coin_fires = 0;
  std::uint64_t deleted_edges = 0;
};

// Fraction of users whose component is not set-equal to their true cluster.
inline double clustering_error_rate(const std::vector<std::vector<std::size_t>>& components,
                                    const GroundTruth& truth) {
  const std::size_t n = truth.num_users;
  std::vector<std::size_t> comp_of(n, SIZE_MAX);
  for (std::size_t c = 0; c < components.size(); ++c)
    for (std::size_t u : components[c]) {
      if (u >= n || comp_of[u] != SIZE_MAX)
        throw std::invalid_argument("clustering_error_rate: components are not a partition");
      comp_of[u] = c;
    }
  for (std::size_t u = 0; u < n; ++u)
    if (comp_of[u] == SIZE_MAX)
      throw std::invalid_argument("clustering_error_rate: components are not a partition");

  std::vector<std::size_t> comp_size(components.size(), 0), cluster_size(truth.thetas.size(), 0);
  for (std::size_t u = 0; u < n; ++u) {
    ++comp_size[comp_of[u]];
    ++cluster_size[truth.cluster_of[u]];
  }
  // A component equals a cluster iff it is pure and has the cluster's size.
  std::vector<char> pure(components.size(), 1);
  for (std::size_t c = 0; c < components.size(); ++c)
    for (std::size_t u : components[c])
      if (truth.cluster_of[u] != truth.cluster_of[components[c].front()]) pure[c] = 0;
  std::size_t wrong = 0;
  for (std::size_t u = 0; u < n; ++u) {
    const std::size_t c = comp_of[u];
    if (!pure[c] || comp_size[c] != cluster_size[truth.cluster_of[u]]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(n);
}

class Simulation {
 public:
  Simulation(const EnvironmentConfig& env, AlgorithmParams params, std::uint64_t seed)
      : env_(env),
        arrivals_(Rng::stream(seed, Stream::kArrivals)),
        items_(Rng::stream(seed, Stream::kItems)),
        clicks_(Rng::stream(seed, Stream::kClicks)),
        coin_(Rng::stream(seed, Stream::kCoin)) {
    if (env.ratings_mode()) {
      Rng sample = Rng::stream(env.user_sample_seed, Stream::kUserSample);
      truth_ = ground_truth_from_bundle(*env.bundle, env.synthetic.num_users, sample);
      if (env.synthetic.K == 0 || env.synthetic.K > env.synthetic.items_per_round)
        throw std::invalid_argument("K must be in [1, items_per_round]");
    } else {
      Rng theta = Rng::stream(seed, Stream::kTheta);
      truth_ = generate_synthetic(env.synthetic, theta);
    }
    params.num_users = truth_.num_users;
    params.K = env.synthetic.K;
    params.d = truth_.dim();
    params.T = std::max<std::uint64_t>(env.synthetic.horizon, 1);
    params.validate();
    params_ = params;
    beta_ = beta_federated(params_);
    for (std::size_t u = 0; u < truth_.num_users; ++u) agents_.push_back(make_agent(u, params_));
    server_ = ServerState(truth_.num_users, params_.d, params_.lambda);
    forced_.assign(truth_.num_users, 0);
  }

  const GroundTruth& truth() const { return truth_; }
  const AlgorithmParams& params() const { return params_; }
  const ServerState& server() const { return server_; }
  const std::vector<AgentState>& agents() const { return agents_; }
  double beta() const { return beta_; }
  std::uint64_t coin_fires() const { return coin_fires_; }
  std::uint64_t deleted_edges() const { return deleted_edges_; }
  const std::vector<std::uint64_t>& forced_triggers() const { return forced_; }

  // Server's current partition; singletons for fed_ind, which has no server.
  std::vector<std::vector<std::size_t>> components() const {
    if (params_.protocol == Protocol::kFedInd) {
      std::vector<std::vector<std::size_t>> out;
      for (std::size_t u = 0; u < truth_.num_users; ++u) out.push_back({u});
      return out;
    }
    return connected_components(server_);
  }

  StepTrace step(std::uint64_t t) {
    if (t < 1) throw std::invalid_argument("step: t must be >= 1");
    const bool clip = env_.synthetic.clip_weights;
    const RoundContext ctx = draw_round(truth_, env_.synthetic.items_per_round, t, arrivals_, items_);
    AgentState& agent = agents_[ctx.user];

    StepTrace trace;
    trace.agent_synced = agent.synced;
    const double beta = params_.beta_scale * (params_.protocol == Protocol::kFedInd
                                                  ? beta_single(agent.local.count, params_)
                                                  : beta_);
    const Vector ucb = compute_ucbs(agent, ctx, beta);
    const Action action = oracle_topk(ucb, params_.K);
    const Feedback fb = play(truth_, ctx, action, clip, clicks_);
    const Vector weights = true_weights(truth_, ctx, clip);

    RoundRecord& rec = trace.record;
    rec.t = t;
    rec.user = ctx.user;
    for (std::size_t i : action.items) {
      rec.action.push_back(ctx.items[i].id);
      trace.played_ucb.push_back(ucb[i]);
      trace.played_weight.push_back(weights[i]);
    }
    rec.pseudo_regret = per_round_regret(weights, action);

    absorb_feedback(agent, ctx, action, fb);
    if (params_.protocol == Protocol::kFedInd) {
      refit_independent(agent, params_.lambda);
      return trace;
    }

    double coin = 1.0;
    if (params_.protocol == Protocol::kFedC3UcbH) {
      coin = coin_.uniform();
      rec.coin_fired = coin < auxiliary_probability(t);
      if (rec.coin_fired) ++coin_fires_;
    }
    rec.trigger = communication_trigger(agent, params_, t, coin);
    rec.communicated = rec.trigger != Trigger::kNone;
    if (rec.trigger == Trigger::kForcedArrival) ++forced_[ctx.user];
    if (rec.communicated) communicate(agent, t);
    return trace;
  }

  std::uint64_t horizon() const { return env_.synthetic.horizon; }

 private:
  void communicate(AgentState& agent, std::uint64_t t) {
    const std::size_t u = agent.user;
    const bool clustering = params_.protocol != Protocol::kFedLinUcb;
    std::optional<ClusterModel> model;
    if (params_.server_order == ServerOrder::kLiteral)
      model = aggregate_component(server_, connected_component(server_, u));
    server_.receive_upload(u, agent.local);
    if (clustering) deleted_edges_ += update_graph(server_, u, params_.alpha_d);
    if (!model) model = aggregate_component(server_, connected_component(server_, u));
    apply_download(agent, model->sigma, model->theta, static_cast<std::int64_t>(t));
  }

  EnvironmentConfig env_;
  AlgorithmParams params_;
  GroundTruth truth_;
  Rng arrivals_, items_, clicks_, coin_;
  std::vector<AgentState> agents_;
  ServerState server_;
  double beta_ = 0.0;
  std::vector<std::uint64_t> forced_;
  std::uint64_t coin_fires_ = 0;
  std::uint64_t deleted_edges_ = 0;
};

using StepObserver = std::function<void(const StepTrace&, const Simulation&)>;

inline std::uint64_t default_snapshot_interval(std::uint64_t horizon) {
  return std::max<std::uint64_t>(1, horizon / 200);
}

// Rounds at which cluster error is sampled: multiples of the interval, plus T.
inline bool is_snapshot_round(std::uint64_t t, std::uint64_t interval, std::uint64_t horizon) {
  return t == horizon || (interval > 0 && t % interval == 0);
}

inline RunResult run(const EnvironmentConfig& env, const AlgorithmParams& params,
                     std::uint64_t seed, std::uint64_t snapshot_interval = 0,
                     const StepObserver& observer = {}) {
  Simulation sim(env, params, seed);
  const std::uint64_t horizon = env.synthetic.horizon;
  const std::uint64_t interval =
      snapshot_interval > 0 ? snapshot_interval : default_snapshot_interval(horizon);
  RunResult out;
  out.records.reserve(horizon);
  double regret = 0.0;
  std::uint64_t comm = 0;
  for (std::uint64_t t = 1; t <= horizon; ++t) {
    StepTrace trace = sim.step(t);
    if (is_snapshot_round(t, interval, horizon))
      trace.record.cluster_error_rate = clustering_error_rate(sim.components(), sim.truth());
    if (observer) observer(trace, sim);
    regret += trace.record.pseudo_regret;
    comm += trace.record.communicated ? 1 : 0;
    out.cumulative_regret.push_back(regret);
    out.cumulative_comm.push_back(comm);
    out.records.push_back(std::move(trace.record));
  }
  out.final_components = sim.components();
  out.forced_triggers = sim.forced_triggers();
  for (const auto& a : sim.agents()) out.arrivals.push_back(a.arrivals);
  out.coin_fires = sim.coin_fires();
  out.deleted_edges = sim.deleted_edges();
  return out;
}

}  // namespace fedcascade
