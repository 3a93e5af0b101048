#pragma once

// Local learning agent: optimistic item scores from the last downloaded
// cluster model, a local buffer of cascade observations, and the
// communication trigger evaluated after every round the agent serves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedcascade/environment.hpp"
#include "fedcascade/numerics.hpp"

namespace fedcascade {

enum class Protocol { kFedC3UcbH, kNoAuxiliary, kForceComm, kFedLinUcb, kFedInd };

inline constexpr Protocol kAllProtocols[] = {Protocol::kFedC3UcbH, Protocol::kNoAuxiliary,
                                             Protocol::kForceComm, Protocol::kFedLinUcb,
                                             Protocol::kFedInd};

inline std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kFedC3UcbH: return "fedc3ucb_h";
    case Protocol::kNoAuxiliary: return "no_auxiliary";
    case Protocol::kForceComm: return "force_comm";
    case Protocol::kFedLinUcb: return "fed_lin_ucb";
    case Protocol::kFedInd: return "fed_ind";
  }
  return "unknown";
}

inline Protocol parse_protocol(const std::string& s) {
  for (Protocol p : kAllProtocols)
    if (to_string(p) == s) return p;
  throw std::invalid_argument("unknown protocol '" + s + "'");
}

// Server-side ordering of a communication round.
enum class ServerOrder {
  kUploadFirst,  // upload, delete edges, then aggregate the post-deletion component
  kLiteral,      // aggregate the pre-upload component, then upload and delete
};

struct AlgorithmParams {
  double lambda = 1.0;
  double alpha_c = 1.0 / 1600.0;
  double alpha_d = 1.0;
  double delta = 1e-3;
  double R = 0.5;  // sub-Gaussian scale of Bernoulli click noise
  std::size_t K = 4;
  std::size_t d = 20;
  std::uint64_t T = 1000;
  std::size_t num_users = 40;
  Protocol protocol = Protocol::kFedC3UcbH;
  ServerOrder server_order = ServerOrder::kUploadFirst;
  // Multiplier on the confidence radius used for action selection (both the
  // federated and the single-agent radius). 1 is the theoretical radius.
  double beta_scale = 1.0;

  // alpha_c = 1/|U|^2, delta = 1/T, and lambda raised to K+1 under force_comm.
  static AlgorithmParams defaults_for(std::size_t num_users, std::size_t K, std::size_t d,
                                      std::uint64_t T, Protocol protocol) {
    AlgorithmParams p;
    p.num_users = num_users;
    p.K = K;
    p.d = d;
    p.T = T;
    p.protocol = protocol;
    p.alpha_c = 1.0 / (static_cast<double>(num_users) * static_cast<double>(num_users));
    p.delta = T > 1 ? 1.0 / static_cast<double>(T) : 0.5;
    if (protocol == Protocol::kForceComm) p.lambda = static_cast<double>(K) + 1.0;
    return p;
  }

  void validate() const {
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
    if (!(alpha_c > 0.0)) throw std::invalid_argument("alpha_c must be > 0");
    if (!(alpha_d > 0.0)) throw std::invalid_argument("alpha_d must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must be in (0,1)");
    if (!(R > 0.0)) throw std::invalid_argument("R must be > 0");
    if (!(beta_scale >= 0.0)) throw std::invalid_argument("beta_scale must be >= 0");
    if (K == 0) throw std::invalid_argument("K must be >= 1");
    if (d == 0) throw std::invalid_argument("dim must be >= 1");
    if (num_users == 0) throw std::invalid_argument("num_users must be >= 1");
    if (protocol == Protocol::kForceComm && !(lambda > static_cast<double>(K)))
      throw std::invalid_argument("force_comm requires lambda > K");
  }
};

// Confidence radius for the federated protocols:
//   sqrt(lambda) + R (sqrt(1 + |U| a_c) + |U| sqrt(2 a_c))
//     * sqrt(d log(1 + K T / (a_c lambda d)) + 2 log(1/delta) + 4 log(T |U|))
// R = 1 gives the radius without the noise scale.
inline double beta_federated(const AlgorithmParams& p) {
  if (!(p.delta > 0.0 && p.delta < 1.0)) throw std::invalid_argument("delta must be in (0,1)");
  const double users = static_cast<double>(p.num_users);
  const double d = static_cast<double>(p.d);
  const double kt = static_cast<double>(p.K) * static_cast<double>(p.T);
  const double inflation = std::sqrt(1.0 + users * p.alpha_c) + users * std::sqrt(2.0 * p.alpha_c);
  const double inner = d * std::log1p(kt / (p.alpha_c * p.lambda * d)) +
                       2.0 * std::log(1.0 / p.delta) +
                       4.0 * std::log(static_cast<double>(p.T) * users);
  return std::sqrt(p.lambda) + p.R * inflation * std::sqrt(inner);
}

// Single-agent self-normalized radius after `count` observations (norm bound S = 1).
inline double beta_single(std::uint64_t count, const AlgorithmParams& p) {
  if (!(p.delta > 0.0 && p.delta < 1.0)) throw std::invalid_argument("delta must be in (0,1)");
  const double d = static_cast<double>(p.d);
  const double inner = d * std::log1p(static_cast<double>(count) / (p.lambda * d)) +
                       2.0 * std::log(1.0 / p.delta);
  return p.R * std::sqrt(inner) + std::sqrt(p.lambda);
}

// min(1, 3 ln t / t)
inline double auxiliary_probability(std::uint64_t t) {
  if (t < 1) throw std::invalid_argument("auxiliary_probability: t must be >= 1");
  const double td = static_cast<double>(t);
  return std::min(1.0, 3.0 * std::log(td) / td);
}

inline bool is_power_of_two(std::uint64_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Ridge sufficient statistics over observed base-arm pulls.
struct GramSummary {
  SymMatrix sigma;
  Vector b;
  std::uint64_t count = 0;

  static GramSummary empty(std::size_t d) { return {SymMatrix::zero(d), Vector(d, 0.0), 0}; }

  void add(std::span<const double> x, bool clicked) {
    sigma.add_outer(x);
    if (clicked) axpy(1.0, x, b);
    ++count;
  }

  GramSummary& operator+=(const GramSummary& o) {
    sigma += o.sigma;
    axpy(1.0, o.b, b);
    count += o.count;
    return *this;
  }
};

struct AgentState {
  std::size_t user = 0;
  SymMatrix model_sigma;
  Vector model_theta;
  Factorization model_factor;
  // Factor of model_sigma + local.sigma, kept current by rank-1 updates.
  Factorization combined_factor;
  GramSummary local;
  std::uint64_t arrivals = 0;
  std::int64_t last_sync_round = 0;
  bool synced = false;
};

inline AgentState make_agent(std::size_t user, const AlgorithmParams& p) {
  AgentState st;
  st.user = user;
  st.model_sigma = regularized(p.d, p.lambda);
  st.model_theta = Vector(p.d, 0.0);
  st.model_factor = Factorization::of(st.model_sigma);
  st.combined_factor = st.model_factor;
  st.local = GramSummary::empty(p.d);
  return st;
}

// min{theta^T x + beta ||x||_{Sigma^-1}, 1}, floored at 0 since true weights are.
inline Vector compute_ucbs(const Factorization& f, std::span<const double> theta,
                           const RoundContext& ctx, double beta) {
  Vector u;
  u.reserve(ctx.items.size());
  for (const auto& it : ctx.items) {
    const double score = dot(theta, it.x) + beta * f.mahalanobis_inv(it.x);
    u.push_back(std::clamp(score, 0.0, 1.0));
  }
  return u;
}

inline Vector compute_ucbs(const AgentState& st, const RoundContext& ctx, double beta) {
  return compute_ucbs(st.model_factor, st.model_theta, ctx, beta);
}

inline void absorb_feedback(AgentState& st, const RoundContext& ctx, const Action& a,
                            const Feedback& fb) {
  if (fb.observed > a.items.size() || fb.clicks.size() != fb.observed)
    throw std::invalid_argument("absorb_feedback: feedback does not match action");
  for (std::size_t k = 0; k < fb.observed; ++k) {
    const Vector& x = ctx.items.at(a.items[k]).x;
    st.local.add(x, fb.clicks[k]);
    st.combined_factor.rank1_update(x);
  }
  ++st.arrivals;
}

// Independent-learner refit: the decision model becomes
// (lambda I + all local data, its ridge estimate). The buffer is never reset.
inline void refit_independent(AgentState& st, double lambda) {
  st.model_sigma = st.local.sigma;
  st.model_sigma.add_diagonal(lambda);
  st.model_factor = st.combined_factor;
  st.model_theta = st.model_factor.solve(st.local.b);
}

enum class Trigger { kNone, kDeterminant, kAuxiliaryCoin, kForcedArrival };

inline std::string to_string(Trigger t) {
  switch (t) {
    case Trigger::kNone: return "none";
    case Trigger::kDeterminant: return "determinant";
    case Trigger::kAuxiliaryCoin: return "auxiliary_coin";
    case Trigger::kForcedArrival: return "forced_arrival";
  }
  return "unknown";
}

// The determinant rule takes precedence when several rules fire.
inline Trigger communication_trigger(const AgentState& st, const AlgorithmParams& p,
                                     std::uint64_t t, double coin) {
  if (t < 1) throw std::invalid_argument("communication_trigger: t must be >= 1");
  if (p.protocol == Protocol::kFedInd) return Trigger::kNone;
  if (det_condition(st.model_factor.logdet(), st.combined_factor.logdet(), p.alpha_c))
    return Trigger::kDeterminant;
  switch (p.protocol) {
    case Protocol::kFedC3UcbH:
      if (coin < auxiliary_probability(t)) return Trigger::kAuxiliaryCoin;
      break;
    case Protocol::kForceComm:
      if (is_power_of_two(st.arrivals)) return Trigger::kForcedArrival;
      break;
    default:
      break;
  }
  return Trigger::kNone;
}

inline bool should_communicate(const AgentState& st, const AlgorithmParams& p, std::uint64_t t,
                               double coin) {
  return communication_trigger(st, p, t, coin) != Trigger::kNone;
}

inline void apply_download(AgentState& st, const SymMatrix& cluster_sigma,
                           std::span<const double> cluster_theta, std::int64_t t) {
  check_dim(st.model_theta.size(), cluster_theta.size());
  st.model_factor = Factorization::of(cluster_sigma);
  st.model_sigma = cluster_sigma;
  st.model_theta.assign(cluster_theta.begin(), cluster_theta.end());
  st.combined_factor = st.model_factor;
  st.local = GramSummary::empty(st.model_theta.size());
  st.last_sync_round = t;
  st.synced = true;
}

}  // namespace fedcascade
