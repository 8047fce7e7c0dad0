#pragma once

// Loss constructions over rollout groups.
//
// PACS treats the verifiable reward as a binary label and the policy-derived
// score psi as the logit of the predicted correctness:
//
//   l_i = R_i log sigma(psi_i) + (1 - R_i) log(1 - sigma(psi_i))
//   L   = -(1/G) sum_i w(R_i) l_i
//
// where psi is built from reward proxies beta * log(pi_theta / pi_ref).
// Because the outputs are sampled from pi_theta, the gradient of the expected
// loss also carries a score-function term. GradientMode::full adds it through
// a surrogate whose value equals L and whose gradient is the gradient of the
// sampled-expectation objective; GradientMode::direct differentiates L with the
// samples held fixed.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "pacs/autodiff.hpp"
#include "pacs/errors.hpp"
#include "pacs/policy.hpp"
#include "pacs/scores.hpp"
#include "pacs/types.hpp"

namespace pacs {

using ad::GradientMap;
using ad::Var;

enum class GradientMode { direct, full };

inline std::string_view to_string(GradientMode m) { return m == GradientMode::direct ? "direct" : "full"; }

inline GradientMode parse_gradient_mode(std::string_view s) {
  if (s == "direct") return GradientMode::direct;
  if (s == "full") return GradientMode::full;
  throw ConfigError("unknown gradient mode '" + std::string(s) + "' (valid: direct, full)");
}

/// How the score-function term is attached in full mode.
///   group       every member's log-prob carries the weighted group-mean loss (exact for coupled psi)
///   per_sample  each member's log-prob carries its own loss only
enum class Surrogate { group, per_sample };

inline std::string_view to_string(Surrogate s) { return s == Surrogate::group ? "group" : "per-sample"; }

inline Surrogate parse_surrogate(std::string_view s) {
  if (s == "group") return Surrogate::group;
  if (s == "per-sample") return Surrogate::per_sample;
  throw ConfigError("unknown surrogate '" + std::string(s) + "' (valid: group, per-sample)");
}

enum class WeightScope { batch, group };

inline std::string_view to_string(WeightScope s) { return s == WeightScope::batch ? "batch" : "group"; }

inline WeightScope parse_weight_scope(std::string_view s) {
  if (s == "batch") return WeightScope::batch;
  if (s == "group") return WeightScope::group;
  throw ConfigError("unknown weight scope '" + std::string(s) + "' (valid: batch, group)");
}

// ---------------------------------------------------------------------------
// Per-sample loss and class weights

/// R log sigma(psi) + (1 - R) log(1 - sigma(psi)); always <= 0.
template <class T>
T per_sample_loss(BinaryReward reward, const T& psi) {
  if (!reward.valid()) throw InputError("reward must be 0 or 1");
  return reward.correct() ? ad::log_sigmoid(psi) : ad::log_sigmoid(-psi);
}

struct ClassWeights {
  double correct = 1.0;
  double incorrect = 1.0;
  WeightScope scope = WeightScope::batch;

  double for_reward(BinaryReward r) const { return r.correct() ? correct : incorrect; }
};

/// Inverse class frequency normalized to mean 1: N / (2 n+) and N / (2 n-).
/// When one class is absent both weights are 1.
inline ClassWeights class_weights(std::span<const BinaryReward> rewards, WeightScope scope) {
  if (rewards.empty()) throw InputError("class_weights needs at least one reward");
  std::size_t positives = 0;
  for (BinaryReward r : rewards) {
    if (!r.valid()) throw InputError("reward must be 0 or 1");
    positives += r.correct() ? 1 : 0;
  }
  const std::size_t n = rewards.size();
  const std::size_t negatives = n - positives;
  ClassWeights w;
  w.scope = scope;
  if (positives == 0 || negatives == 0) return w;
  w.correct = static_cast<double>(n) / (2.0 * static_cast<double>(positives));
  w.incorrect = static_cast<double>(n) / (2.0 * static_cast<double>(negatives));
  return w;
}

// ---------------------------------------------------------------------------
// PACS

struct PacsOptions {
  double beta = 1.0;
  ScoreOptions scores;
  GradientMode mode = GradientMode::full;
  Surrogate surrogate = Surrogate::group;
  std::optional<ClassWeights> weights;
};

/// Intermediate quantities of one group, kept for diagnostics and decomposition.
struct PacsTerms {
  std::vector<Var> logprob;  ///< log pi_theta(o_i | q)
  std::vector<Var> proxy;    ///< r_hat_i
  std::vector<Var> psi;
  std::vector<Var> loss;     ///< l_i
  std::vector<double> weight;
  Var weighted_mean;         ///< (1/G) sum_i w_i l_i
};

inline PacsTerms pacs_terms(BoundPolicy& policy, const RolloutGroup& group, const PacsOptions& options) {
  validate_group(group);
  const std::size_t g = group.size();
  if (options.scores.estimator == Estimator::rloo && g < 2) {
    throw ConfigError("leave-one-out undefined for singleton groups (G must be >= 2)");
  }
  PacsTerms t;
  for (std::size_t i = 0; i < g; ++i) {
    const DiffSequenceLogProb lp = policy.sequence_log_prob(group.query, group.outputs[i]);
    t.logprob.push_back(lp.total);
    t.proxy.push_back(reward_proxy(lp, group.logprobs_reference[i], options.beta).value);
  }
  t.psi = compute_scores<Var>(t.proxy, options.scores).values;
  std::vector<Var> weighted;
  for (std::size_t i = 0; i < g; ++i) {
    t.loss.push_back(per_sample_loss(group.rewards[i], t.psi[i]));
    t.weight.push_back(options.weights ? options.weights->for_reward(group.rewards[i]) : 1.0);
    weighted.push_back(t.loss[i] * t.weight[i]);
  }
  t.weighted_mean = ad::sum(std::span<const Var>(weighted)) * (1.0 / static_cast<double>(g));
  return t;
}

/// PACS loss node for one group. Its value is always -(1/G) sum_i w_i l_i; in
/// full mode a zero-valued score-function term is attached for the gradient.
inline Var pacs_loss(BoundPolicy& policy, const RolloutGroup& group, const PacsOptions& options) {
  const PacsTerms t = pacs_terms(policy, group, options);
  const Var loss = -t.weighted_mean;
  if (options.mode == GradientMode::direct) return loss;

  const std::size_t g = group.size();
  std::vector<Var> score_terms;
  score_terms.reserve(g);
  if (options.surrogate == Surrogate::group) {
    const double lbar = t.weighted_mean.value();
    for (std::size_t j = 0; j < g; ++j) score_terms.push_back(t.logprob[j] * (-lbar));
  } else {
    const double inv_g = 1.0 / static_cast<double>(g);
    for (std::size_t i = 0; i < g; ++i) score_terms.push_back(t.logprob[i] * (-t.weight[i] * t.loss[i].value() * inv_g));
  }
  const Var score = ad::sum(std::span<const Var>(score_terms));
  return loss + (score - ad::stop_gradient(score));
}

struct GradientDecomposition {
  GradientMap actor;
  GradientMap critic;
  GradientMap total;
};

/// Test hooks for the decomposition. Not used on the training path.
struct DecompositionHooks {
  bool force_perfect_prediction = false;  ///< replace sigma(psi_i) by R_i in the critic residual
  bool flip_critic_sign = false;
};

/// actor  = -(1/G) sum_i w_i l_i grad log pi(o_i|q)
/// critic = -(1/G) sum_i w_i (R_i - sigma(psi_i)) grad psi_i
/// total  = gradient of (actor root + critic root)
/// All three are gradients of the loss; the descent direction is -total.
inline GradientDecomposition pacs_gradient_terms(BoundPolicy& policy, const RolloutGroup& group,
                                                 const PacsOptions& options, const DecompositionHooks& hooks = {}) {
  const PacsTerms t = pacs_terms(policy, group, options);
  const std::size_t g = group.size();
  const double inv_g = 1.0 / static_cast<double>(g);
  std::vector<Var> actor_terms;
  std::vector<Var> critic_terms;
  for (std::size_t i = 0; i < g; ++i) {
    actor_terms.push_back(t.logprob[i] * (-t.weight[i] * t.loss[i].value() * inv_g));
    const double r = static_cast<double>(group.rewards[i].value);
    double residual = hooks.force_perfect_prediction ? 0.0 : r - ad::sigmoid(t.psi[i].value());
    if (hooks.flip_critic_sign) residual = -residual;
    critic_terms.push_back(t.psi[i] * (-t.weight[i] * residual * inv_g));
  }
  const Var actor_root = ad::sum(std::span<const Var>(actor_terms));
  const Var critic_root = ad::sum(std::span<const Var>(critic_terms));
  ad::Graph& graph = policy.graph();
  GradientDecomposition d;
  d.actor = graph.backward(actor_root);
  d.critic = graph.backward(critic_root);
  d.total = graph.backward(actor_root + critic_root);
  return d;
}

// ---------------------------------------------------------------------------
// PPO / GRPO baselines

/// min(rho A, clip(rho, 1 - eps, 1 + eps) A), the per-token clipped objective.
template <class T>
T clipped_objective(const T& ratio, double advantage, double clip_eps) {
  const T unclipped = ratio * advantage;
  const T clipped = ad::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage;
  return ad::select(ad::value_of(unclipped) <= ad::value_of(clipped), unclipped, clipped);
}

/// k3 estimate r - log r - 1 with r = pi_ref / pi_theta, evaluated as expm1(d) - d, d = log r.
template <class T>
T kl_estimate_k3(const T& logp_current, double logp_reference) {
  const T d = logp_reference - logp_current;
  const T k = ad::expm1(d) - d;
  if constexpr (std::is_same_v<T, double>) {
    return std::max(k, 0.0);  // expm1 rounding can land one ulp below d
  } else {
    return k;
  }
}

namespace detail {

inline void check_clip(double clip_eps) {
  if (!(clip_eps > 0.0)) throw InputError("clip_eps must be positive");
}

// Mean over outputs of the token-mean of `token_term(i, t, logp_t)`; empty outputs are skipped.
template <class F>
Var token_mean_objective(BoundPolicy& policy, const RolloutGroup& group, F&& token_term) {
  std::vector<Var> per_output;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const TokenSequence& o = group.outputs[i];
    if (o.size() == 0) continue;
    const DiffSequenceLogProb lp = policy.sequence_log_prob(group.query, o);
    std::vector<Var> terms;
    terms.reserve(o.size());
    for (std::size_t t = 0; t < o.size(); ++t) terms.push_back(token_term(i, t, lp.per_token[t]));
    per_output.push_back(ad::sum(std::span<const Var>(terms)) * (1.0 / static_cast<double>(o.size())));
  }
  if (per_output.empty()) return policy.graph().constant(0.0);
  return ad::sum(std::span<const Var>(per_output)) * (1.0 / static_cast<double>(per_output.size()));
}

}  // namespace detail

/// Negated clipped surrogate, token-averaged per output then averaged over outputs.
inline Var ppo_loss(BoundPolicy& policy, const RolloutGroup& group, std::span<const AdvantageVector> advantages,
                    double clip_eps) {
  validate_group(group, /*need_rollout=*/true);
  detail::check_clip(clip_eps);
  if (advantages.size() != group.size()) throw InputError("one advantage vector per output required");
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (advantages[i].size() != group.outputs[i].size()) {
      throw InputError("advantage length does not match output " + std::to_string(i));
    }
  }
  const Var objective = detail::token_mean_objective(policy, group, [&](std::size_t i, std::size_t t, Var logp) {
    const Var ratio = ad::exp(logp - group.logprobs_rollout[i].per_token[t]);
    return clipped_objective(ratio, advantages[i].values[t], clip_eps);
  });
  return -objective;
}

struct GrpoOptions {
  double clip_eps = 0.2;
  double kl_beta = 0.0;
  double std_epsilon = kDefaultStdEpsilon;
  StdKind std_kind = StdKind::population;
};

/// Group-normalized raw rewards, one advantage per output.
inline std::vector<double> grpo_advantages(const RolloutGroup& group, const GrpoOptions& options) {
  std::vector<double> r;
  for (BinaryReward b : group.rewards) r.push_back(static_cast<double>(b.value));
  return group_normalize<double>(r, NormalizeMode::mean_std, options.std_epsilon, options.std_kind);
}

/// Negated GRPO objective: clipped term with group-normalized advantages minus
/// kl_beta times the token-mean k3 penalty against the reference policy.
inline Var grpo_loss(BoundPolicy& policy, const RolloutGroup& group, const GrpoOptions& options) {
  validate_group(group, /*need_rollout=*/true);
  detail::check_clip(options.clip_eps);
  if (group.size() < 2) throw ConfigError("GRPO needs G >= 2");
  const std::vector<double> adv = grpo_advantages(group, options);
  const Var objective = detail::token_mean_objective(policy, group, [&](std::size_t i, std::size_t t, Var logp) {
    const Var ratio = ad::exp(logp - group.logprobs_rollout[i].per_token[t]);
    Var term = clipped_objective(ratio, adv[i], options.clip_eps);
    if (options.kl_beta != 0.0) {
      term = term - kl_estimate_k3(logp, group.logprobs_reference[i].per_token[t]) * options.kl_beta;
    }
    return term;
  });
  return -objective;
}

}  // namespace pacs
