#include <gtest/gtest.h>

#include <random>

#include "pacs/objectives.hpp"

using namespace pacs;

namespace {

Architecture arch() {
  Architecture a;
  a.vocab_size = 3;
  a.window = 2;
  a.hidden = 4;
  a.max_len = 3;
  a.terminal = 2;
  a.query_slots = 1;
  return a;
}

PolicyParameters random_policy(std::uint64_t seed) {
  PolicyParameters p = initialize_policy(arch(), seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& x : p.theta) x = u(rng);
  return p;
}

RolloutGroup make_group(const PolicyParameters& policy, const PolicyParameters& ref, std::vector<TokenSequence> outs,
                        std::vector<int> rewards) {
  RolloutGroup g;
  g.query = Query{"toy", 0, 0, {}};
  g.outputs = std::move(outs);
  for (std::size_t i = 0; i < g.outputs.size(); ++i) {
    g.logprobs_reference.push_back(sequence_log_prob(ref, g.query, g.outputs[i]));
    g.logprobs_rollout.push_back(sequence_log_prob(policy, g.query, g.outputs[i]));
    g.rewards.push_back({rewards[i]});
  }
  return g;
}

const std::vector<TokenSequence> kTwo{TokenSequence{{0, 1}, false}, TokenSequence{{1, 2}, true}};
const std::vector<TokenSequence> kFour{TokenSequence{{0, 1}, false}, TokenSequence{{1, 0}, false},
                                       TokenSequence{{0, 0}, false}, TokenSequence{{1, 1}, false}};

}  // namespace

TEST(PerSampleLoss, Examples) {
  EXPECT_NEAR(per_sample_loss(BinaryReward{1}, 0.0), std::log(0.5), 1e-15);
  EXPECT_NEAR(per_sample_loss(BinaryReward{0}, -1e6), 0.0, 1e-300);
  EXPECT_LE(per_sample_loss(BinaryReward{0}, 3.0), 0.0);
  EXPECT_THROW(per_sample_loss(BinaryReward{2}, 0.0), InputError);
}

TEST(ClassWeights, Examples) {
  const std::vector<BinaryReward> balanced{{1}, {0}, {1}, {0}};
  const auto w1 = class_weights(balanced, WeightScope::batch);
  EXPECT_EQ(w1.correct, 1.0);
  EXPECT_EQ(w1.incorrect, 1.0);
  const std::vector<BinaryReward> skewed{{1}, {1}, {0}, {0}, {0}, {0}, {0}, {0}};
  const auto w2 = class_weights(skewed, WeightScope::group);
  EXPECT_DOUBLE_EQ(w2.correct, 2.0);
  EXPECT_NEAR(w2.incorrect, 0.6667, 1e-4);
  const std::vector<BinaryReward> none{{0}, {0}, {0}};
  const auto w3 = class_weights(none, WeightScope::batch);
  EXPECT_EQ(w3.correct, 1.0);
  EXPECT_EQ(w3.incorrect, 1.0);
}

TEST(PacsLoss, EqualPoliciesGiveLn2) {
  const PolicyParameters p = random_policy(1);
  const RolloutGroup g = make_group(p, p, kTwo, {1, 0});
  for (GradientMode mode : {GradientMode::direct, GradientMode::full}) {
    ad::Graph graph;
    BoundPolicy bound(graph, p);
    PacsOptions o;
    o.mode = mode;
    EXPECT_NEAR(pacs_loss(bound, g, o).value(), std::log(2.0), 1e-14);
  }
}

TEST(PacsLoss, PerfectPredictionGivesZero) {
  const PolicyParameters p = random_policy(2);
  PolicyParameters ref = p;
  const ParameterLayout layout(p.arch);
  ref.theta[layout.output_bias] -= 40.0;  // token 0 far less likely under the reference
  // o0 starts with token 0 (large positive proxy), o1 does not.
  const RolloutGroup g = make_group(p, ref, {TokenSequence{{0}, false}, TokenSequence{{1}, false}}, {1, 0});
  ad::Graph graph;
  BoundPolicy bound(graph, p);
  EXPECT_LT(pacs_loss(bound, g, PacsOptions{}).value(), 1e-15);
}

TEST(PacsLoss, NonBinaryRewardRejected) {
  const PolicyParameters p = random_policy(3);
  RolloutGroup g = make_group(p, p, kTwo, {1, 0});
  g.rewards[1].value = 3;
  ad::Graph graph;
  BoundPolicy bound(graph, p);
  EXPECT_THROW(pacs_loss(bound, g, PacsOptions{}), InputError);
}

TEST(PacsLoss, FullModeAddsScoreFunctionGradient) {
  const PolicyParameters p = random_policy(4);
  const PolicyParameters ref = random_policy(5);
  const RolloutGroup g = make_group(p, ref, kFour, {1, 0, 0, 1});
  ad::Graph graph;
  BoundPolicy bound(graph, p);
  PacsOptions direct;
  direct.mode = GradientMode::direct;
  const Var ld = pacs_loss(bound, g, direct);
  const auto gd = graph.backward(ld);
  PacsOptions full;
  const Var lf = pacs_loss(bound, g, full);
  const auto gf = graph.backward(lf);
  EXPECT_DOUBLE_EQ(ld.value(), lf.value());
  // full = direct + (-lbar) * sum_j grad lp_j, and -lbar = loss value
  std::vector<Var> lps;
  for (const auto& o : g.outputs) lps.push_back(bound.sequence_log_prob(g.query, o).total);
  const auto glp = graph.backward(ad::sum(std::span<const Var>(lps)));
  for (std::size_t i = 0; i < gd.size(); ++i) EXPECT_NEAR(gf[i], gd[i] + ld.value() * glp[i], 1e-12);
}

TEST(Decomposition, CriticResidualAtZeroScore) {
  const PolicyParameters p = random_policy(6);
  const RolloutGroup g = make_group(p, p, kTwo, {1, 0});
  ad::Graph graph;
  BoundPolicy bound(graph, p);
  PacsOptions o;
  const GradientDecomposition d = pacs_gradient_terms(bound, g, o);
  // psi_1 = lp_1 - lp_2 at G = 2; residuals (0.5, -0.5) give critic = -0.5 grad psi_1.
  const Var psi1 = bound.sequence_log_prob(g.query, g.outputs[0]).total - bound.sequence_log_prob(g.query, g.outputs[1]).total;
  const auto gpsi = graph.backward(psi1);
  for (std::size_t i = 0; i < gpsi.size(); ++i) EXPECT_NEAR(d.critic[i], -0.5 * gpsi[i], 1e-13);

  DecompositionHooks hooks;
  hooks.force_perfect_prediction = true;
  const GradientDecomposition perfect = pacs_gradient_terms(bound, g, o, hooks);
  for (std::size_t i = 0; i < gpsi.size(); ++i) {
    EXPECT_EQ(perfect.critic[i], 0.0);
    EXPECT_NEAR(perfect.total[i], perfect.actor[i], 1e-15);
  }
}

TEST(Clip, Arithmetic) {
  EXPECT_DOUBLE_EQ(clipped_objective(1.0, 0.7, 0.2), 0.7);
  EXPECT_DOUBLE_EQ(clipped_objective(1.5, 1.0, 0.2), 1.2);
  EXPECT_DOUBLE_EQ(clipped_objective(0.5, -1.0, 0.2), -0.8);
}

TEST(KlK3, Examples) {
  EXPECT_EQ(kl_estimate_k3(-1.3, -1.3), 0.0);
  EXPECT_NEAR(kl_estimate_k3(0.0, std::log(2.0)), 2 - std::log(2.0) - 1, 1e-15);
  EXPECT_NEAR(kl_estimate_k3(0.0, std::log(2.0)), 0.3069, 1e-4);
  EXPECT_NEAR(kl_estimate_k3(0.0, std::log(0.5)), 0.1931, 1e-4);
}

TEST(Ppo, OnPolicyLossIsMinusMeanAdvantage) {
  const PolicyParameters p = random_policy(7);
  const RolloutGroup g = make_group(p, p, kTwo, {1, 0});
  const std::vector<AdvantageVector> adv{AdvantageVector{{0.5, 1.5}}, AdvantageVector{{-1.0, 0.0}}};
  ad::Graph graph;
  BoundPolicy bound(graph, p);
  EXPECT_NEAR(ppo_loss(bound, g, adv, 0.2).value(), -(1.0 + -0.5) / 2, 1e-14);

  RolloutGroup missing = g;
  missing.logprobs_rollout.clear();
  EXPECT_THROW(ppo_loss(bound, missing, adv, 0.2), InputError);
}

TEST(Grpo, Examples) {
  const PolicyParameters p = random_policy(8);
  ad::Graph graph;
  BoundPolicy bound(graph, p);
  GrpoOptions o;

  const RolloutGroup same = make_group(p, random_policy(9), kFour, {1, 1, 1, 1});
  const Var l0 = grpo_loss(bound, same, o);
  EXPECT_EQ(l0.value(), 0.0);
  const auto g0 = graph.backward(l0);
  for (double x : g0.values()) EXPECT_EQ(x, 0.0);

  const RolloutGroup mixed = make_group(p, p, kFour, {1, 0, 0, 1});
  EXPECT_NEAR(grpo_loss(bound, mixed, o).value(), 0.0, 1e-15);
  o.kl_beta = 0.5;
  EXPECT_NEAR(grpo_loss(bound, mixed, o).value(), 0.0, 1e-15);

  const auto adv = grpo_advantages(mixed, o);
  EXPECT_NEAR(adv[0], 1.0, 1e-7);
  EXPECT_NEAR(adv[1], -1.0, 1e-7);
}
