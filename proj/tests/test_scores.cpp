#include <gtest/gtest.h>

#include "pacs/scores.hpp"

using namespace pacs;

namespace {

SequenceLogProb lp(std::vector<double> per_token) {
  SequenceLogProb s;
  s.per_token = per_token;
  for (double x : per_token) s.total += x;
  return s;
}

}  // namespace

TEST(RewardProxy, Examples) {
  EXPECT_EQ(reward_proxy(lp({-1.0, -2.0}), lp({-1.0, -2.0}), 1.0).value, 0.0);
  EXPECT_NEAR(reward_proxy(lp({-0.8, -2.1}), lp({-1.0, -2.0}), 1.0).value, 0.1, 1e-12);
  EXPECT_NEAR(reward_proxy(lp({-0.8, -2.1}), lp({-1.0, -2.0}), 3.0).value, 0.3, 1e-12);
  EXPECT_THROW(reward_proxy(lp({-1.0}), lp({-1.0, -2.0}), 1.0), InputError);
  EXPECT_THROW(reward_proxy(lp({-1.0}), lp({-1.0}), 0.0), InputError);
}

TEST(Rloo, Examples) {
  const auto psi = rloo_scores<double>(std::vector<double>{1.0, 0.0, -1.0});
  EXPECT_NEAR(psi[0], 1.5, 1e-15);
  EXPECT_NEAR(psi[1], 0.0, 1e-15);
  EXPECT_NEAR(psi[2], -1.5, 1e-15);
  for (double x : rloo_scores<double>(std::vector<double>{2.5, 2.5, 2.5, 2.5})) EXPECT_EQ(x, 0.0);
  try {
    rloo_scores<double>(std::vector<double>{1.0});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("leave-one-out undefined for singleton groups"), std::string::npos);
  }
}

TEST(GroupNormalize, Examples) {
  const std::vector<double> v{1.0, 0.0, -1.0};
  EXPECT_EQ(group_normalize<double>(v, NormalizeMode::mean_only), v);
  const auto z = group_normalize<double>(v, NormalizeMode::mean_std, 0.0);
  EXPECT_NEAR(z[0], 1.2247, 1e-4);
  EXPECT_NEAR(z[1], 0.0, 1e-15);
  EXPECT_NEAR(z[2], -1.2247, 1e-4);
  EXPECT_NEAR(z[0], 1.0 / std::sqrt(2.0 / 3.0), 1e-14);
  for (double x : group_normalize<double>(std::vector<double>{4, 4, 4}, NormalizeMode::mean_std)) EXPECT_EQ(x, 0.0);
  const auto s = group_normalize<double>(v, NormalizeMode::mean_std, 0.0, StdKind::sample);
  EXPECT_NEAR(s[0], 1.0, 1e-14);
}

TEST(GroupNormalize, DegenerateGroupHasNoGradient) {
  ad::Graph g;
  const auto p = g.parameters(std::vector<double>{0.7, 0.7, 0.7});
  const auto z = group_normalize<ad::Var>(p, NormalizeMode::mean_std);
  const auto grad = g.backward(ad::sum(std::span<const ad::Var>(z)) + z[0] * 3.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(grad[i], 0.0);
}

TEST(ComputeScores, ClampAndEstimators) {
  ScoreOptions o;
  o.estimator = Estimator::dr_grpo;
  const std::vector<double> r{3.0, 1.0};
  EXPECT_EQ(compute_scores<double>(r, o).values, (std::vector<double>{1.0, -1.0}));
  o.estimator = Estimator::rloo;
  o.psi_clamp = 1.5;
  EXPECT_EQ(compute_scores<double>(r, o).values, (std::vector<double>{1.5, -1.5}));
  EXPECT_EQ(parse_estimator("dr-grpo"), Estimator::dr_grpo);
  EXPECT_THROW(parse_estimator("ppo"), ConfigError);
}

TEST(Gae, TelescopesWithUnitGammaLambda) {
  const std::vector<double> rewards{0, 0, 0, 1};
  const std::vector<double> values{0.2, 0.5, -0.3, 0.9};
  const auto a = gae_advantages(rewards, values, 1.0, 1.0);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(a.values[t], 1.0 - values[t], 1e-14);
}

TEST(Gae, ZeroInputsGiveZero) {
  const std::vector<double> zeros(5, 0.0);
  for (double x : gae_advantages(zeros, zeros, 0.99, 0.95).values) EXPECT_EQ(x, 0.0);
}

TEST(Gae, HandRecursion) {
  // delta = (r0 + g v1 - v0, r1 + g * bootstrap - v1) = (0 + 0.5 * 2 - 1, 2 + 0.5 * 4 - 2) = (0, 2)
  const auto a = gae_advantages(std::vector<double>{0, 2}, std::vector<double>{1, 2, 4}, 0.5, 0.5);
  EXPECT_NEAR(a.values[1], 2.0, 1e-15);
  EXPECT_NEAR(a.values[0], 0.0 + 0.25 * 2.0, 1e-15);
  EXPECT_THROW(gae_advantages(std::vector<double>{0, 2}, std::vector<double>{1}, 1, 1), InputError);
}
