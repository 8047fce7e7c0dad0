#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pacs/optimizer.hpp"

using namespace pacs;

TEST(Adam, ZeroGradientLeavesParametersExactly) {
  std::vector<double> p{0.3, -1.2, 5.0};
  const std::vector<double> before = p;
  OptimizerState s(AdamConfig{}, 3);
  for (int i = 0; i < 5; ++i) ASSERT_EQ(adaptive_moment_step(p, ad::GradientMap(3), s), StepOutcome::applied);
  EXPECT_EQ(p, before);
}

TEST(Adam, ZeroRateLeavesParameters) {
  std::vector<double> p{0.3, -1.2};
  const std::vector<double> before = p;
  AdamConfig c;
  c.learning_rate = 0.0;
  OptimizerState s(c, 2);
  adaptive_moment_step(p, ad::GradientMap(std::vector<double>{1.0, -2.0}), s);
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepIsRateTimesSign) {
  std::vector<double> p{0.0, 0.0, 0.0};
  AdamConfig c;
  c.learning_rate = 0.01;
  OptimizerState s(c, 3);
  adaptive_moment_step(p, ad::GradientMap(std::vector<double>{3.0, -0.002, 150.0}), s);
  EXPECT_NEAR(p[0], -0.01, 1e-9);
  EXPECT_NEAR(p[1], 0.01, 1e-7);
  EXPECT_NEAR(p[2], -0.01, 1e-9);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, MatchesHandRecursion) {
  const AdamConfig c{0.05, 0.8, 0.95, 1e-6};
  std::vector<double> p{1.0};
  OptimizerState s(c, 1);
  double x = 1.0, m = 0.0, v = 0.0;
  const double grads[] = {0.5, -1.5, 2.0, 0.1};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    adaptive_moment_step(p, ad::GradientMap(std::vector<double>{g}), s);
    m = 0.8 * m + 0.2 * g;
    v = 0.95 * v + 0.05 * g * g;
    x -= 0.05 * (m / (1 - std::pow(0.8, t))) / (std::sqrt(v / (1 - std::pow(0.95, t))) + 1e-6);
    EXPECT_NEAR(p[0], x, 1e-15);
  }
}

TEST(Adam, NonFiniteGradientAbortsUntouched) {
  std::vector<double> p{1.0, 2.0};
  OptimizerState s(AdamConfig{}, 2);
  adaptive_moment_step(p, ad::GradientMap(std::vector<double>{0.1, 0.2}), s);
  const std::vector<double> before = p;
  const OptimizerState saved = s;
  EXPECT_EQ(adaptive_moment_step(p, ad::GradientMap(std::vector<double>{std::numeric_limits<double>::quiet_NaN(), 0.0}), s),
            StepOutcome::aborted_non_finite);
  EXPECT_EQ(p, before);
  EXPECT_TRUE(s == saved);
}

TEST(Adam, ShapeMismatchThrows) {
  std::vector<double> p{1.0, 2.0};
  OptimizerState s(AdamConfig{}, 2);
  EXPECT_THROW(adaptive_moment_step(p, ad::GradientMap(3), s), InputError);
}

TEST(Adam, ResetZeroesMomentsKeepsConfig) {
  std::vector<double> p{1.0};
  AdamConfig c;
  c.learning_rate = 0.2;
  OptimizerState s(c, 1);
  adaptive_moment_step(p, ad::GradientMap(std::vector<double>{1.0}), s);
  s.reset();
  EXPECT_EQ(s.m[0], 0.0);
  EXPECT_EQ(s.v[0], 0.0);
  EXPECT_EQ(s.step, 0u);
  EXPECT_EQ(s.config.learning_rate, 0.2);
}

TEST(Adam, ConfigValidation) {
  AdamConfig c;
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AdamConfig{};
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Adam, OverflowingUpdateAbortsUntouched) {
  std::vector<double> p{1.7e308};
  AdamConfig c;
  c.learning_rate = 1e308;
  OptimizerState s(c, 1);
  EXPECT_EQ(adaptive_moment_step(p, ad::GradientMap(std::vector<double>{-1.0}), s), StepOutcome::aborted_non_finite);
  EXPECT_EQ(p[0], 1.7e308);
  EXPECT_EQ(s.step, 0u);
  EXPECT_EQ(s.m[0], 0.0);
}
