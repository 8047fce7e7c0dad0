#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pacs/autodiff.hpp"
#include "pacs/errors.hpp"

namespace pacs {

struct AdamConfig {
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam_beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam_beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("adam_eps must be positive");
  }
};

struct OptimizerState {
  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  OptimizerState() = default;
  OptimizerState(const AdamConfig& cfg, std::size_t n) : config(cfg), m(n, 0.0), v(n, 0.0) {}

  std::size_t size() const noexcept { return m.size(); }

  /// Zeroes both moment accumulators and the step counter; hyperparameters are kept.
  void reset() {
    std::fill(m.begin(), m.end(), 0.0);
    std::fill(v.begin(), v.end(), 0.0);
    step = 0;
  }

  friend bool operator==(const OptimizerState& a, const OptimizerState& b) {
    return a.config.learning_rate == b.config.learning_rate && a.config.beta1 == b.config.beta1 &&
           a.config.beta2 == b.config.beta2 && a.config.epsilon == b.config.epsilon && a.m == b.m && a.v == b.v &&
           a.step == b.step;
  }
};

enum class StepOutcome { applied, aborted_non_finite };

/// Bias-corrected Adam update in place. A non-finite gradient leaves both the
/// parameters and the optimizer state untouched.
inline StepOutcome adaptive_moment_step(std::span<double> params, const ad::GradientMap& grads,
                                        OptimizerState& state) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.size() != n) {
    throw InputError("optimizer shape mismatch: " + std::to_string(n) + " parameters, " +
                     std::to_string(grads.size()) + " gradients, " + std::to_string(state.size()) + " moments");
  }
  if (!grads.all_finite()) return StepOutcome::aborted_non_finite;

  const AdamConfig& c = state.config;
  const std::uint64_t t = state.step + 1;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  std::vector<double> m(n), v(n), next(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    next[i] = params[i] - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    if (!std::isfinite(v[i]) || !std::isfinite(next[i])) return StepOutcome::aborted_non_finite;
  }
  std::copy(next.begin(), next.end(), params.begin());
  state.m = std::move(m);
  state.v = std::move(v);
  state.step = t;
  return StepOutcome::applied;
}

}  // namespace pacs
