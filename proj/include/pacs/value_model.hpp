#pragma once

// State-value estimator for the PPO baseline:
//
//   x = Q[code] + P[t]       H
//   h = tanh(A x + a)        H
//   V = w . h + c
//
// fit by squared error to the terminal reward of the trajectory.

#include <cstdint>
#include <span>
#include <vector>

#include "pacs/autodiff.hpp"
#include "pacs/errors.hpp"
#include "pacs/rng.hpp"
#include "pacs/types.hpp"

namespace pacs {

struct ValueArchitecture {
  int query_slots = 1;
  int positions = 9;  ///< max_len + 1, so a bootstrap slot exists past the last token
  int hidden = 16;

  friend bool operator==(const ValueArchitecture&, const ValueArchitecture&) = default;
};

inline std::size_t value_parameter_count(const ValueArchitecture& a) {
  const auto h = static_cast<std::size_t>(a.hidden);
  return static_cast<std::size_t>(a.query_slots + a.positions) * h + h * h + h + h + 1;
}

struct ValueModel {
  ValueArchitecture arch;
  std::vector<double> theta;

  friend bool operator==(const ValueModel&, const ValueModel&) = default;
};

inline ValueModel initialize_value_model(const ValueArchitecture& arch, std::uint64_t seed, double scale = 0.1) {
  if (arch.query_slots < 1 || arch.positions < 1 || arch.hidden < 1) throw ConfigError("invalid value model shape");
  ValueModel m{arch, std::vector<double>(value_parameter_count(arch), 0.0)};
  Rng rng(seed);
  const std::size_t h = static_cast<std::size_t>(arch.hidden);
  const std::size_t head = m.theta.size() - h - 1;
  for (std::size_t i = 0; i < head; ++i) m.theta[i] = rng.uniform(-scale, scale);
  return m;
}

/// Value estimate for query slot `code` at token position `t`.
template <class T>
T value_estimate(const ValueArchitecture& arch, std::span<const T> theta, int code, int t) {
  if (code < 0 || code >= arch.query_slots) throw InputError("value model query slot out of range");
  if (t < 0 || t >= arch.positions) throw InputError("value model position out of range");
  const std::size_t h = static_cast<std::size_t>(arch.hidden);
  const std::size_t q_off = static_cast<std::size_t>(code) * h;
  const std::size_t p_off = static_cast<std::size_t>(arch.query_slots + t) * h;
  const std::size_t a_off = static_cast<std::size_t>(arch.query_slots + arch.positions) * h;
  const std::size_t bias_off = a_off + h * h;
  const std::size_t w_off = bias_off + h;
  const std::size_t c_off = w_off + h;

  std::vector<T> x;
  x.reserve(h);
  for (std::size_t j = 0; j < h; ++j) x.push_back(theta[q_off + j] + theta[p_off + j]);
  std::vector<T> hidden;
  hidden.reserve(h);
  for (std::size_t j = 0; j < h; ++j) {
    hidden.push_back(ad::tanh(ad::affine(theta.subspan(a_off + j * h, h), std::span<const T>(x), theta[bias_off + j])));
  }
  return ad::affine(theta.subspan(w_off, h), std::span<const T>(hidden), theta[c_off]);
}

/// Per-token value estimates for an output, followed by a zero bootstrap.
inline std::vector<double> trajectory_values(const ValueModel& model, const Query& q, const TokenSequence& o) {
  std::vector<double> v;
  v.reserve(o.size() + 1);
  for (std::size_t t = 0; t < o.size(); ++t) {
    v.push_back(value_estimate<double>(model.arch, model.theta, q.code, static_cast<int>(t)));
  }
  v.push_back(0.0);
  return v;
}

/// Mean squared error of all per-token estimates against the terminal reward of each output.
inline ad::Var value_loss(ad::Graph& graph, std::span<const ad::Var> theta, const ValueArchitecture& arch,
                          const RolloutGroup& group) {
  std::vector<ad::Var> errors;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const double target = static_cast<double>(group.rewards[i].value);
    for (std::size_t t = 0; t < group.outputs[i].size(); ++t) {
      const ad::Var diff = value_estimate<ad::Var>(arch, theta, group.query.code, static_cast<int>(t)) - target;
      errors.push_back(diff * diff);
    }
  }
  if (errors.empty()) return graph.constant(0.0);
  return ad::sum(std::span<const ad::Var>(errors)) * (1.0 / static_cast<double>(errors.size()));
}

}  // namespace pacs
