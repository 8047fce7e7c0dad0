#pragma once

// Reward proxies, score functions and advantage estimators.
//
// Everything taking a scalar template parameter works on both `double` and
// `ad::Var`, so the same code produces plain values for oracles and recorded
// graph nodes for training.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pacs/autodiff.hpp"
#include "pacs/errors.hpp"
#include "pacs/types.hpp"

namespace pacs {

enum class Estimator { rloo, grpo, dr_grpo };

inline std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::rloo: return "rloo";
    case Estimator::grpo: return "grpo";
    case Estimator::dr_grpo: return "dr-grpo";
  }
  return "unknown";
}

inline Estimator parse_estimator(std::string_view s) {
  if (s == "rloo") return Estimator::rloo;
  if (s == "grpo") return Estimator::grpo;
  if (s == "dr-grpo") return Estimator::dr_grpo;
  throw ConfigError("unknown estimator '" + std::string(s) + "' (valid: rloo, grpo, dr-grpo)");
}

enum class NormalizeMode { mean_std, mean_only };

/// Spread used by mean-std normalization: population divides by G, sample by G - 1.
enum class StdKind { population, sample };

inline std::string_view to_string(StdKind k) { return k == StdKind::population ? "population" : "sample"; }

inline StdKind parse_std_kind(std::string_view s) {
  if (s == "population") return StdKind::population;
  if (s == "sample") return StdKind::sample;
  throw ConfigError("unknown std kind '" + std::string(s) + "' (valid: population, sample)");
}

inline constexpr double kDefaultStdEpsilon = 1e-8;
inline constexpr double kDefaultPsiMax = 20.0;

template <class T>
struct RewardProxyT {
  T value{};
  std::vector<T> per_token;  ///< log pi_theta - log pi_ref per token, unscaled
  double beta = 1.0;
};

using RewardProxy = RewardProxyT<double>;

template <class T>
struct ScoreVectorT {
  std::vector<T> values;
  Estimator estimator = Estimator::rloo;

  std::size_t size() const noexcept { return values.size(); }
};

using ScoreVector = ScoreVectorT<double>;

struct AdvantageVector {
  std::vector<double> values;
  double gamma = 1.0;
  double lambda = 1.0;

  std::size_t size() const noexcept { return values.size(); }
};

/// beta * sum_t (log pi_theta(o_t|.) - log pi_ref(o_t|.)).
template <class T>
RewardProxyT<T> reward_proxy(const SequenceLogProbT<T>& current, const SequenceLogProb& reference, double beta) {
  if (!(beta > 0.0)) throw InputError("beta must be positive");
  if (current.per_token.size() != reference.per_token.size()) {
    throw InputError("current and reference log-probs have different lengths");
  }
  RewardProxyT<T> out;
  out.beta = beta;
  out.per_token.reserve(current.per_token.size());
  for (std::size_t t = 0; t < current.per_token.size(); ++t) {
    out.per_token.push_back(current.per_token[t] - reference.per_token[t]);
  }
  if (out.per_token.empty()) {
    out.value = current.total * 0.0;
  } else {
    out.value = ad::sum(std::span<const T>(out.per_token)) * beta;
  }
  return out;
}

/// Leave-one-out score: psi_i = r_i - mean_{j != i} r_j.
template <class T>
std::vector<T> rloo_scores(std::span<const T> proxies) {
  const std::size_t g = proxies.size();
  if (g < 2) throw ConfigError("leave-one-out undefined for singleton groups (G must be >= 2)");
  const T total = ad::sum(proxies);
  const double inv = 1.0 / static_cast<double>(g - 1);
  std::vector<T> psi;
  psi.reserve(g);
  for (std::size_t i = 0; i < g; ++i) psi.push_back(proxies[i] - (total - proxies[i]) * inv);
  return psi;
}

template <class T>
ScoreVectorT<T> rloo_scores(const std::vector<RewardProxyT<T>>& proxies) {
  std::vector<T> r;
  r.reserve(proxies.size());
  for (const auto& p : proxies) r.push_back(p.value);
  return {rloo_scores<T>(std::span<const T>(r)), Estimator::rloo};
}

/// mean-std: (v - mean) / (std + epsilon); mean-only: v - mean.
/// A group with zero spread maps to all zeros with no gradient through the spread.
template <class T>
std::vector<T> group_normalize(std::span<const T> values, NormalizeMode mode, double epsilon = kDefaultStdEpsilon,
                               StdKind std_kind = StdKind::population) {
  if (values.empty()) throw InputError("group_normalize needs at least one value");
  if (!(epsilon >= 0.0)) throw InputError("epsilon must be non-negative");
  const std::size_t g = values.size();
  const T mean = ad::sum(values) * (1.0 / static_cast<double>(g));
  std::vector<T> centered;
  centered.reserve(g);
  for (const T& v : values) centered.push_back(v - mean);
  if (mode == NormalizeMode::mean_only) return centered;

  bool all_equal = true;
  for (const T& v : values) all_equal = all_equal && ad::value_of(v) == ad::value_of(values.front());
  if (all_equal) {
    for (T& c : centered) c = c * 0.0;
    return centered;
  }
  if (std_kind == StdKind::sample && g < 2) throw InputError("sample std needs at least two values");
  std::vector<T> squares;
  squares.reserve(g);
  for (const T& c : centered) squares.push_back(c * c);
  const double denom = std_kind == StdKind::population ? static_cast<double>(g) : static_cast<double>(g - 1);
  const T spread = ad::sqrt(ad::sum(std::span<const T>(squares)) * (1.0 / denom));
  const T scale = spread + epsilon;
  std::vector<T> out;
  out.reserve(g);
  for (const T& c : centered) out.push_back(c / scale);
  return out;
}

struct ScoreOptions {
  Estimator estimator = Estimator::rloo;
  double std_epsilon = kDefaultStdEpsilon;
  StdKind std_kind = StdKind::population;
  std::optional<double> psi_clamp;  ///< symmetric clamp bound, off when empty
};

/// psi for a group of reward proxies under the selected estimator.
template <class T>
ScoreVectorT<T> compute_scores(std::span<const T> proxies, const ScoreOptions& options) {
  ScoreVectorT<T> out;
  out.estimator = options.estimator;
  switch (options.estimator) {
    case Estimator::rloo:
      out.values = rloo_scores<T>(proxies);
      break;
    case Estimator::grpo:
      out.values = group_normalize<T>(proxies, NormalizeMode::mean_std, options.std_epsilon, options.std_kind);
      break;
    case Estimator::dr_grpo:
      out.values = group_normalize<T>(proxies, NormalizeMode::mean_only);
      break;
  }
  if (options.psi_clamp) {
    const double m = *options.psi_clamp;
    for (T& v : out.values) v = ad::clamp(v, -m, m);
  }
  return out;
}

/// Generalized advantage estimation by the backward recursion
///   delta_t = r_t + gamma V_{t+1} - V_t,  A_t = delta_t + gamma lambda A_{t+1}.
/// `values` holds one estimate per token, optionally followed by a bootstrap
/// value; when omitted the bootstrap is 0 (terminal).
inline AdvantageVector gae_advantages(std::span<const double> rewards, std::span<const double> values, double gamma,
                                      double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n && values.size() != n + 1) {
    throw InputError("values must have one entry per reward, plus an optional bootstrap");
  }
  const double bootstrap = values.size() == n + 1 ? values[n] : 0.0;
  AdvantageVector out{std::vector<double>(n, 0.0), gamma, lambda};
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_value = t + 1 < n ? values[t + 1] : bootstrap;
    const double delta = rewards[t] + gamma * next_value - values[t];
    next_adv = delta + gamma * lambda * next_adv;
    out.values[t] = next_adv;
  }
  return out;
}

}  // namespace pacs
