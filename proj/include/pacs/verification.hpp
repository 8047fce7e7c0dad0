#pragma once

// Oracle suites run by `pacs verify`. Each suite returns one verdict line.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "pacs/autodiff.hpp"
#include "pacs/eval.hpp"
#include "pacs/objectives.hpp"
#include "pacs/optimizer.hpp"
#include "pacs/policy.hpp"
#include "pacs/rng.hpp"
#include "pacs/scores.hpp"
#include "pacs/trainer.hpp"

namespace pacs {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::uint64_t seed = 20240601;
  bool inject_critic_sign_flip = false;  ///< mutation hook for the decomposition suite
  int mc_resamples = 100'000;
};

inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// ---------------------------------------------------------------------------
// Shared enumerable instance: V = 2 without terminal, fixed length 2.

struct EnumerableInstance {
  PolicyParameters policy;
  PolicyParameters reference;
  Query query{"toy", 0, 0, {}};
  int length = 2;
  int group_size = 2;
  double beta = 1.0;

  static BinaryReward reward(const TokenSequence& o) { return {o.tokens[0] != o.tokens[1] ? 1 : 0}; }
};

inline Architecture enumerable_architecture() {
  Architecture a;
  a.vocab_size = 2;
  a.window = 2;
  a.hidden = 4;
  a.max_len = 2;
  a.terminal = -1;
  a.query_slots = 1;
  return a;
}

inline EnumerableInstance random_enumerable_instance(Rng& rng, double scale = 1.0) {
  const Architecture arch = enumerable_architecture();
  EnumerableInstance inst{initialize_policy(arch, 0), initialize_policy(arch, 0)};
  for (double& x : inst.policy.theta) x = rng.uniform(-scale, scale);
  for (double& x : inst.reference.theta) x = rng.uniform(-scale, scale);
  return inst;
}

namespace detail {

// All G-tuples of length-2 outputs with their joint probability under `theta`.
struct TupleEnumeration {
  std::vector<std::vector<TokenSequence>> tuples;
  std::vector<double> probability;
};

inline TupleEnumeration enumerate_tuples(const EnumerableInstance& inst, std::span<const double> theta) {
  const PolicyParameters p{inst.policy.arch, std::vector<double>(theta.begin(), theta.end())};
  const std::vector<EnumeratedOutput> singles = enumerate_all_outputs(p, inst.query, inst.length);
  TupleEnumeration out;
  std::vector<std::size_t> idx(static_cast<std::size_t>(inst.group_size), 0);
  while (true) {
    std::vector<TokenSequence> tuple;
    double prob = 1.0;
    for (std::size_t i : idx) {
      tuple.push_back(singles[i].sequence);
      prob *= singles[i].probability;
    }
    out.tuples.push_back(std::move(tuple));
    out.probability.push_back(prob);
    std::size_t d = 0;
    while (d < idx.size() && ++idx[d] == singles.size()) idx[d++] = 0;
    if (d == idx.size()) break;
  }
  return out;
}

inline RolloutGroup tuple_group(const EnumerableInstance& inst, const std::vector<TokenSequence>& tuple) {
  RolloutGroup g;
  g.query = inst.query;
  for (const TokenSequence& o : tuple) {
    g.outputs.push_back(o);
    g.logprobs_reference.push_back(sequence_log_prob(inst.reference, inst.query, o));
    g.rewards.push_back(EnumerableInstance::reward(o));
  }
  return g;
}

// Group loss evaluated in plain doubles.
inline double group_loss_value(const EnumerableInstance& inst, std::span<const double> theta, const RolloutGroup& g,
                               const PacsOptions& opts) {
  std::vector<double> proxies;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const SequenceLogProb lp = sequence_log_prob<double>(inst.policy.arch, theta, g.query, g.outputs[i]);
    proxies.push_back(reward_proxy(lp, g.logprobs_reference[i], opts.beta).value);
  }
  const std::vector<double> psi = compute_scores<double>(proxies, opts.scores).values;
  double total = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double w = opts.weights ? opts.weights->for_reward(g.rewards[i]) : 1.0;
    total += w * per_sample_loss(g.rewards[i], psi[i]);
  }
  return -total / static_cast<double>(g.size());
}

template <class F>
SuiteResult timed(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace detail

/// Expected group loss E[L] by exact enumeration of all G-tuples.
inline double expected_group_loss(const EnumerableInstance& inst, std::span<const double> theta, const PacsOptions& opts) {
  const detail::TupleEnumeration e = detail::enumerate_tuples(inst, theta);
  double j = 0.0;
  for (std::size_t t = 0; t < e.tuples.size(); ++t) {
    const RolloutGroup g = detail::tuple_group(inst, e.tuples[t]);
    PacsOptions o = opts;
    if (o.weights) o.weights = class_weights(g.rewards, WeightScope::group);
    j += e.probability[t] * detail::group_loss_value(inst, theta, g, o);
  }
  return j;
}

/// sum over tuples of p(tuple) * autodiff gradient of the full-mode loss on that tuple.
inline ad::GradientMap expected_full_mode_gradient(const EnumerableInstance& inst, const PacsOptions& opts) {
  const detail::TupleEnumeration e = detail::enumerate_tuples(inst, inst.policy.theta);
  ad::GradientMap total(inst.policy.theta.size());
  ad::Graph graph;
  for (std::size_t t = 0; t < e.tuples.size(); ++t) {
    const RolloutGroup g = detail::tuple_group(inst, e.tuples[t]);
    PacsOptions o = opts;
    o.mode = GradientMode::full;
    if (o.weights) o.weights = class_weights(g.rewards, WeightScope::group);
    graph.clear();
    BoundPolicy bound(graph, inst.policy);
    ad::GradientMap grad = graph.backward(pacs_loss(bound, g, o));
    grad *= e.probability[t];
    total += grad;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Suites

inline SuiteResult verify_gradient(const VerifyOptions& options) {
  return detail::timed("gradient", [&] {
    Rng rng(derive_seed(options.seed, {1}));
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const EnumerableInstance inst = random_enumerable_instance(rng);
      PacsOptions opts;
      opts.beta = inst.beta;
      opts.weights = ClassWeights{};
      const ad::GradientMap autodiff = expected_full_mode_gradient(inst, opts);
      const ad::GradientMap fd = ad::finite_diff_gradient(
          [&](std::span<const double> th) { return expected_group_loss(inst, th, opts); }, inst.policy.theta);
      for (std::size_t i = 0; i < fd.size(); ++i) worst = std::max(worst, relative_error(autodiff[i], fd[i]));
    }
    std::ostringstream s;
    s << "max relative error " << worst << " over 20 instances (" << parameter_count(enumerable_architecture())
      << " parameters, limit 1e-4)";
    return SuiteResult{"", worst <= 1e-4, s.str()};
  });
}

inline SuiteResult verify_decomposition(const VerifyOptions& options) {
  return detail::timed("decomposition", [&] {
    Rng rng(derive_seed(options.seed, {2}));
    double worst_sum = 0.0;
    double worst_cross = 0.0;
    double worst_perfect = 0.0;
    Architecture arch;
    arch.vocab_size = 3;
    arch.window = 2;
    arch.hidden = 3;
    arch.max_len = 3;
    arch.terminal = 2;
    arch.query_slots = 2;
    ad::Graph graph;
    for (int trial = 0; trial < 500; ++trial) {
      PolicyParameters policy = initialize_policy(arch, 0);
      PolicyParameters ref = policy;
      for (double& x : policy.theta) x = rng.uniform(-1.0, 1.0);
      for (double& x : ref.theta) x = rng.uniform(-1.0, 1.0);
      RolloutGroup g;
      g.query = Query{"toy", 0, static_cast<int>(rng.below(2)), {}};
      const int size = 2 + static_cast<int>(rng.below(5));
      const auto samples = sample_sequences(policy, g.query, size, 1.0, 1.0, rng.next_u64());
      for (const SampledOutput& s : samples) {
        g.outputs.push_back(s.sequence);
        g.logprobs_reference.push_back(sequence_log_prob(ref, g.query, s.sequence));
        g.rewards.push_back({rng.bernoulli(0.5) ? 1 : 0});
      }
      PacsOptions opts;
      opts.beta = rng.uniform(0.1, 2.0);
      opts.scores.estimator = static_cast<Estimator>(rng.below(3));
      if (rng.bernoulli(0.5)) opts.weights = class_weights(g.rewards, WeightScope::group);

      DecompositionHooks hooks;
      hooks.flip_critic_sign = options.inject_critic_sign_flip;
      graph.clear();
      BoundPolicy bound(graph, policy);
      const GradientDecomposition d = pacs_gradient_terms(bound, g, opts, hooks);

      PacsOptions per_sample = opts;
      per_sample.mode = GradientMode::full;
      per_sample.surrogate = Surrogate::per_sample;
      const ad::GradientMap reference_total = graph.backward(pacs_loss(bound, g, per_sample));

      hooks.force_perfect_prediction = true;
      const GradientDecomposition perfect = pacs_gradient_terms(bound, g, opts, hooks);
      for (std::size_t i = 0; i < d.total.size(); ++i) {
        worst_sum = std::max(worst_sum, std::abs(d.actor[i] + d.critic[i] - d.total[i]));
        worst_cross = std::max(worst_cross, std::abs(d.total[i] - reference_total[i]));
        worst_perfect = std::max(worst_perfect, std::abs(perfect.critic[i]));
      }
    }
    std::ostringstream s;
    s << "|actor+critic-total| " << worst_sum << " (limit 1e-10), |total-full autodiff| " << worst_cross
      << " (limit 1e-8), critic under perfect prediction " << worst_perfect << ", 500 instances";
    return SuiteResult{"", worst_sum <= 1e-10 && worst_cross <= 1e-8 && worst_perfect == 0.0, s.str()};
  });
}

inline SuiteResult verify_rloo(const VerifyOptions& options) {
  return detail::timed("rloo", [&] {
    Rng rng(derive_seed(options.seed, {3}));
    double worst_sum = 0.0;
    double worst_shift = 0.0;
    double worst_scaled = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      const int g = 2 + static_cast<int>(rng.below(15));
      std::vector<double> r(static_cast<std::size_t>(g));
      for (double& x : r) x = rng.uniform(-10.0, 10.0);
      const double delta = rng.uniform(-5.0, 5.0);
      std::vector<double> shifted = r;
      for (double& x : shifted) x += delta;
      const std::vector<double> psi = rloo_scores<double>(r);
      const std::vector<double> psi_shift = rloo_scores<double>(shifted);
      const std::vector<double> centered = group_normalize<double>(r, NormalizeMode::mean_only);
      double total = 0.0;
      for (std::size_t i = 0; i < psi.size(); ++i) {
        total += psi[i];
        worst_shift = std::max(worst_shift, std::abs(psi[i] - psi_shift[i]));
        worst_scaled = std::max(worst_scaled, std::abs(psi[i] - centered[i] * g / (g - 1.0)));
      }
      worst_sum = std::max(worst_sum, std::abs(total));
    }
    std::ostringstream s;
    s << "|sum psi| " << worst_sum << ", shift deviation " << worst_shift << " (limit 1e-9), scaled mean-only deviation "
      << worst_scaled << " (limit 1e-10), 1000 groups";
    return SuiteResult{"", worst_sum <= 1e-9 && worst_shift <= 1e-9 && worst_scaled <= 1e-10, s.str()};
  });
}

/// Fraction of size-k subsets of n samples (c correct) containing a correct one.
inline double pass_at_k_by_enumeration(int n, int c, int k) {
  std::uint64_t hits = 0;
  std::uint64_t total = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != k) continue;
    ++total;
    // samples 0..c-1 are the correct ones
    if ((mask & ((1u << c) - 1u)) != 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

/// Monte-Carlo estimate: draw k of n without replacement, repeat `resamples` times.
inline double pass_at_k_monte_carlo(int n, int c, int k, int resamples, Rng& rng) {
  std::uint64_t hits = 0;
  for (int r = 0; r < resamples; ++r) {
    int remaining = n;
    int correct_left = c;
    for (int draw = 0; draw < k; ++draw) {
      if (rng.below(static_cast<std::uint64_t>(remaining)) < static_cast<std::uint64_t>(correct_left)) {
        ++hits;
        break;
      }
      --remaining;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(resamples);
}

inline SuiteResult verify_pass_at_k(const VerifyOptions& options) {
  return detail::timed("pass_at_k", [&] {
    int mismatches = 0;
    int cases = 0;
    for (int n = 1; n <= 10; ++n) {
      for (int c = 0; c <= n; ++c) {
        for (int k = 1; k <= n; ++k) {
          ++cases;
          if (pass_at_k(n, c, k) != pass_at_k_by_enumeration(n, c, k)) ++mismatches;
        }
      }
    }
    Rng rng(derive_seed(options.seed, {4}));
    int outside = 0;
    double worst_z = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 512;
      const int c = static_cast<int>(rng.below(n + 1));
      const int k = 1 + static_cast<int>(rng.below(n));
      const double p = pass_at_k(n, c, k);
      const double mc = pass_at_k_monte_carlo(n, c, k, options.mc_resamples, rng);
      const double se = std::sqrt(p * (1.0 - p) / options.mc_resamples);
      const double err = std::abs(mc - p);
      if (err > 3.0 * se + 1e-12) ++outside;
      if (se > 0.0) worst_z = std::max(worst_z, err / se);
    }
    std::ostringstream s;
    s << mismatches << "/" << cases << " mismatches against subset enumeration (n <= 10); " << outside
      << "/50 Monte-Carlo triples outside 3 SE (max " << worst_z << " SE, " << options.mc_resamples << " resamples)";
    return SuiteResult{"", mismatches == 0 && outside == 0, s.str()};
  });
}

inline SuiteResult verify_kl_k3(const VerifyOptions& options) {
  return detail::timed("kl_k3", [&] {
    Rng rng(derive_seed(options.seed, {5}));
    int negative = 0;
    int zero_off_diagonal = 0;
    for (int trial = 0; trial < 10'000; ++trial) {
      const double cur = rng.uniform(-20.0, 0.0);
      const double ref = trial % 10 == 0 ? cur : rng.uniform(-20.0, 0.0);
      const double k = kl_estimate_k3(cur, ref);
      if (k < 0.0) ++negative;
      if (cur != ref && k == 0.0) ++zero_off_diagonal;
      if (cur == ref && k != 0.0) ++negative;
    }
    std::ostringstream s;
    s << negative << " negative or non-zero-at-equality, " << zero_off_diagonal << " zero at unequal pairs, 10000 pairs";
    return SuiteResult{"", negative == 0 && zero_off_diagonal == 0, s.str()};
  });
}

inline SuiteResult verify_reset(const VerifyOptions& options) {
  return detail::timed("reset", [&] {
    TrainerConfig cfg;
    cfg.seed = options.seed;
    cfg.hidden = 8;
    cfg.group_size = 4;
    cfg.groups_per_step = 2;
    cfg.reset_period = 1;
    const auto task = make_task(cfg.task);
    TrainingState state = initial_state(cfg, *task);
    train_step(cfg, *task, state);

    std::vector<std::pair<Query, TokenSequence>> probes;
    for (int i = 0; i < 8; ++i) {
      const Query q = sample_query(*task, derive_seed(options.seed, {6, static_cast<std::uint64_t>(i)}));
      for (const SampledOutput& s : sample_sequences(state.policy, q, 2, 1.0, 1.0, static_cast<std::uint64_t>(i))) {
        probes.emplace_back(q, s.sequence);
      }
    }
    std::vector<SequenceLogProb> before;
    for (const auto& [q, o] : probes) before.push_back(sequence_log_prob(state.policy, q, o));
    const bool moments_nonzero = state.optimizer.step > 0;

    const bool reset = maybe_reset_reference(cfg, 1, state);

    bool identical = true;
    for (std::size_t i = 0; i < probes.size(); ++i) {
      const SequenceLogProb after = sequence_log_prob(state.policy, probes[i].first, probes[i].second);
      identical = identical && after.per_token == before[i].per_token && after.total == before[i].total;
    }
    bool zeroed = state.optimizer.step == 0;
    for (std::size_t i = 0; i < state.optimizer.size(); ++i) {
      zeroed = zeroed && state.optimizer.m[i] == 0.0 && state.optimizer.v[i] == 0.0;
    }
    double worst_proxy = 0.0;
    for (const auto& [q, o] : probes) {
      const SequenceLogProb cur = sequence_log_prob(state.policy, q, o);
      const SequenceLogProb ref = sequence_log_prob(state.reference.parameters(), q, o);
      worst_proxy = std::max(worst_proxy, std::abs(reward_proxy(cur, ref, cfg.beta).value));
    }
    std::ostringstream s;
    s << "reset " << (reset ? "fired" : "missing") << ", probe log-probs " << (identical ? "bit-identical" : "CHANGED")
      << ", optimizer " << (zeroed ? "zeroed" : "NOT zeroed") << ", max |reward proxy| " << worst_proxy;
    return SuiteResult{"", reset && moments_nonzero && identical && zeroed && worst_proxy == 0.0, s.str()};
  });
}

/// Single-step outputs at the default initialization (output layer zero). For
/// multi-token outputs with shared parameters a descent step raises psi(o+) but
/// does not always raise pi(o+) itself.
inline Architecture loss_direction_architecture() {
  Architecture a;
  a.vocab_size = 4;
  a.window = 2;
  a.hidden = 4;
  a.max_len = 1;
  a.terminal = -1;
  a.query_slots = 1;
  return a;
}

inline SuiteResult verify_loss_direction(const VerifyOptions& options) {
  return detail::timed("loss_direction", [&] {
    const Architecture arch = loss_direction_architecture();
    int good = 0;
    constexpr int kTrials = 100;
    constexpr double kStep = 1e-3;
    ad::Graph graph;
    for (int trial = 0; trial < kTrials; ++trial) {
      Rng rng(derive_seed(options.seed, {7, static_cast<std::uint64_t>(trial)}));
      const PolicyParameters policy = initialize_policy(arch, rng.next_u64());
      PolicyParameters ref = policy;
      for (double& x : ref.theta) x = rng.uniform(-0.5, 0.5);
      const Query q{"toy", 0, 0, {}};
      const int a = static_cast<int>(rng.below(4));
      int b = static_cast<int>(rng.below(3));
      if (b >= a) ++b;
      const TokenSequence pos{{a}, false};
      const TokenSequence neg{{b}, false};
      RolloutGroup g;
      g.query = q;
      g.outputs = {pos, neg};
      g.logprobs_reference = {sequence_log_prob(ref, q, pos), sequence_log_prob(ref, q, neg)};
      g.rewards = {{1}, {0}};
      PacsOptions opts;
      opts.mode = GradientMode::direct;
      graph.clear();
      BoundPolicy bound(graph, policy);
      const ad::GradientMap grad = graph.backward(pacs_loss(bound, g, opts));
      PolicyParameters next = policy;
      for (std::size_t i = 0; i < next.theta.size(); ++i) next.theta[i] -= kStep * grad[i];
      const double pos_before = sequence_log_prob(policy, q, pos).total;
      const double neg_before = sequence_log_prob(policy, q, neg).total;
      const double pos_after = sequence_log_prob(next, q, pos).total;
      const double neg_after = sequence_log_prob(next, q, neg).total;
      if (pos_after > pos_before && neg_after < neg_before) ++good;
    }
    std::ostringstream s;
    s << good << "/" << kTrials << " initializations raise pi(o+) and lower pi(o-) after one direct step of 1e-3";
    return SuiteResult{"", good == kTrials, s.str()};
  });
}

inline std::vector<std::string> suite_names() {
  return {"gradient", "decomposition", "rloo", "pass_at_k", "kl_k3", "reset", "loss_direction"};
}

inline SuiteResult run_suite(const std::string& name, const VerifyOptions& options) {
  if (name == "gradient") return verify_gradient(options);
  if (name == "decomposition") return verify_decomposition(options);
  if (name == "rloo") return verify_rloo(options);
  if (name == "pass_at_k") return verify_pass_at_k(options);
  if (name == "kl_k3") return verify_kl_k3(options);
  if (name == "reset") return verify_reset(options);
  if (name == "loss_direction") return verify_loss_direction(options);
  std::string valid;
  for (const std::string& s : suite_names()) valid += (valid.empty() ? "" : ", ") + s;
  throw ConfigError("unknown suite '" + name + "' (valid: " + valid + ")");
}

}  // namespace pacs
