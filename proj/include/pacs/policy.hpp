#pragma once

// Tiny autoregressive categorical policy.
//
// The next-token distribution is computed from the last `window` context tokens
// (query prefix followed by the tokens generated so far, left-padded with a pad
// id) and a per-query embedding:
//
//   x      = [E[c_1]; ...; E[c_W]; Q[code]]           (W+1)*H
//   h      = tanh(A x + a)                            H
//   logits = B h + b                                  V
//
// The flat parameter vector stores E, Q, A, a, B, b in that order (row-major).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pacs/autodiff.hpp"
#include "pacs/errors.hpp"
#include "pacs/rng.hpp"
#include "pacs/types.hpp"

namespace pacs {

struct Architecture {
  int vocab_size = 2;
  int window = 4;
  int hidden = 32;
  int max_len = 8;
  int terminal = -1;  ///< token id that ends generation, -1 when the vocabulary has none
  int query_slots = 1;

  bool has_terminal() const noexcept { return terminal >= 0; }
  int pad_token() const noexcept { return vocab_size; }

  void validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
    if (window < 1) throw ConfigError("window must be at least 1");
    if (hidden < 1) throw ConfigError("hidden must be at least 1");
    if (max_len < 0) throw ConfigError("max_len must be non-negative");
    if (query_slots < 1) throw ConfigError("query_slots must be at least 1");
    if (terminal >= vocab_size || terminal < -1) throw ConfigError("terminal token outside vocabulary");
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct ParameterLayout {
  std::size_t token_embedding = 0;
  std::size_t query_embedding = 0;
  std::size_t hidden_weight = 0;
  std::size_t hidden_bias = 0;
  std::size_t output_weight = 0;
  std::size_t output_bias = 0;
  std::size_t total = 0;
  std::size_t input_width = 0;

  explicit ParameterLayout(const Architecture& a) {
    const auto v = static_cast<std::size_t>(a.vocab_size);
    const auto h = static_cast<std::size_t>(a.hidden);
    input_width = (static_cast<std::size_t>(a.window) + 1) * h;
    token_embedding = 0;
    query_embedding = token_embedding + (v + 1) * h;
    hidden_weight = query_embedding + static_cast<std::size_t>(a.query_slots) * h;
    hidden_bias = hidden_weight + h * input_width;
    output_weight = hidden_bias + h;
    output_bias = output_weight + v * h;
    total = output_bias + v;
  }
};

inline std::size_t parameter_count(const Architecture& a) { return ParameterLayout(a).total; }

struct PolicyParameters {
  Architecture arch;
  std::vector<double> theta;

  void validate() const {
    arch.validate();
    if (theta.size() != parameter_count(arch)) {
      throw InputError("parameter count " + std::to_string(theta.size()) + " does not match architecture (" +
                       std::to_string(parameter_count(arch)) + ")");
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!std::isfinite(theta[i])) throw InputError("parameter " + std::to_string(i) + " is not finite");
    }
  }

  friend bool operator==(const PolicyParameters&, const PolicyParameters&) = default;
};

/// Uniform(-scale, scale) everywhere except the output layer, which starts at zero
/// so the initial next-token distribution is exactly uniform.
inline PolicyParameters initialize_policy(const Architecture& arch, std::uint64_t seed, double scale = 0.01) {
  arch.validate();
  const ParameterLayout layout(arch);
  PolicyParameters p{arch, std::vector<double>(layout.total, 0.0)};
  Rng rng(seed);
  for (std::size_t i = 0; i < layout.output_weight; ++i) p.theta[i] = rng.uniform(-scale, scale);
  return p;
}

enum class SnapshotRole { reference, rollout };

/// Frozen deep copy of a parameter set (pi_ref or pi_old).
class PolicySnapshot {
 public:
  PolicySnapshot(const PolicyParameters& params, SnapshotRole role)
      : params_(std::make_shared<const PolicyParameters>(params)), role_(role) {}

  const PolicyParameters& parameters() const noexcept { return *params_; }
  SnapshotRole role() const noexcept { return role_; }

 private:
  std::shared_ptr<const PolicyParameters> params_;
  SnapshotRole role_;
};

inline PolicySnapshot snapshot(const PolicyParameters& params, SnapshotRole role) {
  params.validate();
  return PolicySnapshot(params, role);
}

// ---------------------------------------------------------------------------
// Forward pass

namespace detail {

inline void check_query(const Architecture& arch, const Query& q) {
  if (q.code < 0 || q.code >= arch.query_slots) {
    throw InputError("query code " + std::to_string(q.code) + " outside [0, " + std::to_string(arch.query_slots) + ")");
  }
  for (int t : q.prefix) {
    if (t < 0 || t >= arch.vocab_size) throw InputError("query prefix token " + std::to_string(t) + " out of range");
  }
}

/// The `window` most recent context ids (prefix then history), left-padded.
inline std::vector<int> context_window(const Architecture& arch, const Query& q, std::span<const int> history) {
  const auto w = static_cast<std::size_t>(arch.window);
  std::vector<int> ctx(w, arch.pad_token());
  const std::size_t n = q.prefix.size() + history.size();
  for (std::size_t k = 0; k < w && k < n; ++k) {
    const std::size_t src = n - 1 - k;
    ctx[w - 1 - k] = src < q.prefix.size() ? q.prefix[src] : history[src - q.prefix.size()];
  }
  return ctx;
}

template <class T>
std::vector<T> logits_for_window(const Architecture& arch, std::span<const T> theta, int code,
                                 std::span<const int> window) {
  const ParameterLayout layout(arch);
  const auto h = static_cast<std::size_t>(arch.hidden);
  std::vector<T> x;
  x.reserve(layout.input_width);
  for (int tok : window) {
    const auto base = layout.token_embedding + static_cast<std::size_t>(tok) * h;
    x.insert(x.end(), theta.begin() + base, theta.begin() + base + h);
  }
  const auto qbase = layout.query_embedding + static_cast<std::size_t>(code) * h;
  x.insert(x.end(), theta.begin() + qbase, theta.begin() + qbase + h);

  std::vector<T> hidden;
  hidden.reserve(h);
  for (std::size_t j = 0; j < h; ++j) {
    auto row = theta.subspan(layout.hidden_weight + j * layout.input_width, layout.input_width);
    hidden.push_back(ad::tanh(ad::affine(row, std::span<const T>(x), theta[layout.hidden_bias + j])));
  }

  const auto v = static_cast<std::size_t>(arch.vocab_size);
  std::vector<T> logits;
  logits.reserve(v);
  for (std::size_t k = 0; k < v; ++k) {
    auto row = theta.subspan(layout.output_weight + k * h, h);
    logits.push_back(ad::affine(row, std::span<const T>(hidden), theta[layout.output_bias + k]));
  }
  return logits;
}

/// log p(token) under softmax over the full vocabulary, or over the non-terminal
/// tokens when `exclude_terminal` is set.
template <class T>
T token_log_prob(const Architecture& arch, const std::vector<T>& logits, int token, bool exclude_terminal) {
  if (!exclude_terminal || !arch.has_terminal()) {
    return ad::log_softmax_at(std::span<const T>(logits), static_cast<std::size_t>(token));
  }
  std::vector<T> kept;
  kept.reserve(logits.size() - 1);
  std::size_t index = 0;
  for (int k = 0; k < static_cast<int>(logits.size()); ++k) {
    if (k == arch.terminal) continue;
    if (k == token) index = kept.size();
    kept.push_back(logits[static_cast<std::size_t>(k)]);
  }
  return ad::log_softmax_at(std::span<const T>(kept), index);
}

inline void check_sequence(const Architecture& arch, const TokenSequence& o, std::size_t history_len,
                           bool exclude_terminal) {
  if (o.size() + history_len > static_cast<std::size_t>(arch.max_len)) {
    throw InputError("sequence length " + std::to_string(o.size() + history_len) + " exceeds max_len " +
                     std::to_string(arch.max_len));
  }
  for (std::size_t t = 0; t < o.tokens.size(); ++t) {
    const int tok = o.tokens[t];
    if (tok < 0 || tok >= arch.vocab_size) throw InputError("token id " + std::to_string(tok) + " out of range");
    if (arch.has_terminal() && tok == arch.terminal) {
      if (exclude_terminal) throw InputError("terminal token present in fixed-length mode");
      if (t + 1 != o.tokens.size()) throw InputError("terminal token before the end of the sequence");
    }
  }
}

}  // namespace detail

/// Unnormalized next-token scores given the query and the generated history.
template <class T>
std::vector<T> next_token_logits(const Architecture& arch, std::span<const T> theta, const Query& q,
                                 std::span<const int> history) {
  detail::check_query(arch, q);
  const std::vector<int> window = detail::context_window(arch, q, history);
  return detail::logits_for_window(arch, theta, q.code, window);
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - m));
  for (double& x : p) x /= z;
  return p;
}

inline std::vector<double> next_token_probs(const PolicyParameters& params, const Query& q,
                                            std::span<const int> history, bool exclude_terminal = false) {
  std::vector<double> logits = next_token_logits<double>(params.arch, params.theta, q, history);
  if (exclude_terminal && params.arch.has_terminal()) {
    logits[static_cast<std::size_t>(params.arch.terminal)] = -std::numeric_limits<double>::infinity();
  }
  return softmax(logits);
}

/// Per-token conditional log-probabilities of `o` given `q` and an optional
/// already-generated `history` that precedes `o`.
template <class T>
SequenceLogProbT<T> sequence_log_prob(const Architecture& arch, std::span<const T> theta, const Query& q,
                                      const TokenSequence& o, bool exclude_terminal = false,
                                      std::span<const int> history = {}) {
  detail::check_query(arch, q);
  detail::check_sequence(arch, o, history.size(), exclude_terminal);
  SequenceLogProbT<T> out;
  out.per_token.reserve(o.size());
  std::vector<int> hist(history.begin(), history.end());
  for (int tok : o.tokens) {
    const std::vector<int> window = detail::context_window(arch, q, hist);
    const std::vector<T> logits = detail::logits_for_window(arch, theta, q.code, window);
    out.per_token.push_back(detail::token_log_prob(arch, logits, tok, exclude_terminal));
    hist.push_back(tok);
  }
  out.total = out.per_token.empty() ? T{} : ad::sum(std::span<const T>(out.per_token));
  return out;
}

inline SequenceLogProb sequence_log_prob(const PolicyParameters& params, const Query& q, const TokenSequence& o,
                                         bool exclude_terminal = false, std::span<const int> history = {}) {
  return sequence_log_prob<double>(params.arch, params.theta, q, o, exclude_terminal, history);
}

/// Policy parameters bound as leaves of a graph. Logits are memoized per
/// (query code, context window) so outputs sharing a context share nodes.
class BoundPolicy {
 public:
  BoundPolicy(ad::Graph& graph, const PolicyParameters& params)
      : graph_(&graph), arch_(params.arch), theta_(graph.parameters(params.theta)) {
    params.validate();
  }

  const Architecture& arch() const noexcept { return arch_; }
  std::span<const ad::Var> theta() const noexcept { return theta_; }
  ad::Graph& graph() const noexcept { return *graph_; }

  DiffSequenceLogProb sequence_log_prob(const Query& q, const TokenSequence& o, bool exclude_terminal = false) {
    detail::check_query(arch_, q);
    detail::check_sequence(arch_, o, 0, exclude_terminal);
    DiffSequenceLogProb out;
    std::vector<int> hist;
    hist.reserve(o.size());
    for (int tok : o.tokens) {
      const std::vector<ad::Var>& scores = logits(q, hist);
      out.per_token.push_back(detail::token_log_prob(arch_, scores, tok, exclude_terminal));
      hist.push_back(tok);
    }
    out.total = out.per_token.empty() ? graph_->constant(0.0) : ad::sum(std::span<const ad::Var>(out.per_token));
    return out;
  }

  const std::vector<ad::Var>& logits(const Query& q, std::span<const int> history) {
    std::vector<int> key = detail::context_window(arch_, q, history);
    key.push_back(q.code);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      std::span<const int> window(key.data(), key.size() - 1);
      it = cache_.emplace(key, detail::logits_for_window<ad::Var>(arch_, theta_, q.code, window)).first;
    }
    return it->second;
  }

 private:
  ad::Graph* graph_;
  Architecture arch_;
  std::vector<ad::Var> theta_;
  std::map<std::vector<int>, std::vector<ad::Var>> cache_;
};

// ---------------------------------------------------------------------------
// Sampling

/// Distribution actually sampled from: softmax(logits / temperature) restricted
/// to the nucleus (smallest descending-probability prefix with mass >= top_p,
/// boundary ties included) and renormalized. temperature must be > 0.
inline std::vector<double> sampling_distribution(std::span<const double> logits, double temperature, double top_p) {
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& l : scaled) l /= temperature;
  std::vector<double> p = softmax(scaled);
  if (top_p >= 1.0) return p;

  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += p[order[keep]];
    ++keep;
    if (mass >= top_p) break;
  }
  const double boundary = p[order[keep - 1]];
  while (keep < order.size() && p[order[keep]] == boundary) ++keep;

  std::vector<double> out(p.size(), 0.0);
  double kept_mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept_mass += p[order[i]];
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = p[order[i]] / kept_mass;
  return out;
}

struct SampledOutput {
  TokenSequence sequence;
  SequenceLogProb logprob;  ///< under the unmodified policy, independent of temperature / top_p
};

/// Ancestral sampling of G outputs. temperature == 0 decodes greedily (lowest id on ties).
inline std::vector<SampledOutput> sample_sequences(const PolicyParameters& params, const Query& q, int group_size,
                                                   double temperature, double top_p, std::uint64_t seed) {
  if (group_size < 1) throw InputError("group size must be at least 1");
  if (!(temperature >= 0.0)) throw InputError("temperature must be non-negative");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InputError("top_p must lie in (0, 1]");
  detail::check_query(params.arch, q);
  const Architecture& arch = params.arch;

  Rng rng(seed);
  std::vector<SampledOutput> out;
  out.reserve(static_cast<std::size_t>(group_size));
  for (int i = 0; i < group_size; ++i) {
    SampledOutput s;
    for (int t = 0; t < arch.max_len; ++t) {
      const std::vector<double> logits = next_token_logits<double>(arch, params.theta, q, s.sequence.tokens);
      std::size_t tok = 0;
      if (temperature == 0.0) {
        tok = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
      } else {
        const std::vector<double> dist = sampling_distribution(logits, temperature, top_p);
        const double u = rng.uniform();
        double c = 0.0;
        tok = dist.size() - 1;
        while (dist[tok] == 0.0) --tok;  // last token with support
        for (std::size_t k = 0; k < dist.size(); ++k) {
          c += dist[k];
          if (u < c && dist[k] > 0.0) {
            tok = k;
            break;
          }
        }
      }
      s.logprob.per_token.push_back(ad::log_softmax_at(std::span<const double>(logits), tok));
      s.sequence.tokens.push_back(static_cast<int>(tok));
      if (arch.has_terminal() && static_cast<int>(tok) == arch.terminal) {
        s.sequence.terminated = true;
        break;
      }
    }
    s.logprob.total = ad::sum(std::span<const double>(s.logprob.per_token));
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics and exact enumeration

inline double categorical_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

struct EntropyAccumulator {
  double total = 0.0;
  std::size_t steps = 0;

  double mean() const { return steps == 0 ? 0.0 : total / static_cast<double>(steps); }
};

/// Adds the next-token entropy at every generation step of every output.
inline void accumulate_entropy(const PolicyParameters& params, const Query& q, std::span<const TokenSequence> outputs,
                               EntropyAccumulator& acc) {
  for (const TokenSequence& o : outputs) {
    for (std::size_t t = 0; t < o.size(); ++t) {
      const std::vector<double> p =
          next_token_probs(params, q, std::span<const int>(o.tokens.data(), t));
      acc.total += categorical_entropy(p);
      ++acc.steps;
    }
  }
}

/// Mean per-token entropy (nats) over all generation steps in the group.
inline double policy_entropy(const PolicyParameters& params, const RolloutGroup& group) {
  if (group.outputs.empty()) throw InputError("policy_entropy needs a non-empty group");
  EntropyAccumulator acc;
  accumulate_entropy(params, group.query, group.outputs, acc);
  return acc.mean();
}

struct EnumeratedOutput {
  TokenSequence sequence;
  double probability = 0.0;
};

inline constexpr std::size_t kMaxEnumeration = 1'000'000;

/// Every fixed-length output over the non-terminal tokens with its exact
/// probability, renormalized with the terminal token masked out.
inline std::vector<EnumeratedOutput> enumerate_all_outputs(const PolicyParameters& params, const Query& q,
                                                           int exact_len) {
  const Architecture& arch = params.arch;
  if (exact_len < 0 || exact_len > arch.max_len) throw InputError("exact_len outside [0, max_len]");
  std::vector<int> alphabet;
  for (int k = 0; k < arch.vocab_size; ++k) {
    if (k != arch.terminal) alphabet.push_back(k);
  }
  std::size_t space = 1;
  for (int t = 0; t < exact_len; ++t) {
    if (space > kMaxEnumeration / alphabet.size()) {
      throw CapacityError("enumeration space exceeds " + std::to_string(kMaxEnumeration) + " sequences");
    }
    space *= alphabet.size();
  }

  std::vector<EnumeratedOutput> out;
  out.reserve(space);
  std::vector<int> prefix;
  const auto recurse = [&](auto&& self, double prob) -> void {
    if (static_cast<int>(prefix.size()) == exact_len) {
      out.push_back({TokenSequence{prefix, false}, prob});
      return;
    }
    const std::vector<double> p = next_token_probs(params, q, prefix, true);
    for (int tok : alphabet) {
      prefix.push_back(tok);
      self(self, prob * p[static_cast<std::size_t>(tok)]);
      prefix.pop_back();
    }
  };
  recurse(recurse, 1.0);
  return out;
}

}  // namespace pacs
