#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pacs/autodiff.hpp"
#include "pacs/errors.hpp"

namespace pacs {

/// A task instance. `code` selects the query embedding row; `prefix` is rendered
/// into the policy's context window ahead of the generated tokens.
struct Query {
  std::string task;
  int payload = 0;
  int code = 0;
  std::vector<int> prefix;

  friend bool operator==(const Query&, const Query&) = default;
};

/// Generated output. When `terminated` is set the terminal token is the last element of `tokens`.
struct TokenSequence {
  std::vector<int> tokens;
  bool terminated = false;

  std::size_t size() const noexcept { return tokens.size(); }

  /// Tokens with the trailing terminal (if any) removed.
  std::vector<int> content() const {
    if (!terminated || tokens.empty()) return tokens;
    return {tokens.begin(), tokens.end() - 1};
  }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Outcome reward. Kept as a plain int so malformed values can be detected where they are consumed.
struct BinaryReward {
  int value = 0;

  bool correct() const noexcept { return value == 1; }
  bool valid() const noexcept { return value == 0 || value == 1; }

  friend bool operator==(const BinaryReward&, const BinaryReward&) = default;
};

template <class T>
struct SequenceLogProbT {
  std::vector<T> per_token;
  T total{};
};

using SequenceLogProb = SequenceLogProbT<double>;
using DiffSequenceLogProb = SequenceLogProbT<ad::Var>;

/// One query with G sampled outputs and everything the objectives need about them.
/// `logprobs_rollout` is captured at sampling time and never recomputed; it may be
/// left empty for objectives that do not use it (PACS).
struct RolloutGroup {
  Query query;
  std::vector<TokenSequence> outputs;
  std::vector<SequenceLogProb> logprobs_current;
  std::vector<SequenceLogProb> logprobs_reference;
  std::vector<SequenceLogProb> logprobs_rollout;
  std::vector<BinaryReward> rewards;

  std::size_t size() const noexcept { return outputs.size(); }
};

inline void check_rewards_binary(const std::vector<BinaryReward>& rewards) {
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (!rewards[i].valid()) {
      throw InputError("reward " + std::to_string(i) + " is " + std::to_string(rewards[i].value) +
                       ", expected 0 or 1");
    }
  }
}

/// Checks the parallel-list invariant. `need_rollout` additionally requires rollout log-probs.
inline void validate_group(const RolloutGroup& group, bool need_rollout = false) {
  const std::size_t g = group.outputs.size();
  if (g == 0) throw InputError("rollout group is empty");
  if (group.rewards.size() != g) throw InputError("rewards size does not match group size");
  if (group.logprobs_reference.size() != g) throw InputError("reference log-probs size does not match group size");
  if (!group.logprobs_current.empty() && group.logprobs_current.size() != g) {
    throw InputError("current log-probs size does not match group size");
  }
  if (need_rollout && group.logprobs_rollout.size() != g) throw InputError("rollout log-probs missing from group");
  if (!group.logprobs_rollout.empty() && group.logprobs_rollout.size() != g) {
    throw InputError("rollout log-probs size does not match group size");
  }
  for (std::size_t i = 0; i < g; ++i) {
    if (group.logprobs_reference[i].per_token.size() != group.outputs[i].size()) {
      throw InputError("reference log-probs length does not match output " + std::to_string(i));
    }
    if (!group.logprobs_rollout.empty() && group.logprobs_rollout[i].per_token.size() != group.outputs[i].size()) {
      throw InputError("rollout log-probs length does not match output " + std::to_string(i));
    }
  }
  check_rewards_binary(group.rewards);
}

}  // namespace pacs
