#pragma once

// Synthetic tasks with rule-based binary verifiers.
//
//   modsum  digits 0..D-1, reward 1 iff the digit sum is congruent to the target mod M
//   paren   '(' = 0, ')' = 1, reward 1 iff the output is balanced with exactly the requested length
//   copy    reward 1 iff the output repeats the query prefix
//
// Every task reserves the last vocabulary id as the terminal token. Outputs are
// judged on their content (terminal stripped); outputs that are longer than
// max_len or contain the terminal anywhere but the end verify to 0.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pacs/errors.hpp"
#include "pacs/policy.hpp"
#include "pacs/rng.hpp"
#include "pacs/types.hpp"

namespace pacs {

/// Task id plus every task parameter; unused fields are ignored by other tasks.
struct TaskConfig {
  std::string id = "modsum";
  int modulus = 10;   // modsum
  int digits = 10;    // modsum
  int max_len = 0;    // 0 selects the task default
  int alphabet = 3;   // copy
  int length = 3;     // copy
};

class Task {
 public:
  virtual ~Task() = default;

  virtual std::string_view id() const = 0;
  virtual int vocab_size() const = 0;
  virtual int query_slots() const = 0;
  virtual int max_len() const = 0;
  int terminal() const { return vocab_size() - 1; }

  /// Uniform draw over the query domain.
  virtual Query sample_query(Rng& rng) const = 0;
  virtual std::vector<Query> all_queries() const = 0;
  virtual bool query_in_domain(const Query& q) const = 0;

  /// Content-level check; `content` excludes the terminal token.
  virtual bool accepts(const Query& q, std::span<const int> content) const = 0;

  BinaryReward verify(const Query& q, const TokenSequence& o) const {
    if (!query_in_domain(q)) return {0};
    if (static_cast<int>(o.size()) > max_len()) return {0};
    std::span<const int> content(o.tokens);
    if (!content.empty() && content.back() == terminal()) content = content.first(content.size() - 1);
    for (int t : content) {
      if (t < 0 || t >= terminal()) return {0};
    }
    return {accepts(q, content) ? 1 : 0};
  }

  Architecture architecture(int window, int hidden) const {
    Architecture a;
    a.vocab_size = vocab_size();
    a.window = window;
    a.hidden = hidden;
    a.max_len = max_len();
    a.terminal = terminal();
    a.query_slots = query_slots();
    return a;
  }
};

class ModSumTask final : public Task {
 public:
  ModSumTask(int modulus, int digits, int max_len) : modulus_(modulus), digits_(digits), max_len_(max_len) {
    if (modulus < 1) throw ConfigError("task.modulus must be at least 1");
    if (digits < 2) throw ConfigError("task.digits must be at least 2");
    if (max_len < 1) throw ConfigError("task.max_len must be at least 1");
  }

  std::string_view id() const override { return "modsum"; }
  int vocab_size() const override { return digits_ + 1; }
  int query_slots() const override { return modulus_; }
  int max_len() const override { return max_len_; }

  Query sample_query(Rng& rng) const override { return make(static_cast<int>(rng.below(static_cast<std::uint64_t>(modulus_)))); }

  std::vector<Query> all_queries() const override {
    std::vector<Query> qs;
    for (int r = 0; r < modulus_; ++r) qs.push_back(make(r));
    return qs;
  }

  bool query_in_domain(const Query& q) const override {
    return q.task == id() && q.payload >= 0 && q.payload < modulus_ && q.code == q.payload;
  }

  bool accepts(const Query& q, std::span<const int> content) const override {
    if (content.empty()) return false;
    long sum = 0;
    for (int d : content) sum += d;
    return sum % modulus_ == q.payload;
  }

  Query make(int target) const {
    Query q{std::string(id()), target, target, {}};
    // Target rendered as base-D digits, most significant first.
    int x = target;
    do {
      q.prefix.insert(q.prefix.begin(), x % digits_);
      x /= digits_;
    } while (x > 0);
    return q;
  }

 private:
  int modulus_;
  int digits_;
  int max_len_;
};

class ParenTask final : public Task {
 public:
  static constexpr int kOpen = 0;
  static constexpr int kClose = 1;

  explicit ParenTask(int max_len) : max_len_(max_len) {
    if (max_len < 2) throw ConfigError("task.max_len must be at least 2 for paren");
  }

  std::string_view id() const override { return "paren"; }
  int vocab_size() const override { return 3; }
  int query_slots() const override { return max_len_ / 2; }
  int max_len() const override { return max_len_; }

  Query sample_query(Rng& rng) const override {
    return make(2 * (1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len_ / 2)))));
  }

  std::vector<Query> all_queries() const override {
    std::vector<Query> qs;
    for (int n = 2; n <= max_len_; n += 2) qs.push_back(make(n));
    return qs;
  }

  bool query_in_domain(const Query& q) const override {
    return q.task == id() && q.payload >= 2 && q.payload <= max_len_ && q.payload % 2 == 0 &&
           q.code == q.payload / 2 - 1;
  }

  bool accepts(const Query& q, std::span<const int> content) const override {
    if (static_cast<int>(content.size()) != q.payload) return false;
    int depth = 0;
    for (int t : content) {
      depth += t == kOpen ? 1 : -1;
      if (depth < 0) return false;
    }
    return depth == 0;
  }

  Query make(int length) const { return Query{std::string(id()), length, length / 2 - 1, {}}; }

 private:
  int max_len_;
};

class CopyTask final : public Task {
 public:
  CopyTask(int alphabet, int length, int max_len) : alphabet_(alphabet), length_(length), max_len_(max_len) {
    if (alphabet < 2) throw ConfigError("task.alphabet must be at least 2");
    if (length < 1) throw ConfigError("task.length must be at least 1");
    if (max_len < length) throw ConfigError("task.max_len must be at least task.length for copy");
    slots_ = 1;
    for (int i = 0; i < length; ++i) {
      if (slots_ > 1'000'000 / alphabet) throw ConfigError("copy query space too large");
      slots_ *= alphabet;
    }
  }

  std::string_view id() const override { return "copy"; }
  int vocab_size() const override { return alphabet_ + 1; }
  int query_slots() const override { return slots_; }
  int max_len() const override { return max_len_; }

  Query sample_query(Rng& rng) const override { return make(static_cast<int>(rng.below(static_cast<std::uint64_t>(slots_)))); }

  std::vector<Query> all_queries() const override {
    std::vector<Query> qs;
    for (int p = 0; p < slots_; ++p) qs.push_back(make(p));
    return qs;
  }

  bool query_in_domain(const Query& q) const override {
    return q.task == id() && q.payload >= 0 && q.payload < slots_ && q.code == q.payload && q == make(q.payload);
  }

  bool accepts(const Query& q, std::span<const int> content) const override {
    return std::equal(content.begin(), content.end(), q.prefix.begin(), q.prefix.end());
  }

  Query make(int payload) const {
    Query q{std::string(id()), payload, payload, std::vector<int>(static_cast<std::size_t>(length_))};
    int x = payload;
    for (int i = length_ - 1; i >= 0; --i) {
      q.prefix[static_cast<std::size_t>(i)] = x % alphabet_;
      x /= alphabet_;
    }
    return q;
  }

 private:
  int alphabet_;
  int length_;
  int max_len_;
  int slots_;
};

inline const std::vector<std::string>& task_ids() {
  static const std::vector<std::string> ids{"modsum", "paren", "copy"};
  return ids;
}

namespace detail {

// Depth-first search for any accepted output of length <= max_len.
inline bool solvable(const Task& task, const Query& q) {
  std::vector<int> content;
  const int alphabet = task.terminal();
  const auto search = [&](auto&& self) -> bool {
    if (task.accepts(q, content)) return true;
    // Room for content plus an optional terminal; content alone may fill max_len.
    if (static_cast<int>(content.size()) >= task.max_len()) return false;
    for (int t = 0; t < alphabet; ++t) {
      content.push_back(t);
      const bool ok = self(self);
      content.pop_back();
      if (ok) return true;
    }
    return false;
  };
  return search(search);
}

}  // namespace detail

inline constexpr std::size_t kSolvabilityCheckLimit = 200'000;

/// Builds a registered task. Throws ConfigError for unknown ids (listing the valid
/// ones) and for configurations with an unsolvable query when the output space is
/// small enough to search exhaustively.
inline std::unique_ptr<Task> make_task(const TaskConfig& cfg) {
  std::unique_ptr<Task> task;
  if (cfg.id == "modsum") {
    task = std::make_unique<ModSumTask>(cfg.modulus, cfg.digits, cfg.max_len > 0 ? cfg.max_len : 4);
  } else if (cfg.id == "paren") {
    task = std::make_unique<ParenTask>(cfg.max_len > 0 ? cfg.max_len : 8);
  } else if (cfg.id == "copy") {
    task = std::make_unique<CopyTask>(cfg.alphabet, cfg.length, cfg.max_len > 0 ? cfg.max_len : cfg.length + 1);
  } else {
    throw ConfigError("unknown task id '" + cfg.id + "' (valid: modsum, paren, copy)");
  }

  double space = 1.0;
  for (int t = 0; t < task->max_len(); ++t) space *= task->terminal();
  if (space * static_cast<double>(task->query_slots()) <= static_cast<double>(kSolvabilityCheckLimit)) {
    for (const Query& q : task->all_queries()) {
      if (!detail::solvable(*task, q)) {
        throw ConfigError("task '" + cfg.id + "' has an unsolvable query (payload " + std::to_string(q.payload) + ")");
      }
    }
  }
  return task;
}

inline Query sample_query(const Task& task, std::uint64_t seed) {
  Rng rng(seed);
  return task.sample_query(rng);
}

inline BinaryReward verify(const Task& task, const Query& q, const TokenSequence& o) { return task.verify(q, o); }

}  // namespace pacs
