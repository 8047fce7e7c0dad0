#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pacs/errors.hpp"
#include "pacs/policy.hpp"
#include "pacs/rng.hpp"
#include "pacs/tasks.hpp"

namespace pacs {

namespace detail {

// C(n, k) when it is below 2^53 (exactly representable), otherwise 0.
inline std::uint64_t small_binomial(std::uint64_t n, std::uint64_t k) {
  constexpr std::uint64_t kLimit = std::uint64_t{1} << 53;
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t c = 1;
  for (std::uint64_t i = 0; i < k; ++i) {
    // c * (n - i) / (i + 1) is exact; divide first so nothing overflows.
    const std::uint64_t g = std::gcd(c, i + 1);
    const std::uint64_t factor = (n - i) / ((i + 1) / g);
    c /= g;
    if (c >= kLimit / factor + 1) return 0;
    c *= factor;
    if (c >= kLimit) return 0;
  }
  return c;
}

}  // namespace detail

/// Unbiased pass@k: 1 - C(n-c, k) / C(n, k).
/// Exact integer arithmetic while C(n, k) < 2^53, otherwise the product
/// prod_{i<k} (1 - c/(n-i)) accumulated in log space.
inline double pass_at_k(int n, int c, int k) {
  if (n < 1) throw InputError("pass_at_k: n must be at least 1");
  if (c < 0 || c > n) throw InputError("pass_at_k: c must lie in [0, n]");
  if (k < 1 || k > n) throw InputError("pass_at_k: k must lie in [1, n]");
  if (c == 0) return 0.0;
  if (n - c < k) return 1.0;
  const auto un = static_cast<std::uint64_t>(n);
  const auto uc = static_cast<std::uint64_t>(c);
  const auto uk = static_cast<std::uint64_t>(k);
  if (const std::uint64_t total = detail::small_binomial(un, uk); total != 0) {
    const std::uint64_t misses = detail::small_binomial(un - uc, uk);
    return static_cast<double>(total - misses) / static_cast<double>(total);
  }
  double log_miss = 0.0;
  for (int i = 0; i < k; ++i) log_miss += std::log1p(-static_cast<double>(c) / static_cast<double>(n - i));
  return -std::expm1(log_miss);
}

struct EvalReport {
  std::string task;
  std::string checkpoint;  ///< identifier of the evaluated policy (path or label)
  int n = 0;
  std::uint64_t seed = 0;
  double temperature = 0.0;
  double top_p = 1.0;
  std::vector<int> k_grid;
  std::vector<double> pass_at_k;  ///< mean over problems, aligned with k_grid
  std::vector<int> payloads;       ///< per problem
  std::vector<int> correct;        ///< per problem, out of n

  nlohmann::json to_json() const {
    nlohmann::json table = nlohmann::json::object();
    for (std::size_t i = 0; i < k_grid.size(); ++i) table["pass@" + std::to_string(k_grid[i])] = pass_at_k[i];
    return {{"task", task},       {"checkpoint", checkpoint}, {"n", n},
            {"seed", seed},       {"temperature", temperature}, {"top_p", top_p},
            {"problems", static_cast<int>(correct.size())},
            {"k", k_grid},        {"pass_at_k", table},       {"payloads", payloads},
            {"correct", correct}};
  }

  std::string to_text() const {
    std::ostringstream out;
    out << "task " << task << "  problems " << correct.size() << "  n " << n << "  seed " << seed << "  temperature "
        << temperature << "  top_p " << top_p << "\n";
    if (!checkpoint.empty()) out << "policy " << checkpoint << "\n";
    out << std::left << std::setw(10) << "k" << "pass@k\n";
    out << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < k_grid.size(); ++i) {
      out << std::left << std::setw(10) << k_grid[i] << pass_at_k[i] << "\n";
    }
    return out.str();
  }
};

struct EvalOptions {
  int problems = 0;  ///< 0 evaluates every query in the task domain, in order
  int n = 32;
  std::vector<int> k_grid{1, 2, 4, 8};
  double temperature = 0.6;
  double top_p = 0.96;
  std::uint64_t seed = 1234;
};

/// Samples n outputs per problem, verifies them and averages pass@k over problems.
inline EvalReport evaluate_policy(const PolicyParameters& params, const Task& task, const EvalOptions& options,
                                  const std::string& checkpoint_id = {}) {
  if (options.n < 1) throw InputError("evaluation needs n >= 1");
  if (options.k_grid.empty()) throw InputError("evaluation k grid is empty");
  for (int k : options.k_grid) {
    if (k < 1 || k > options.n) {
      throw InputError("k = " + std::to_string(k) + " outside [1, n = " + std::to_string(options.n) + "]");
    }
  }
  if (options.problems < 0) throw InputError("problem count must be non-negative");

  std::vector<Query> queries;
  if (options.problems == 0) {
    queries = task.all_queries();
  } else {
    Rng rng(derive_seed(options.seed, {0}));
    for (int p = 0; p < options.problems; ++p) queries.push_back(task.sample_query(rng));
  }

  EvalReport report;
  report.task = std::string(task.id());
  report.checkpoint = checkpoint_id;
  report.n = options.n;
  report.seed = options.seed;
  report.temperature = options.temperature;
  report.top_p = options.top_p;
  report.k_grid = options.k_grid;
  report.pass_at_k.assign(options.k_grid.size(), 0.0);
  for (std::size_t p = 0; p < queries.size(); ++p) {
    const Query& q = queries[p];
    const auto samples = sample_sequences(params, q, options.n, options.temperature, options.top_p,
                                          derive_seed(options.seed, {1, p}));
    int c = 0;
    for (const SampledOutput& s : samples) c += task.verify(q, s.sequence).value;
    report.payloads.push_back(q.payload);
    report.correct.push_back(c);
    for (std::size_t i = 0; i < options.k_grid.size(); ++i) report.pass_at_k[i] += pass_at_k(options.n, c, options.k_grid[i]);
  }
  for (double& v : report.pass_at_k) v /= static_cast<double>(queries.size());
  return report;
}

}  // namespace pacs
