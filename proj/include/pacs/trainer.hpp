#pragma once

// Rollout / update loop.
//
// Run directory layout:
//   config.txt                   resolved configuration, one `key = value` per line with its source
//   metrics.jsonl                one MetricsRecord per optimizer step
//   eval.jsonl                   one EvalReport per evaluation (periodic and final)
//   eval.txt                     final evaluation table
//   checkpoints/step_NNNNNN.json periodic checkpoints (step 0 included)
//   final.json                   last state, written when at least one step ran
//   FAILED                       present only when the run was abandoned; holds the reason

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pacs/autodiff.hpp"
#include "pacs/checkpoint.hpp"
#include "pacs/config.hpp"
#include "pacs/eval.hpp"
#include "pacs/objectives.hpp"
#include "pacs/optimizer.hpp"
#include "pacs/policy.hpp"
#include "pacs/rng.hpp"
#include "pacs/scores.hpp"
#include "pacs/tasks.hpp"
#include "pacs/value_model.hpp"

namespace pacs {

// Stream ids for derive_seed(seed, {stream, step, group}).
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kQueryStream = 2;
inline constexpr std::uint64_t kRolloutStream = 3;
inline constexpr std::uint64_t kValueInitStream = 4;

struct MetricsRecord {
  int step = 0;
  double loss = 0.0;                  ///< objective value on the fresh rollouts (first inner epoch)
  double entropy = 0.0;               ///< mean next-token entropy over all generated tokens, nats
  double grad_norm = 0.0;             ///< L2 norm of the first applied gradient
  double mean_response_length = 0.0;  ///< tokens per output, terminal included
  double accuracy = 0.0;              ///< mean reward over the batch
  double w_correct = 1.0;
  double w_incorrect = 1.0;
  double value_loss = 0.0;  ///< PPO only
  bool failed = false;
  bool reference_reset = false;
  std::string error;

  nlohmann::json to_json() const {
    const auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
    nlohmann::json j{{"step", step},
                     {"loss", num(loss)},
                     {"entropy", num(entropy)},
                     {"grad_norm", num(grad_norm)},
                     {"mean_response_length", num(mean_response_length)},
                     {"accuracy", num(accuracy)},
                     {"w_correct", num(w_correct)},
                     {"w_incorrect", num(w_incorrect)},
                     {"value_loss", num(value_loss)},
                     {"failed", failed},
                     {"reference_reset", reference_reset}};
    if (!error.empty()) j["error"] = error;
    return j;
  }
};

inline Architecture policy_architecture(const TrainerConfig& cfg, const Task& task) {
  return task.architecture(cfg.window, cfg.hidden);
}

inline TrainingState initial_state(const TrainerConfig& cfg, const Task& task) {
  PolicyParameters policy =
      initialize_policy(policy_architecture(cfg, task), derive_seed(cfg.seed, {kInitStream}), cfg.init_scale);
  const ValueArchitecture varch{task.query_slots(), task.max_len() + 1, cfg.value_hidden};
  ValueModel value = initialize_value_model(varch, derive_seed(cfg.seed, {kValueInitStream}));
  AdamConfig value_adam = cfg.adam();
  value_adam.learning_rate *= cfg.value_lr_scale;
  const std::size_t n_policy = policy.theta.size();
  const std::size_t n_value = value.theta.size();
  TrainingState s{policy, snapshot(policy, SnapshotRole::reference), OptimizerState(cfg.adam(), n_policy),
                  std::move(value), OptimizerState(value_adam, n_value)};
  return s;
}

/// Samples groups_per_step groups for `step`; depends only on (seed, step) and the current policy.
inline std::vector<RolloutGroup> collect_rollouts(const TrainerConfig& cfg, const Task& task, const TrainingState& s,
                                                  int step) {
  std::vector<RolloutGroup> groups;
  groups.reserve(static_cast<std::size_t>(cfg.groups_per_step));
  const PolicyParameters& ref = s.reference.parameters();
  for (int g = 0; g < cfg.groups_per_step; ++g) {
    const auto ustep = static_cast<std::uint64_t>(step);
    const auto ug = static_cast<std::uint64_t>(g);
    Rng qrng(derive_seed(cfg.seed, {kQueryStream, ustep, ug}));
    RolloutGroup group;
    group.query = task.sample_query(qrng);
    const auto samples = sample_sequences(s.policy, group.query, cfg.group_size, cfg.temperature, cfg.top_p,
                                          derive_seed(cfg.seed, {kRolloutStream, ustep, ug}));
    for (const SampledOutput& out : samples) {
      group.outputs.push_back(out.sequence);
      group.logprobs_rollout.push_back(out.logprob);
      group.logprobs_current.push_back(out.logprob);
      group.logprobs_reference.push_back(sequence_log_prob(ref, group.query, out.sequence));
      group.rewards.push_back(task.verify(group.query, out.sequence));
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

namespace detail {

inline std::vector<std::vector<AdvantageVector>> ppo_advantages(const TrainerConfig& cfg, const ValueModel& value,
                                                                const std::vector<RolloutGroup>& groups) {
  std::vector<std::vector<AdvantageVector>> out;
  for (const RolloutGroup& g : groups) {
    std::vector<AdvantageVector> per_output;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const TokenSequence& o = g.outputs[i];
      std::vector<double> rewards(o.size(), 0.0);
      if (!rewards.empty()) rewards.back() = static_cast<double>(g.rewards[i].value);
      const std::vector<double> values = trajectory_values(value, g.query, o);
      per_output.push_back(gae_advantages(rewards, values, cfg.gae_gamma, cfg.gae_lambda));
    }
    out.push_back(std::move(per_output));
  }
  return out;
}

}  // namespace detail

/// Builds the configured objective over the batch as the mean of per-group losses.
inline ad::Var batch_loss(const TrainerConfig& cfg, BoundPolicy& policy, const std::vector<RolloutGroup>& groups,
                          const std::optional<ClassWeights>& batch_weights,
                          const std::vector<std::vector<AdvantageVector>>& advantages) {
  std::vector<ad::Var> losses;
  losses.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const RolloutGroup& group = groups[g];
    switch (cfg.algo) {
      case Algorithm::pacs: {
        PacsOptions opts;
        opts.beta = cfg.beta;
        opts.scores = cfg.score_options();
        opts.mode = cfg.gradient_mode;
        opts.surrogate = cfg.surrogate;
        if (cfg.weighting) {
          opts.weights = cfg.weight_scope == WeightScope::batch
                             ? batch_weights
                             : std::optional<ClassWeights>(class_weights(group.rewards, WeightScope::group));
        }
        losses.push_back(pacs_loss(policy, group, opts));
        break;
      }
      case Algorithm::grpo: {
        GrpoOptions opts;
        opts.clip_eps = cfg.clip_eps;
        opts.kl_beta = cfg.kl_beta;
        opts.std_epsilon = cfg.std_eps;
        opts.std_kind = cfg.std_kind;
        losses.push_back(grpo_loss(policy, group, opts));
        break;
      }
      case Algorithm::ppo:
        losses.push_back(ppo_loss(policy, group, advantages[g], cfg.clip_eps));
        break;
    }
  }
  return ad::sum(std::span<const ad::Var>(losses)) * (1.0 / static_cast<double>(losses.size()));
}

/// One optimizer step (or inner_epochs steps over the same rollouts). Advances
/// s.step; a non-finite loss or gradient marks the step failed and skips the update.
inline MetricsRecord train_step(const TrainerConfig& cfg, const Task& task, TrainingState& s) {
  const int step = s.step + 1;
  MetricsRecord rec;
  rec.step = step;

  const std::vector<RolloutGroup> groups = collect_rollouts(cfg, task, s, step);

  EntropyAccumulator entropy;
  std::vector<BinaryReward> all_rewards;
  double tokens = 0.0;
  for (const RolloutGroup& g : groups) {
    accumulate_entropy(s.policy, g.query, g.outputs, entropy);
    for (std::size_t i = 0; i < g.size(); ++i) {
      tokens += static_cast<double>(g.outputs[i].size());
      all_rewards.push_back(g.rewards[i]);
    }
  }
  rec.entropy = entropy.mean();
  rec.mean_response_length = tokens / static_cast<double>(all_rewards.size());
  double correct = 0.0;
  for (BinaryReward r : all_rewards) correct += r.value;
  rec.accuracy = correct / static_cast<double>(all_rewards.size());

  std::optional<ClassWeights> batch_weights;
  if (cfg.algo == Algorithm::pacs && cfg.weighting) {
    const ClassWeights w = class_weights(all_rewards, WeightScope::batch);
    if (cfg.weight_scope == WeightScope::batch) batch_weights = w;
    rec.w_correct = w.correct;
    rec.w_incorrect = w.incorrect;
  }

  std::vector<std::vector<AdvantageVector>> advantages;
  if (cfg.algo == Algorithm::ppo) advantages = detail::ppo_advantages(cfg, s.value, groups);

  ad::Graph graph;
  for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
    graph.clear();
    BoundPolicy bound(graph, s.policy);
    try {
      const ad::Var loss = batch_loss(cfg, bound, groups, batch_weights, advantages);
      if (!std::isfinite(loss.value())) throw NumericError("non-finite loss", loss.id());
      const ad::GradientMap grads = graph.backward(loss);
      if (epoch == 0) {
        rec.loss = loss.value();
        rec.grad_norm = grads.l2_norm();
      }
      if (adaptive_moment_step(s.policy.theta, grads, s.optimizer) != StepOutcome::applied) {
        throw NumericError("non-finite gradient or update", loss.id());
      }
    } catch (const NumericError& e) {
      rec.failed = true;
      rec.error = e.what();
      break;
    }
  }

  if (cfg.algo == Algorithm::ppo && !rec.failed) {
    graph.clear();
    const std::vector<ad::Var> vtheta = graph.parameters(s.value.theta);
    std::vector<ad::Var> losses;
    for (const RolloutGroup& g : groups) losses.push_back(value_loss(graph, vtheta, s.value.arch, g));
    const ad::Var vloss = ad::sum(std::span<const ad::Var>(losses)) * (1.0 / static_cast<double>(losses.size()));
    rec.value_loss = vloss.value();
    try {
      const ad::GradientMap vgrads = graph.backward(vloss);
      if (adaptive_moment_step(s.value.theta, vgrads, s.value_optimizer) != StepOutcome::applied) {
        throw NumericError("non-finite value gradient or update", vloss.id());
      }
    } catch (const NumericError& e) {
      rec.failed = true;
      rec.error = e.what();
    }
  }

  s.step = step;
  s.consecutive_failures = rec.failed ? s.consecutive_failures + 1 : 0;
  return rec;
}

/// Hard reset after step `step` when it is a multiple of reset_period: the
/// reference becomes a snapshot of the policy and the policy optimizer restarts.
inline bool maybe_reset_reference(const TrainerConfig& cfg, int step, TrainingState& s) {
  if (step < 1) throw InputError("reset check needs step >= 1");
  if (cfg.reset_period <= 0 || step % cfg.reset_period != 0) return false;
  s.reference = snapshot(s.policy, SnapshotRole::reference);
  s.optimizer.reset();
  ++s.resets;
  return true;
}

// ---------------------------------------------------------------------------
// Full runs

inline EvalOptions eval_options(const TrainerConfig& cfg) {
  EvalOptions o;
  o.problems = cfg.eval.problems;
  o.n = cfg.eval.n;
  o.k_grid = cfg.eval.k_grid;
  o.temperature = cfg.eval.temperature;
  o.top_p = cfg.eval.top_p;
  o.seed = cfg.eval.seed;
  return o;
}

struct RunOptions {
  ResolvedConfig config;
  std::string run_dir;
  std::string resume_from;  ///< checkpoint path, empty for a fresh run
  std::ostream* log = nullptr;
};

struct RunResult {
  std::vector<MetricsRecord> metrics;  ///< records produced by this invocation
  std::optional<EvalReport> final_eval;
  bool failed = false;
  std::string message;
  std::string run_dir;
  int resets = 0;
};

inline std::string checkpoint_name(int step) {
  std::ostringstream s;
  s << "step_" << std::setw(6) << std::setfill('0') << step << ".json";
  return s.str();
}

namespace detail {

// Keeps only JSONL records up to `step` so a resumed run stays strictly ordered.
inline void truncate_metrics(const std::filesystem::path& path, int step) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::string line;
  std::string kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step") || j["step"].get<int>() > step) continue;
    kept += line + "\n";
  }
  in.close();
  write_text_atomic(path.string(), kept);
}

}  // namespace detail

/// Executes steps until cfg.steps, streaming metrics and checkpoints into run_dir.
inline RunResult run_training(const RunOptions& options) {
  namespace fs = std::filesystem;
  const TrainerConfig& cfg = options.config.config.trainer;
  validate(cfg);
  const auto task = make_task(cfg.task);
  const std::string config_text = format_config(options.config);

  RunResult result;
  result.run_dir = options.run_dir;
  const fs::path dir(options.run_dir);
  fs::create_directories(dir / "checkpoints");
  fs::remove(dir / "FAILED");
  write_text_atomic((dir / "config.txt").string(), config_text);

  TrainingState state = options.resume_from.empty() ? initial_state(cfg, *task) : load_checkpoint(options.resume_from);
  if (state.policy.arch != policy_architecture(cfg, *task)) {
    throw ConfigError("checkpoint architecture does not match the configured task/model");
  }
  state.optimizer.config = cfg.adam();
  state.value_optimizer.config = cfg.adam();
  state.value_optimizer.config.learning_rate *= cfg.value_lr_scale;

  const fs::path metrics_path = dir / "metrics.jsonl";
  if (options.resume_from.empty()) {
    write_text_atomic(metrics_path.string(), "");
    write_text_atomic((dir / "eval.jsonl").string(), "");
    save_checkpoint((dir / "checkpoints" / checkpoint_name(0)).string(), state, cfg.task.id, config_text);
  } else {
    detail::truncate_metrics(metrics_path, state.step);
    detail::truncate_metrics(dir / "eval.jsonl", state.step);
  }
  std::ofstream metrics(metrics_path, std::ios::app);
  std::ofstream evals(dir / "eval.jsonl", std::ios::app);
  if (!metrics || !evals) throw FileError("cannot open logs in '" + options.run_dir + "'");

  const auto fail = [&](const std::string& reason) {
    metrics.flush();
    write_text_atomic((dir / "FAILED").string(), reason + "\n");
    result.failed = true;
    result.message = reason;
  };

  const int interval = cfg.checkpoint_interval();
  try {
    while (state.step < cfg.steps) {
      MetricsRecord rec = train_step(cfg, *task, state);
      rec.reference_reset = maybe_reset_reference(cfg, rec.step, state);
      metrics << rec.to_json().dump() << "\n";
      metrics.flush();
      result.metrics.push_back(rec);
      if (options.log != nullptr && (rec.step % interval == 0 || rec.failed)) {
        *options.log << "step " << rec.step << "  loss " << rec.loss << "  acc " << rec.accuracy << "  entropy "
                     << rec.entropy << (rec.failed ? "  FAILED: " + rec.error : std::string()) << "\n";
      }
      if (state.consecutive_failures >= cfg.max_failures) {
        fail(std::to_string(state.consecutive_failures) + " consecutive failed steps; last error: " + rec.error);
        break;
      }
      if (rec.step % interval == 0) {
        save_checkpoint((dir / "checkpoints" / checkpoint_name(rec.step)).string(), state, cfg.task.id, config_text);
      }
      if (cfg.eval.every > 0 && rec.step % cfg.eval.every == 0 && rec.step < cfg.steps) {
        nlohmann::json j = evaluate_policy(state.policy, *task, eval_options(cfg)).to_json();
        j["step"] = rec.step;
        evals << j.dump() << "\n";
        evals.flush();
      }
    }
  } catch (const std::exception& e) {
    fail(std::string("runtime error: ") + e.what());
  }
  result.resets = state.resets;

  if (state.step > 0) save_checkpoint((dir / "final.json").string(), state, cfg.task.id, config_text);
  if (!result.failed) {
    EvalReport report = evaluate_policy(state.policy, *task, eval_options(cfg), (dir / "final.json").string());
    nlohmann::json j = report.to_json();
    j["step"] = state.step;
    evals << j.dump() << "\n";
    write_text_atomic((dir / "eval.txt").string(), report.to_text());
    result.final_eval = std::move(report);
  }
  return result;
}

}  // namespace pacs
