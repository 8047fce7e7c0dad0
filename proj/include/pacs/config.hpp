#pragma once

// Run configuration: a flat `key = value` text format. Every key is also a CLI
// flag (`--group-size 4` for `group_size`, `--task-modulus 5` for `task.modulus`).
// Sources are layered defaults < file < command line; the resolved file written
// to each run directory records the source of every key.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "pacs/errors.hpp"
#include "pacs/objectives.hpp"
#include "pacs/optimizer.hpp"
#include "pacs/scores.hpp"
#include "pacs/tasks.hpp"

namespace pacs {

enum class Algorithm { pacs, ppo, grpo };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::pacs: return "pacs";
    case Algorithm::ppo: return "ppo";
    case Algorithm::grpo: return "grpo";
  }
  return "unknown";
}

inline Algorithm parse_algorithm(std::string_view s) {
  if (s == "pacs") return Algorithm::pacs;
  if (s == "ppo") return Algorithm::ppo;
  if (s == "grpo") return Algorithm::grpo;
  throw ConfigError("unknown algorithm '" + std::string(s) + "' (valid: pacs, ppo, grpo)");
}

struct EvalConfig {
  int problems = 0;  ///< 0 evaluates every query in the task domain
  int n = 32;
  std::vector<int> k_grid{1, 2, 4, 8};
  double temperature = 0.6;
  double top_p = 0.96;
  std::uint64_t seed = 1234;
  int every = 0;  ///< evaluate every this many steps during training, 0 only at the end
};

struct TrainerConfig {
  Algorithm algo = Algorithm::pacs;
  TaskConfig task;
  int window = 4;
  int hidden = 32;
  double init_scale = 0.01;

  int group_size = 8;
  int groups_per_step = 8;
  int steps = 200;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  double top_p = 1.0;
  int inner_epochs = 1;

  double learning_rate = 3e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  double beta = 1.0;
  Estimator estimator = Estimator::rloo;
  GradientMode gradient_mode = GradientMode::full;
  Surrogate surrogate = Surrogate::group;
  bool weighting = true;
  WeightScope weight_scope = WeightScope::batch;
  bool psi_clamp = false;
  double psi_max = kDefaultPsiMax;
  StdKind std_kind = StdKind::population;
  double std_eps = kDefaultStdEpsilon;
  int reset_period = 100;  ///< 0 disables reference resets

  double clip_eps = 0.2;
  double kl_beta = 0.0;
  double gae_gamma = 1.0;
  double gae_lambda = 0.95;
  double value_lr_scale = 10.0;
  int value_hidden = 16;

  int checkpoint_every = 0;  ///< 0 selects max(1, steps / 10)
  int max_failures = 10;     ///< consecutive failed steps before the run is abandoned
  EvalConfig eval;

  AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps}; }

  int checkpoint_interval() const { return checkpoint_every > 0 ? checkpoint_every : std::max(1, steps / 10); }

  ScoreOptions score_options() const {
    ScoreOptions o;
    o.estimator = estimator;
    o.std_epsilon = std_eps;
    o.std_kind = std_kind;
    if (psi_clamp) o.psi_clamp = psi_max;
    return o;
  }
};

struct SweepAxes {
  std::vector<double> beta;
  std::vector<Estimator> estimator;
  std::vector<bool> weighting;
  std::vector<GradientMode> gradient_mode;
};

struct RunConfig {
  TrainerConfig trainer;
  std::string output_dir;  ///< empty selects $PACS_OUTPUT_ROOT (or ./runs) plus a generated name
  SweepAxes sweep;
};

// ---------------------------------------------------------------------------
// Value formatting and parsing

inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    std::string item = trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

namespace detail {

inline double parse_double(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(x)) {
    throw ConfigError(std::string(key) + ": expected a finite number, got '" + s + "'");
  }
  return x;
}

template <class Int>
Int parse_int(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  Int x{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError(std::string(key) + ": expected an integer, got '" + s + "'");
  }
  return x;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  if (s == "true" || s == "on" || s == "1") return true;
  if (s == "false" || s == "off" || s == "0") return false;
  throw ConfigError(std::string(key) + ": expected true/false, got '" + s + "'");
}

// Re-throws parse errors from enum parsers with the key prepended.
template <class F>
auto keyed(std::string_view key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(std::string(key) + ":", 0) == 0) throw;
    throw ConfigError(std::string(key) + ": " + msg);
  }
}

template <class T, class Parse>
std::vector<T> parse_list(std::string_view key, std::string_view text, Parse&& parse) {
  std::vector<T> out;
  for (const std::string& item : split_list(text)) out.push_back(parse(item));
  if (out.empty()) throw ConfigError(std::string(key) + ": list is empty");
  return out;
}

template <class T, class Format>
std::string join(const std::vector<T>& xs, Format&& format) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) out += ",";
    out += format(xs[i]);
  }
  return out;
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

/// All recognized keys, in the order they are written to resolved configs.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    const auto add_double = [&k](std::string name, std::string help, double TrainerConfig::*field) {
      k.push_back({name, help, [field](const RunConfig& c) { return format_double(c.trainer.*field); },
                   [field, name](RunConfig& c, const std::string& v) { c.trainer.*field = parse_double(name, v); }});
    };
    const auto add_int = [&k](std::string name, std::string help, int TrainerConfig::*field) {
      k.push_back({name, help, [field](const RunConfig& c) { return std::to_string(c.trainer.*field); },
                   [field, name](RunConfig& c, const std::string& v) { c.trainer.*field = parse_int<int>(name, v); }});
    };
    const auto add_bool = [&k](std::string name, std::string help, bool TrainerConfig::*field) {
      k.push_back({name, help, [field](const RunConfig& c) { return std::string(c.trainer.*field ? "true" : "false"); },
                   [field, name](RunConfig& c, const std::string& v) { c.trainer.*field = parse_bool(name, v); }});
    };

    k.push_back({"algo", "objective: pacs | ppo | grpo",
                 [](const RunConfig& c) { return std::string(to_string(c.trainer.algo)); },
                 [](RunConfig& c, const std::string& v) {
                   c.trainer.algo = detail::keyed("algo", [&] { return parse_algorithm(trim(v)); });
                 }});
    k.push_back({"task", "task id: modsum | paren | copy", [](const RunConfig& c) { return c.trainer.task.id; },
                 [](RunConfig& c, const std::string& v) { c.trainer.task.id = trim(v); }});
    k.push_back({"task.modulus", "modsum modulus M", [](const RunConfig& c) { return std::to_string(c.trainer.task.modulus); },
                 [](RunConfig& c, const std::string& v) { c.trainer.task.modulus = parse_int<int>("task.modulus", v); }});
    k.push_back({"task.digits", "modsum digit alphabet size", [](const RunConfig& c) { return std::to_string(c.trainer.task.digits); },
                 [](RunConfig& c, const std::string& v) { c.trainer.task.digits = parse_int<int>("task.digits", v); }});
    k.push_back({"task.max_len", "maximum output length T (0 = task default)",
                 [](const RunConfig& c) { return std::to_string(c.trainer.task.max_len); },
                 [](RunConfig& c, const std::string& v) { c.trainer.task.max_len = parse_int<int>("task.max_len", v); }});
    k.push_back({"task.alphabet", "copy alphabet size", [](const RunConfig& c) { return std::to_string(c.trainer.task.alphabet); },
                 [](RunConfig& c, const std::string& v) { c.trainer.task.alphabet = parse_int<int>("task.alphabet", v); }});
    k.push_back({"task.length", "copy string length", [](const RunConfig& c) { return std::to_string(c.trainer.task.length); },
                 [](RunConfig& c, const std::string& v) { c.trainer.task.length = parse_int<int>("task.length", v); }});
    add_int("model.window", "policy context window W", &TrainerConfig::window);
    add_int("model.hidden", "policy hidden width H", &TrainerConfig::hidden);
    add_double("model.init_scale", "uniform init half-width", &TrainerConfig::init_scale);

    add_int("group_size", "outputs per query G", &TrainerConfig::group_size);
    add_int("groups_per_step", "queries per optimizer step", &TrainerConfig::groups_per_step);
    add_int("steps", "total optimizer steps", &TrainerConfig::steps);
    k.push_back({"seed", "base seed", [](const RunConfig& c) { return std::to_string(c.trainer.seed); },
                 [](RunConfig& c, const std::string& v) { c.trainer.seed = parse_int<std::uint64_t>("seed", v); }});
    add_double("temperature", "rollout sampling temperature", &TrainerConfig::temperature);
    add_double("top_p", "rollout nucleus mass", &TrainerConfig::top_p);
    add_int("inner_epochs", "optimizer steps per rollout batch (>1 reuses rollouts off-policy)",
            &TrainerConfig::inner_epochs);

    add_double("learning_rate", "Adam learning rate", &TrainerConfig::learning_rate);
    add_double("adam_beta1", "Adam first-moment decay", &TrainerConfig::adam_beta1);
    add_double("adam_beta2", "Adam second-moment decay", &TrainerConfig::adam_beta2);
    add_double("adam_eps", "Adam epsilon", &TrainerConfig::adam_eps);

    add_double("beta", "reward proxy scale", &TrainerConfig::beta);
    k.push_back({"estimator", "score function: rloo | grpo | dr-grpo",
                 [](const RunConfig& c) { return std::string(to_string(c.trainer.estimator)); },
                 [](RunConfig& c, const std::string& v) {
                   c.trainer.estimator = detail::keyed("estimator", [&] { return parse_estimator(trim(v)); });
                 }});
    k.push_back({"gradient_mode", "direct | full", [](const RunConfig& c) { return std::string(to_string(c.trainer.gradient_mode)); },
                 [](RunConfig& c, const std::string& v) {
                   c.trainer.gradient_mode = detail::keyed("gradient_mode", [&] { return parse_gradient_mode(trim(v)); });
                 }});
    k.push_back({"surrogate", "full-mode surrogate: group | per-sample",
                 [](const RunConfig& c) { return std::string(to_string(c.trainer.surrogate)); },
                 [](RunConfig& c, const std::string& v) {
                   c.trainer.surrogate = detail::keyed("surrogate", [&] { return parse_surrogate(trim(v)); });
                 }});
    add_bool("weighting", "class-imbalance weights", &TrainerConfig::weighting);
    k.push_back({"weight_scope", "batch | group", [](const RunConfig& c) { return std::string(to_string(c.trainer.weight_scope)); },
                 [](RunConfig& c, const std::string& v) {
                   c.trainer.weight_scope = detail::keyed("weight_scope", [&] { return parse_weight_scope(trim(v)); });
                 }});
    add_bool("psi_clamp", "clamp psi to [-psi_max, psi_max]", &TrainerConfig::psi_clamp);
    add_double("psi_max", "psi clamp bound", &TrainerConfig::psi_max);
    k.push_back({"std_kind", "population | sample", [](const RunConfig& c) { return std::string(to_string(c.trainer.std_kind)); },
                 [](RunConfig& c, const std::string& v) {
                   c.trainer.std_kind = detail::keyed("std_kind", [&] { return parse_std_kind(trim(v)); });
                 }});
    add_double("std_eps", "epsilon added to the group std", &TrainerConfig::std_eps);
    add_int("reset_period", "reference reset period in steps (0 disables)", &TrainerConfig::reset_period);

    add_double("clip_eps", "PPO/GRPO clip range", &TrainerConfig::clip_eps);
    add_double("kl_beta", "GRPO k3 KL coefficient", &TrainerConfig::kl_beta);
    add_double("gae_gamma", "GAE discount", &TrainerConfig::gae_gamma);
    add_double("gae_lambda", "GAE lambda", &TrainerConfig::gae_lambda);
    add_double("value_lr_scale", "value model learning rate / actor learning rate", &TrainerConfig::value_lr_scale);
    add_int("value_hidden", "value model hidden width", &TrainerConfig::value_hidden);

    add_int("checkpoint_every", "checkpoint cadence in steps (0 = steps/10)", &TrainerConfig::checkpoint_every);
    add_int("max_failures", "consecutive failed steps tolerated", &TrainerConfig::max_failures);

    k.push_back({"eval.problems", "evaluation queries (0 = whole domain)",
                 [](const RunConfig& c) { return std::to_string(c.trainer.eval.problems); },
                 [](RunConfig& c, const std::string& v) { c.trainer.eval.problems = parse_int<int>("eval.problems", v); }});
    k.push_back({"eval.n", "samples per evaluation query", [](const RunConfig& c) { return std::to_string(c.trainer.eval.n); },
                 [](RunConfig& c, const std::string& v) { c.trainer.eval.n = parse_int<int>("eval.n", v); }});
    k.push_back({"eval.k", "pass@k grid, comma separated",
                 [](const RunConfig& c) { return detail::join(c.trainer.eval.k_grid, [](int x) { return std::to_string(x); }); },
                 [](RunConfig& c, const std::string& v) {
                   c.trainer.eval.k_grid =
                       detail::parse_list<int>("eval.k", v, [](const std::string& s) { return parse_int<int>("eval.k", s); });
                 }});
    k.push_back({"eval.temperature", "evaluation temperature",
                 [](const RunConfig& c) { return format_double(c.trainer.eval.temperature); },
                 [](RunConfig& c, const std::string& v) { c.trainer.eval.temperature = parse_double("eval.temperature", v); }});
    k.push_back({"eval.top_p", "evaluation nucleus mass (0.96 or 0.95)",
                 [](const RunConfig& c) { return format_double(c.trainer.eval.top_p); },
                 [](RunConfig& c, const std::string& v) { c.trainer.eval.top_p = parse_double("eval.top_p", v); }});
    k.push_back({"eval.seed", "evaluation seed", [](const RunConfig& c) { return std::to_string(c.trainer.eval.seed); },
                 [](RunConfig& c, const std::string& v) { c.trainer.eval.seed = parse_int<std::uint64_t>("eval.seed", v); }});
    k.push_back({"eval.every", "evaluate every N steps (0 = final only)",
                 [](const RunConfig& c) { return std::to_string(c.trainer.eval.every); },
                 [](RunConfig& c, const std::string& v) { c.trainer.eval.every = parse_int<int>("eval.every", v); }});

    k.push_back({"output_dir", "run directory", [](const RunConfig& c) { return c.output_dir; },
                 [](RunConfig& c, const std::string& v) { c.output_dir = trim(v); }});
    k.push_back({"sweep.beta", "beta axis, comma separated",
                 [](const RunConfig& c) { return detail::join(c.sweep.beta, format_double); },
                 [](RunConfig& c, const std::string& v) {
                   c.sweep.beta =
                       detail::parse_list<double>("sweep.beta", v, [](const std::string& s) { return parse_double("sweep.beta", s); });
                 }});
    k.push_back({"sweep.estimator", "estimator axis",
                 [](const RunConfig& c) {
                   return detail::join(c.sweep.estimator, [](Estimator e) { return std::string(to_string(e)); });
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.sweep.estimator = detail::parse_list<Estimator>("sweep.estimator", v, [](const std::string& s) {
                     return detail::keyed("sweep.estimator", [&] { return parse_estimator(s); });
                   });
                 }});
    k.push_back({"sweep.weighting", "weighting axis",
                 [](const RunConfig& c) {
                   return detail::join(c.sweep.weighting, [](bool b) { return std::string(b ? "true" : "false"); });
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.sweep.weighting = detail::parse_list<bool>(
                       "sweep.weighting", v, [](const std::string& s) { return parse_bool("sweep.weighting", s); });
                 }});
    k.push_back({"sweep.gradient_mode", "gradient mode axis",
                 [](const RunConfig& c) {
                   return detail::join(c.sweep.gradient_mode, [](GradientMode m) { return std::string(to_string(m)); });
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.sweep.gradient_mode = detail::parse_list<GradientMode>("sweep.gradient_mode", v, [](const std::string& s) {
                     return detail::keyed("sweep.gradient_mode", [&] { return parse_gradient_mode(s); });
                   });
                 }});
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const ConfigKey& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

enum class ConfigSource { default_value, file, cli };

inline std::string_view to_string(ConfigSource s) {
  switch (s) {
    case ConfigSource::default_value: return "default";
    case ConfigSource::file: return "file";
    case ConfigSource::cli: return "cli";
  }
  return "unknown";
}

/// A RunConfig together with where each explicitly set key came from.
struct ResolvedConfig {
  RunConfig config;
  std::map<std::string, ConfigSource> sources;

  ConfigSource source(const std::string& key) const {
    const auto it = sources.find(key);
    return it == sources.end() ? ConfigSource::default_value : it->second;
  }

  void set(const std::string& key, const std::string& value, ConfigSource src) {
    const ConfigKey* k = find_config_key(key);
    if (k == nullptr) throw ConfigError("unknown config key '" + key + "'");
    k->set(config, value);
    sources[key] = src;
  }
};

/// Parses `key = value` lines; `#` starts a comment, blank lines are ignored.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text,
                                                                          std::string_view origin = "<config>") {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(stripped).substr(0, eq));
    std::string value = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty()) throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": missing key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline void apply_config_text(ResolvedConfig& rc, std::string_view text, ConfigSource src,
                              std::string_view origin = "<config>") {
  for (const auto& [key, value] : parse_config_text(text, origin)) rc.set(key, value, src);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void load_config_file(ResolvedConfig& rc, const std::string& path) {
  apply_config_text(rc, read_text_file(path), ConfigSource::file, path);
}

/// Resolved configuration text: every key, with its source as a trailing comment.
inline std::string format_config(const ResolvedConfig& rc) {
  std::string out = "# resolved configuration (precedence: cli > file > default)\n";
  for (const ConfigKey& k : config_keys()) {
    const std::string value = k.get(rc.config);
    if (value.empty() && k.name.rfind("sweep.", 0) == 0) {
      out += "# " + k.name + " =  (no axis)\n";
      continue;
    }
    out += k.name + " = " + value + "  # " + std::string(to_string(rc.source(k.name))) + "\n";
  }
  return out;
}

/// Checks every cross-field precondition; the message names the offending key.
inline void validate(const TrainerConfig& c) {
  const auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(c.group_size >= 1, "group_size: must be at least 1");
  if (c.algo == Algorithm::pacs && c.estimator == Estimator::rloo) {
    require(c.group_size >= 2, "group_size: leave-one-out undefined for singleton groups (estimator rloo needs G >= 2)");
  }
  if (c.algo == Algorithm::grpo) require(c.group_size >= 2, "group_size: grpo needs G >= 2");
  require(c.groups_per_step >= 1, "groups_per_step: must be at least 1");
  require(c.steps >= 0, "steps: must be non-negative");
  require(c.learning_rate >= 0.0, "learning_rate: must be non-negative");
  require(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0, "adam_beta1: must lie in [0, 1)");
  require(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0, "adam_beta2: must lie in [0, 1)");
  require(c.adam_eps > 0.0, "adam_eps: must be positive");
  require(c.beta > 0.0, "beta: must be positive");
  require(c.temperature >= 0.0, "temperature: must be non-negative");
  require(c.top_p > 0.0 && c.top_p <= 1.0, "top_p: must lie in (0, 1]");
  require(c.inner_epochs >= 1, "inner_epochs: must be at least 1");
  require(c.psi_max > 0.0, "psi_max: must be positive");
  require(c.std_eps >= 0.0, "std_eps: must be non-negative");
  require(c.reset_period >= 0, "reset_period: must be >= 1, or 0 to disable");
  require(c.clip_eps > 0.0, "clip_eps: must be positive");
  require(c.kl_beta >= 0.0, "kl_beta: must be non-negative");
  require(c.gae_gamma >= 0.0 && c.gae_gamma <= 1.0, "gae_gamma: must lie in [0, 1]");
  require(c.gae_lambda >= 0.0 && c.gae_lambda <= 1.0, "gae_lambda: must lie in [0, 1]");
  require(c.value_lr_scale > 0.0, "value_lr_scale: must be positive");
  require(c.value_hidden >= 1, "value_hidden: must be at least 1");
  require(c.window >= 1, "model.window: must be at least 1");
  require(c.hidden >= 1, "model.hidden: must be at least 1");
  require(c.init_scale >= 0.0, "model.init_scale: must be non-negative");
  require(c.checkpoint_every >= 0, "checkpoint_every: must be non-negative");
  require(c.max_failures >= 1, "max_failures: must be at least 1");
  require(c.eval.problems >= 0, "eval.problems: must be non-negative");
  require(c.eval.n >= 1, "eval.n: must be at least 1");
  require(!c.eval.k_grid.empty(), "eval.k: grid is empty");
  for (int k : c.eval.k_grid) {
    require(k >= 1, "eval.k: entries must be >= 1");
    require(k <= c.eval.n, "eval.k: k = " + std::to_string(k) + " exceeds eval.n = " + std::to_string(c.eval.n));
  }
  require(c.eval.temperature >= 0.0, "eval.temperature: must be non-negative");
  require(c.eval.top_p > 0.0 && c.eval.top_p <= 1.0, "eval.top_p: must lie in (0, 1]");
  require(c.eval.every >= 0, "eval.every: must be non-negative");
  detail::keyed("task", [&] { return make_task(c.task); });
}

}  // namespace pacs
