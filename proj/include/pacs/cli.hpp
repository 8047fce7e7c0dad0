#pragma once

// Command implementations behind the `pacs` executable.
// Exit codes: 0 success, 1 validation failure, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pacs/checkpoint.hpp"
#include "pacs/config.hpp"
#include "pacs/eval.hpp"
#include "pacs/trainer.hpp"
#include "pacs/verification.hpp"

namespace pacs::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr const char* kOutputRootEnv = "PACS_OUTPUT_ROOT";

/// `group_size` -> `--group-size`, `task.modulus` -> `--task-modulus`.
inline std::string flag_for_key(const std::string& key) {
  std::string flag = "--";
  for (char ch : key) flag += (ch == '_' || ch == '.') ? '-' : ch;
  return flag;
}

inline std::string output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env != nullptr && *env != '\0' ? std::string(env) : std::string("runs");
}

/// First free directory name `<root>/<stem>`, `<root>/<stem>-2`, ...
inline std::string fresh_directory(const std::string& root, const std::string& stem) {
  namespace fs = std::filesystem;
  fs::path p = fs::path(root) / stem;
  for (int i = 2; fs::exists(p); ++i) p = fs::path(root) / (stem + "-" + std::to_string(i));
  return p.string();
}

/// Registers one CLI option per config key; values are applied after parsing.
class ConfigFlags {
 public:
  void attach(CLI::App& app) {
    for (const ConfigKey& k : config_keys()) {
      std::string names = flag_for_key(k.name);
      if (k.name == "output_dir") names += ",--out";
      options_[k.name] = app.add_option(names, values_[k.name], k.help);
    }
  }

  void apply(ResolvedConfig& rc) const {
    for (const ConfigKey& k : config_keys()) {
      const auto it = options_.find(k.name);
      if (it != options_.end() && it->second->count() > 0) rc.set(k.name, values_.at(k.name), ConfigSource::cli);
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
};

inline ResolvedConfig resolve(const std::string& config_path, const ConfigFlags& flags) {
  ResolvedConfig rc;
  if (!config_path.empty()) load_config_file(rc, config_path);
  flags.apply(rc);
  return rc;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config_path;
  std::string resume;
  bool quiet = false;
};

inline int cmd_train(const TrainArgs& args, const ConfigFlags& flags, std::ostream& out, std::ostream& err) {
  ResolvedConfig rc;
  if (!args.resume.empty() && args.config_path.empty()) {
    // Resume with the configuration stored in the checkpoint unless a file is given.
    const Json j = read_json_file(args.resume);
    if (j.contains("config")) apply_config_text(rc, j.at("config").get<std::string>(), ConfigSource::file, args.resume);
    flags.apply(rc);
  } else {
    rc = resolve(args.config_path, flags);
  }
  validate(rc.config.trainer);
  const TrainerConfig& cfg = rc.config.trainer;
  std::string dir = rc.config.output_dir;
  if (dir.empty()) {
    dir = fresh_directory(output_root(), std::string(to_string(cfg.algo)) + "-" + cfg.task.id + "-seed" +
                                             std::to_string(cfg.seed));
    rc.set("output_dir", dir, ConfigSource::default_value);
  }
  RunOptions options{rc, dir, args.resume, args.quiet ? nullptr : &out};
  const RunResult result = run_training(options);
  out << "run directory: " << dir << "\n";
  if (result.failed) {
    err << "training failed: " << result.message << "\n";
    return kExitRuntime;
  }
  if (result.final_eval) out << result.final_eval->to_text();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string out_path;
};

inline int cmd_eval(const EvalArgs& args, const ConfigFlags& flags, std::ostream& out) {
  if (args.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const PolicyParameters policy = load_policy(args.checkpoint);
  ResolvedConfig rc;
  const Json j = read_json_file(args.checkpoint);
  if (j.contains("config")) apply_config_text(rc, j.at("config").get<std::string>(), ConfigSource::file, args.checkpoint);
  flags.apply(rc);
  const TrainerConfig& cfg = rc.config.trainer;
  const EvalOptions opts = eval_options(cfg);
  if (opts.k_grid.empty()) throw ConfigError("eval.k: grid is empty");
  for (int k : opts.k_grid) {
    if (k < 1 || k > opts.n) {
      throw ConfigError("eval.k: k = " + std::to_string(k) + " needs 1 <= k <= eval.n = " + std::to_string(opts.n));
    }
  }
  if (!(opts.temperature >= 0.0)) throw ConfigError("eval.temperature: must be non-negative");
  if (!(opts.top_p > 0.0 && opts.top_p <= 1.0)) throw ConfigError("eval.top_p: must lie in (0, 1]");
  const auto task = make_task(cfg.task);
  if (policy.arch.vocab_size != task->vocab_size() || policy.arch.query_slots != task->query_slots() ||
      policy.arch.max_len != task->max_len()) {
    throw ConfigError("task: checkpoint policy does not match task '" + cfg.task.id + "'");
  }
  const EvalReport report = evaluate_policy(policy, *task, opts, args.checkpoint);
  out << report.to_text();
  const std::string path = args.out_path.empty() ? args.checkpoint + ".eval.json" : args.out_path;
  write_text_atomic(path, report.to_json().dump(2) + "\n");
  out << "report: " << path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepPoint {
  std::string label;
  std::vector<std::pair<std::string, std::string>> settings;  ///< axis key -> value
};

/// Cartesian product of the non-empty axes, beta varying slowest.
inline std::vector<SweepPoint> sweep_points(const SweepAxes& axes) {
  std::vector<std::pair<std::string, std::vector<std::string>>> dims;
  if (!axes.beta.empty()) {
    std::vector<std::string> v;
    for (double b : axes.beta) v.push_back(format_double(b));
    dims.emplace_back("beta", v);
  }
  if (!axes.estimator.empty()) {
    std::vector<std::string> v;
    for (Estimator e : axes.estimator) v.emplace_back(to_string(e));
    dims.emplace_back("estimator", v);
  }
  if (!axes.weighting.empty()) {
    std::vector<std::string> v;
    for (bool b : axes.weighting) v.emplace_back(b ? "true" : "false");
    dims.emplace_back("weighting", v);
  }
  if (!axes.gradient_mode.empty()) {
    std::vector<std::string> v;
    for (GradientMode m : axes.gradient_mode) v.emplace_back(to_string(m));
    dims.emplace_back("gradient_mode", v);
  }
  if (dims.empty()) {
    throw ConfigError("sweep: no axis given (set sweep.beta, sweep.estimator, sweep.weighting or sweep.gradient_mode)");
  }
  std::vector<SweepPoint> points{SweepPoint{}};
  for (const auto& [key, values] : dims) {
    std::vector<SweepPoint> next;
    for (const SweepPoint& p : points) {
      for (const std::string& v : values) {
        SweepPoint q = p;
        q.settings.emplace_back(key, v);
        q.label += (q.label.empty() ? "" : "_") + key + "=" + v;
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  return points;
}

inline const std::vector<double> kDefaultBetaAxis{0.1, 0.5, 1.0, 2.0, 10.0};

struct SweepArgs {
  std::string config_path;
  bool quiet = false;
};

struct SweepRow {
  SweepPoint point;
  std::string status;  ///< ok | failed | invalid
  std::string message;
  std::optional<EvalReport> report;
};

inline std::string sweep_tsv(const std::vector<SweepRow>& rows, const std::vector<int>& k_grid) {
  std::ostringstream s;
  s << "point";
  if (!rows.empty()) {
    for (const auto& kv : rows.front().point.settings) s << "\t" << kv.first;
  }
  s << "\tstatus";
  for (int k : k_grid) s << "\tpass@" << k;
  s << "\n";
  for (const SweepRow& r : rows) {
    s << r.point.label;
    for (const auto& kv : r.point.settings) s << "\t" << kv.second;
    s << "\t" << r.status;
    for (std::size_t i = 0; i < k_grid.size(); ++i) {
      s << "\t" << (r.report ? format_double(r.report->pass_at_k[i]) : std::string("nan"));
    }
    s << "\n";
  }
  return s.str();
}

/// Estimator ablation table: one row per grid point, one column per k.
inline std::string estimator_table(const std::vector<SweepRow>& rows, const std::vector<int>& k_grid) {
  std::ostringstream s;
  s << "| method |";
  for (int k : k_grid) s << " pass@" << k << " |";
  s << "\n|---|";
  for (std::size_t i = 0; i < k_grid.size(); ++i) s << "---|";
  s << "\n" << std::fixed << std::setprecision(4);
  for (const SweepRow& r : rows) {
    s << "| " << r.point.label << " |";
    for (std::size_t i = 0; i < k_grid.size(); ++i) {
      if (r.report) {
        s << " " << 100.0 * r.report->pass_at_k[i] << " |";
      } else {
        s << " " << r.status << " |";
      }
    }
    s << "\n";
  }
  return s.str();
}

inline int cmd_sweep(const SweepArgs& args, const ConfigFlags& flags, std::ostream& out, std::ostream& err) {
  ResolvedConfig base = resolve(args.config_path, flags);
  SweepAxes& axes = base.config.sweep;
  if (axes.beta.empty() && axes.estimator.empty() && axes.weighting.empty() && axes.gradient_mode.empty()) {
    axes.beta = kDefaultBetaAxis;
    base.sources["sweep.beta"] = ConfigSource::default_value;
  }
  validate(base.config.trainer);
  const std::vector<SweepPoint> points = sweep_points(axes);
  const TrainerConfig& cfg = base.config.trainer;
  const std::string root = base.config.output_dir.empty()
                               ? fresh_directory(output_root(), "sweep-" + std::string(to_string(cfg.algo)) + "-" +
                                                                    cfg.task.id + "-seed" + std::to_string(cfg.seed))
                               : base.config.output_dir;
  std::filesystem::create_directories(root);
  write_text_atomic((std::filesystem::path(root) / "sweep_config.txt").string(), format_config(base));

  std::vector<SweepRow> rows;
  for (const SweepPoint& p : points) {
    SweepRow row{p, "ok", {}, std::nullopt};
    ResolvedConfig rc = base;
    const std::string dir = (std::filesystem::path(root) / p.label).string();
    try {
      for (const auto& [key, value] : p.settings) rc.set(key, value, ConfigSource::cli);
      rc.set("output_dir", dir, ConfigSource::cli);
      validate(rc.config.trainer);
      const RunResult result = run_training(RunOptions{rc, dir, "", nullptr});
      if (result.failed) {
        row.status = "failed";
        row.message = result.message;
      }
      row.report = result.final_eval;
    } catch (const std::invalid_argument& e) {
      row.status = "invalid";
      row.message = e.what();
    } catch (const std::exception& e) {
      row.status = "failed";
      row.message = e.what();
    }
    if (!args.quiet) {
      out << p.label << ": " << row.status;
      if (row.report) out << "  pass@" << row.report->k_grid.front() << " " << row.report->pass_at_k.front();
      if (!row.message.empty()) out << "  (" << row.message << ")";
      out << "\n";
    }
    rows.push_back(std::move(row));
  }

  const std::vector<int>& k_grid = cfg.eval.k_grid;
  const std::filesystem::path rp(root);
  write_text_atomic((rp / "grid.tsv").string(), sweep_tsv(rows, k_grid));
  Json grid = Json::array();
  for (const SweepRow& r : rows) {
    Json point{{"label", r.point.label}, {"status", r.status}, {"directory", (rp / r.point.label).string()}};
    for (const auto& [key, value] : r.point.settings) point["settings"][key] = value;
    if (!r.message.empty()) point["message"] = r.message;
    if (r.report) point["eval"] = r.report->to_json();
    grid.push_back(point);
  }
  write_text_atomic((rp / "grid.json").string(), grid.dump(2) + "\n");
  if (!axes.estimator.empty()) write_text_atomic((rp / "estimator_table.md").string(), estimator_table(rows, k_grid));

  out << "sweep directory: " << root << "\n" << estimator_table(rows, k_grid);
  bool any_failed = false;
  for (const SweepRow& r : rows) any_failed = any_failed || r.status != "ok";
  if (any_failed) {
    err << "some sweep points did not complete; see grid.tsv\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyArgs {
  std::vector<std::string> suites;
  std::uint64_t seed = VerifyOptions{}.seed;
  bool inject_critic_sign_flip = false;
};

inline int cmd_verify(const VerifyArgs& args, std::ostream& out) {
  VerifyOptions opts;
  opts.seed = args.seed;
  opts.inject_critic_sign_flip = args.inject_critic_sign_flip;
  const std::vector<std::string> names = args.suites.empty() ? suite_names() : args.suites;
  bool all = true;
  for (const std::string& name : names) {
    const SuiteResult r = run_suite(name, opts);
    all = all && r.passed;
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(15) << r.name << r.detail << "  [" << std::fixed
        << std::setprecision(2) << r.seconds << "s]\n";
    out.unsetf(std::ios::fixed);
  }
  out << (all ? "all suites passed" : "verification FAILED") << "\n";
  return all ? kExitOk : kExitValidation;
}

// ---------------------------------------------------------------------------

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"PACS laboratory: train, evaluate, sweep and verify RLVR objectives on synthetic tasks"};
  app.require_subcommand(1);

  TrainArgs train_args;
  ConfigFlags train_flags;
  CLI::App* train = app.add_subcommand("train", "run training and write a run directory");
  train->add_option("-c,--config", train_args.config_path, "key = value configuration file");
  train->add_option("--resume", train_args.resume, "checkpoint to resume from");
  train->add_flag("-q,--quiet", train_args.quiet, "suppress progress lines");
  train_flags.attach(*train);

  EvalArgs eval_args;
  ConfigFlags eval_flags;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint with the pass@k protocol");
  eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint or policy file")->required();
  eval->add_option("--report", eval_args.out_path, "where to write the JSON report (default <checkpoint>.eval.json)");
  eval_flags.attach(*eval);

  SweepArgs sweep_args;
  ConfigFlags sweep_flags;
  CLI::App* sweep = app.add_subcommand("sweep", "run the cartesian product of the sweep axes");
  sweep->add_option("-c,--config", sweep_args.config_path, "key = value configuration file");
  sweep->add_flag("-q,--quiet", sweep_args.quiet, "suppress per-point lines");
  sweep_flags.attach(*sweep);

  VerifyArgs verify_args;
  CLI::App* verify = app.add_subcommand("verify", "run the oracle suites");
  verify->add_option("--suite", verify_args.suites, "suite(s) to run (default: all)");
  verify->add_option("--seed", verify_args.seed, "seed for the randomized suites");
  verify->add_flag("--inject-critic-sign-flip", verify_args.inject_critic_sign_flip)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*train) return cmd_train(train_args, train_flags, out, err);
    if (*eval) return cmd_eval(eval_args, eval_flags, out);
    if (*sweep) return cmd_sweep(sweep_args, sweep_flags, out, err);
    if (*verify) return cmd_verify(verify_args, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FileError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace pacs::cli
