#include <gtest/gtest.h>

#include <filesystem>
#include <cmath>
#include <fstream>

#include "pacs/trainer.hpp"

using namespace pacs;
namespace fs = std::filesystem;

namespace {

ResolvedConfig small_config() {
  ResolvedConfig rc;
  apply_config_text(rc,
                    "model.hidden = 8\n"
                    "group_size = 4\n"
                    "groups_per_step = 2\n"
                    "steps = 6\n"
                    "eval.problems = 4\n"
                    "eval.n = 8\n"
                    "checkpoint_every = 3\n",
                    ConfigSource::file);
  return rc;
}

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pacs_trainer_test_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

}  // namespace

TEST(TrainStep, IdenticalSeedsGiveIdenticalRecords) {
  const TrainerConfig cfg = small_config().config.trainer;
  const auto task = make_task(cfg.task);
  TrainingState a = initial_state(cfg, *task);
  TrainingState b = initial_state(cfg, *task);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(train_step(cfg, *task, a).to_json().dump(), train_step(cfg, *task, b).to_json().dump());
  }
  EXPECT_EQ(a.policy, b.policy);
}

TEST(TrainStep, ZeroLearningRateIsNoOp) {
  TrainerConfig cfg = small_config().config.trainer;
  cfg.learning_rate = 0.0;
  const auto task = make_task(cfg.task);
  TrainingState s = initial_state(cfg, *task);
  const PolicyParameters before = s.policy;
  const EvalReport r0 = evaluate_policy(s.policy, *task, eval_options(cfg));
  for (int i = 0; i < 3; ++i) train_step(cfg, *task, s);
  EXPECT_EQ(s.policy, before);
  EXPECT_EQ(evaluate_policy(s.policy, *task, eval_options(cfg)).pass_at_k, r0.pass_at_k);
}

TEST(TrainStep, AllAlgorithmsProduceFiniteMetrics) {
  for (const char* algo : {"pacs", "ppo", "grpo"}) {
    ResolvedConfig rc = small_config();
    rc.set("algo", algo, ConfigSource::cli);
    const TrainerConfig& cfg = rc.config.trainer;
    const auto task = make_task(cfg.task);
    TrainingState s = initial_state(cfg, *task);
    const MetricsRecord m = train_step(cfg, *task, s);
    EXPECT_FALSE(m.failed) << algo << ": " << m.error;
    EXPECT_TRUE(std::isfinite(m.loss)) << algo;
    EXPECT_GT(m.grad_norm, 0.0) << algo;
    EXPECT_EQ(s.step, 1);
  }
}

TEST(Reset, DisabledKeepsReference) {
  TrainerConfig cfg = small_config().config.trainer;
  cfg.reset_period = 0;
  const auto task = make_task(cfg.task);
  TrainingState s = initial_state(cfg, *task);
  const PolicyParameters ref = s.reference.parameters();
  for (int step = 1; step <= 5; ++step) {
    train_step(cfg, *task, s);
    EXPECT_FALSE(maybe_reset_reference(cfg, step, s));
  }
  EXPECT_EQ(s.reference.parameters(), ref);
  EXPECT_EQ(s.resets, 0);
}

TEST(Reset, PeriodFiftyOverTwoHundredStepsGivesFour) {
  ResolvedConfig rc = small_config();
  rc.set("steps", "200", ConfigSource::cli);
  rc.set("reset_period", "50", ConfigSource::cli);
  rc.set("groups_per_step", "1", ConfigSource::cli);
  rc.set("group_size", "2", ConfigSource::cli);
  rc.set("checkpoint_every", "100", ConfigSource::cli);
  const fs::path dir = fresh("resets");
  const RunResult r = run_training({rc, dir.string(), "", nullptr});
  int logged = 0;
  std::vector<int> at;
  for (const auto& j : read_jsonl(dir / "metrics.jsonl")) {
    if (j.at("reference_reset").get<bool>()) {
      ++logged;
      at.push_back(j.at("step").get<int>());
    }
  }
  EXPECT_EQ(logged, 4);
  EXPECT_EQ(at, (std::vector<int>{50, 100, 150, 200}));
  EXPECT_EQ(r.resets, 4);
  fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const TrainerConfig cfg = small_config().config.trainer;
  const auto task = make_task(cfg.task);
  TrainingState s = initial_state(cfg, *task);
  for (int i = 0; i < 2; ++i) train_step(cfg, *task, s);
  const fs::path dir = fresh("roundtrip");
  fs::create_directories(dir);
  const std::string path = (dir / "state.json").string();
  save_checkpoint(path, s, "modsum", "steps = 6\n");
  const TrainingState t = load_checkpoint(path);
  EXPECT_EQ(t.policy, s.policy);
  EXPECT_EQ(t.reference.parameters(), s.reference.parameters());
  EXPECT_TRUE(t.optimizer == s.optimizer);
  EXPECT_EQ(t.value.theta, s.value.theta);
  EXPECT_TRUE(t.value_optimizer == s.value_optimizer);
  EXPECT_EQ(t.step, 2);
  EXPECT_EQ(load_policy(path), s.policy);
  save_policy((dir / "policy.json").string(), s.policy);
  EXPECT_EQ(load_policy((dir / "policy.json").string()), s.policy);
  EXPECT_THROW(load_checkpoint((dir / "missing.json").string()), FileError);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_checkpoint((dir / "bad.json").string()), FileError);
  fs::remove_all(dir);
}

TEST(RunTraining, ZeroStepsWritesOnlyInitialCheckpoint) {
  ResolvedConfig rc = small_config();
  rc.set("steps", "0", ConfigSource::cli);
  const fs::path dir = fresh("zero");
  const RunResult r = run_training({rc, dir.string(), "", nullptr});
  EXPECT_TRUE(r.metrics.empty());
  EXPECT_TRUE(read_jsonl(dir / "metrics.jsonl").empty());
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "step_000000.json"));
  EXPECT_FALSE(fs::exists(dir / "final.json"));
  EXPECT_TRUE(fs::exists(dir / "config.txt"));
  fs::remove_all(dir);
}

TEST(RunTraining, ResumeContinuesIdentically) {
  const ResolvedConfig rc = small_config();
  const fs::path full = fresh("full");
  const fs::path resumed = fresh("resumed");
  run_training({rc, full.string(), "", nullptr});
  run_training({rc, resumed.string(), (full / "checkpoints" / "step_000003.json").string(), nullptr});
  const auto a = read_jsonl(full / "metrics.jsonl");
  const auto b = read_jsonl(resumed / "metrics.jsonl");
  ASSERT_EQ(a.size(), 6u);
  ASSERT_EQ(b.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i + 3].dump(), b[i].dump());
  EXPECT_TRUE(load_checkpoint((full / "final.json").string()).policy ==
              load_checkpoint((resumed / "final.json").string()).policy);

  // Resuming into the same directory truncates later records first.
  run_training({rc, full.string(), (full / "checkpoints" / "step_000003.json").string(), nullptr});
  const auto c = read_jsonl(full / "metrics.jsonl");
  ASSERT_EQ(c.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(c[i].at("step").get<int>(), static_cast<int>(i) + 1);
  fs::remove_all(full);
  fs::remove_all(resumed);
}

TEST(RunTraining, NumericBlowUpWritesFailureMarker) {
  ResolvedConfig rc = small_config();
  rc.set("learning_rate", "1e308", ConfigSource::cli);
  rc.set("steps", "30", ConfigSource::cli);
  rc.set("max_failures", "2", ConfigSource::cli);
  const fs::path dir = fresh("blowup");
  const RunResult r = run_training({rc, dir.string(), "", nullptr});
  EXPECT_TRUE(r.failed) << r.message;
  EXPECT_TRUE(fs::exists(dir / "FAILED"));
  const auto metrics = read_jsonl(dir / "metrics.jsonl");
  ASSERT_FALSE(metrics.empty());
  EXPECT_TRUE(metrics.back().at("failed").get<bool>());
  EXPECT_LT(metrics.size(), 30u);
  fs::remove_all(dir);
}

TEST(RunTraining, WritesDocumentedLayout) {
  ResolvedConfig rc = small_config();
  rc.set("eval.every", "3", ConfigSource::cli);
  const fs::path dir = fresh("layout");
  const RunResult r = run_training({rc, dir.string(), "", nullptr});
  ASSERT_FALSE(r.failed);
  for (const char* f : {"config.txt", "metrics.jsonl", "eval.jsonl", "eval.txt", "final.json",
                        "checkpoints/step_000000.json", "checkpoints/step_000003.json", "checkpoints/step_000006.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto evals = read_jsonl(dir / "eval.jsonl");
  ASSERT_EQ(evals.size(), 2u);
  EXPECT_EQ(evals[0].at("step").get<int>(), 3);
  EXPECT_EQ(evals[1].at("step").get<int>(), 6);
  const auto metrics = read_jsonl(dir / "metrics.jsonl");
  for (std::size_t i = 0; i < metrics.size(); ++i) EXPECT_EQ(metrics[i].at("step").get<int>(), static_cast<int>(i) + 1);
  // Near-uniform init: per-token entropy close to ln V, V = 10 digits plus the terminal.
  EXPECT_NEAR(metrics.front().at("entropy").get<double>(), std::log(11.0), 0.01 * std::log(11.0));
  for (const char* key : {"step", "loss", "entropy", "grad_norm", "mean_response_length", "accuracy", "w_correct",
                          "w_incorrect", "value_loss", "failed", "reference_reset"}) {
    EXPECT_TRUE(metrics.front().contains(key)) << key;
  }
  fs::remove_all(dir);
}
