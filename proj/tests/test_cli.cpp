#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pacs/cli.hpp"

using namespace pacs;
namespace fs = std::filesystem;

namespace {

struct Invocation {
  int code;
  std::string out;
  std::string err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "pacs");
  std::vector<char*> argv;
  for (std::string& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pacs_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

const std::vector<std::string> kTiny{"-q", "--steps", "2", "--group-size", "2", "--groups-per-step", "2",
                                     "--eval-problems", "2", "--eval-n", "8"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  return args;
}

}  // namespace

TEST(Cli, FlagNames) {
  EXPECT_EQ(cli::flag_for_key("group_size"), "--group-size");
  EXPECT_EQ(cli::flag_for_key("task.max_len"), "--task-max-len");
}

TEST(Cli, TrainWritesRunDirectory) {
  const fs::path dir = fresh("train");
  const Invocation r = invoke(with_tiny({"train", "--algo", "pacs", "--task", "modsum", "--seed", "7", "--out", dir.string()}));
  EXPECT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.txt", "metrics.jsonl", "final.json", "eval.txt", "checkpoints/step_000000.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  std::ifstream in(dir / "config.txt");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_NE(text.find("seed = 7  # cli"), std::string::npos);
  EXPECT_NE(text.find("beta = 1  # default"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, ConfigFileThenFlags) {
  const fs::path dir = fresh("conf");
  fs::create_directories(dir);
  std::ofstream(dir / "run.conf") << "steps = 1\nseed = 4\nbeta = 0.5\n";
  const Invocation r = invoke(with_tiny({"train", "--config", (dir / "run.conf").string(), "--seed", "5", "--out",
                                         (dir / "run").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(dir / "run" / "config.txt");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_NE(text.find("seed = 5  # cli"), std::string::npos);
  EXPECT_NE(text.find("beta = 0.5  # file"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, OutputRootFromEnvironment) {
  const fs::path root = fresh("root");
  ::setenv(cli::kOutputRootEnv, root.string().c_str(), 1);
  const Invocation r = invoke(with_tiny({"train", "--seed", "3"}));
  ::unsetenv(cli::kOutputRootEnv);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "pacs-modsum-seed3" / "final.json"));
  fs::remove_all(root);
}

TEST(Cli, ValidationFailuresExitOne) {
  const Invocation dapo = invoke({"train", "--algo", "dapo"});
  EXPECT_EQ(dapo.code, 1);
  EXPECT_NE(dapo.err.find("pacs, ppo, grpo"), std::string::npos);
  const Invocation g1 = invoke({"train", "--algo", "pacs", "--group-size", "1"});
  EXPECT_EQ(g1.code, 1);
  EXPECT_NE(g1.err.find("group_size"), std::string::npos);
  EXPECT_EQ(invoke({"train", "--no-such-flag", "3"}).code, 1);
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"train", "--config", "/nonexistent.conf"}).code, 1);
}

TEST(Cli, RuntimeFailureExitsTwo) {
  const fs::path dir = fresh("fail");
  const Invocation r = invoke({"train", "-q", "--learning-rate", "1e308", "--steps", "20", "--max-failures", "2",
                               "--group-size", "2", "--groups-per-step", "2", "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(fs::exists(dir / "FAILED"));
  fs::remove_all(dir);
}

TEST(Cli, EvalChecksInputsAndIsDeterministic) {
  const fs::path dir = fresh("eval");
  ASSERT_EQ(invoke(with_tiny({"train", "--out", dir.string()})).code, 0);
  const std::string ckpt = (dir / "final.json").string();
  EXPECT_EQ(invoke({"eval", "--checkpoint", (dir / "missing.json").string()}).code, 1);
  const Invocation small_n = invoke({"eval", "--checkpoint", ckpt, "--eval-n", "4", "--eval-k", "1,8"});
  EXPECT_EQ(small_n.code, 1);
  EXPECT_NE(small_n.err.find("eval.k"), std::string::npos);

  const Invocation a = invoke({"eval", "--checkpoint", ckpt, "--eval-n", "8", "--report", (dir / "a.json").string()});
  const Invocation b = invoke({"eval", "--checkpoint", ckpt, "--eval-n", "8", "--report", (dir / "b.json").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  std::ifstream fa(dir / "a.json"), fb(dir / "b.json");
  const std::string ja((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string jb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  EXPECT_EQ(ja, jb);
  EXPECT_NE(a.out.find("pass@k"), std::string::npos);
  EXPECT_EQ(invoke({"eval", "--checkpoint", ckpt, "--task", "paren"}).code, 1);
  fs::remove_all(dir);
}

TEST(Cli, SweepDefaultBetaAxis) {
  const fs::path dir = fresh("sweep");
  const Invocation r = invoke({"sweep", "-q", "--steps", "1", "--group-size", "2", "--groups-per-step", "1",
                               "--eval-problems", "1", "--eval-n", "8", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* p : {"beta=0.1", "beta=0.5", "beta=1", "beta=2", "beta=10"}) EXPECT_TRUE(fs::exists(dir / p / "final.json")) << p;
  const auto grid = nlohmann::json::parse(std::ifstream(dir / "grid.json"));
  EXPECT_EQ(grid.size(), 5u);
  EXPECT_TRUE(fs::exists(dir / "grid.tsv"));
  fs::remove_all(dir);
}

TEST(Cli, SweepRecordsInvalidPointsAndContinues) {
  const fs::path dir = fresh("sweep_partial");
  // G = 1 is fine for dr-grpo but violates the rloo precondition.
  const Invocation r = invoke({"sweep", "-q", "--steps", "1", "--group-size", "1", "--estimator", "dr-grpo",
                               "--groups-per-step", "1", "--eval-problems", "1", "--eval-n", "8",
                               "--sweep-estimator", "rloo,dr-grpo", "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  const auto grid = nlohmann::json::parse(std::ifstream(dir / "grid.json"));
  ASSERT_EQ(grid.size(), 2u);
  EXPECT_EQ(grid[0].at("status"), "invalid");
  EXPECT_EQ(grid[1].at("status"), "ok");
  fs::remove_all(dir);
}

TEST(Cli, SweepEmptyAxisIsUsageError) {
  EXPECT_EQ(invoke({"sweep", "--sweep-beta", ""}).code, 1);
  EXPECT_EQ(invoke({"sweep", "--sweep-estimator", ","}).code, 1);
}

TEST(Cli, VerifyUnknownSuite) { EXPECT_EQ(invoke({"verify", "--suite", "nope"}).code, 1); }
