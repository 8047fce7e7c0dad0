#pragma once

// JSON checkpoints. Doubles are written in shortest round-trip form, so a
// save/load cycle reproduces every parameter and optimizer moment bit for bit.
//
// {
//   "format": "pacs-checkpoint", "version": 1,
//   "step": 120, "resets": 1, "consecutive_failures": 0,
//   "task": "modsum",
//   "policy":    {"architecture": {...}, "theta": [...]},
//   "reference": {"architecture": {...}, "theta": [...]},
//   "optimizer": {"learning_rate": ..., "beta1": ..., "beta2": ..., "epsilon": ..., "step": 17, "m": [...], "v": [...]},
//   "value_model": {"query_slots": ..., "positions": ..., "hidden": ..., "theta": [...]},
//   "value_optimizer": {...},
//   "config": "<resolved key = value text>"
// }
//
// A file holding only {"policy": {...}} is accepted by load_policy().

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pacs/errors.hpp"
#include "pacs/optimizer.hpp"
#include "pacs/policy.hpp"
#include "pacs/value_model.hpp"

namespace pacs {

using Json = nlohmann::json;

struct TrainingState {
  PolicyParameters policy;
  PolicySnapshot reference;
  OptimizerState optimizer;
  ValueModel value;
  OptimizerState value_optimizer;
  int step = 0;  ///< optimizer steps completed
  int resets = 0;
  int consecutive_failures = 0;
};

inline constexpr int kCheckpointVersion = 1;

inline Json architecture_to_json(const Architecture& a) {
  return {{"vocab_size", a.vocab_size}, {"window", a.window},     {"hidden", a.hidden},
          {"max_len", a.max_len},       {"terminal", a.terminal}, {"query_slots", a.query_slots}};
}

inline Architecture architecture_from_json(const Json& j) {
  Architecture a;
  a.vocab_size = j.at("vocab_size").get<int>();
  a.window = j.at("window").get<int>();
  a.hidden = j.at("hidden").get<int>();
  a.max_len = j.at("max_len").get<int>();
  a.terminal = j.at("terminal").get<int>();
  a.query_slots = j.at("query_slots").get<int>();
  a.validate();
  return a;
}

inline Json policy_to_json(const PolicyParameters& p) {
  return {{"architecture", architecture_to_json(p.arch)}, {"theta", p.theta}};
}

inline PolicyParameters policy_from_json(const Json& j) {
  PolicyParameters p{architecture_from_json(j.at("architecture")), j.at("theta").get<std::vector<double>>()};
  p.validate();
  return p;
}

inline Json optimizer_to_json(const OptimizerState& s) {
  return {{"learning_rate", s.config.learning_rate},
          {"beta1", s.config.beta1},
          {"beta2", s.config.beta2},
          {"epsilon", s.config.epsilon},
          {"step", s.step},
          {"m", s.m},
          {"v", s.v}};
}

inline OptimizerState optimizer_from_json(const Json& j) {
  OptimizerState s;
  s.config.learning_rate = j.at("learning_rate").get<double>();
  s.config.beta1 = j.at("beta1").get<double>();
  s.config.beta2 = j.at("beta2").get<double>();
  s.config.epsilon = j.at("epsilon").get<double>();
  s.step = j.at("step").get<std::uint64_t>();
  s.m = j.at("m").get<std::vector<double>>();
  s.v = j.at("v").get<std::vector<double>>();
  if (s.m.size() != s.v.size()) throw InputError("optimizer moment sizes differ");
  return s;
}

inline Json value_model_to_json(const ValueModel& m) {
  return {{"query_slots", m.arch.query_slots}, {"positions", m.arch.positions}, {"hidden", m.arch.hidden}, {"theta", m.theta}};
}

inline ValueModel value_model_from_json(const Json& j) {
  ValueModel m;
  m.arch.query_slots = j.at("query_slots").get<int>();
  m.arch.positions = j.at("positions").get<int>();
  m.arch.hidden = j.at("hidden").get<int>();
  m.theta = j.at("theta").get<std::vector<double>>();
  if (m.theta.size() != value_parameter_count(m.arch)) throw InputError("value model parameter count mismatch");
  return m;
}

inline Json state_to_json(const TrainingState& s, const std::string& task_id, const std::string& config_text) {
  return {{"format", "pacs-checkpoint"},
          {"version", kCheckpointVersion},
          {"step", s.step},
          {"resets", s.resets},
          {"consecutive_failures", s.consecutive_failures},
          {"task", task_id},
          {"policy", policy_to_json(s.policy)},
          {"reference", policy_to_json(s.reference.parameters())},
          {"optimizer", optimizer_to_json(s.optimizer)},
          {"value_model", value_model_to_json(s.value)},
          {"value_optimizer", optimizer_to_json(s.value_optimizer)},
          {"config", config_text}};
}

inline TrainingState state_from_json(const Json& j) {
  if (j.value("format", std::string()) != "pacs-checkpoint") throw InputError("not a training checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion) throw InputError("unsupported checkpoint version");
  TrainingState s{policy_from_json(j.at("policy")),
                  PolicySnapshot(policy_from_json(j.at("reference")), SnapshotRole::reference),
                  optimizer_from_json(j.at("optimizer")),
                  value_model_from_json(j.at("value_model")),
                  optimizer_from_json(j.at("value_optimizer"))};
  s.step = j.at("step").get<int>();
  s.resets = j.at("resets").get<int>();
  s.consecutive_failures = j.at("consecutive_failures").get<int>();
  if (s.optimizer.size() != s.policy.theta.size()) throw InputError("optimizer size does not match policy");
  return s;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open checkpoint '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw FileError("malformed checkpoint '" + path + "': " + e.what());
  }
}

inline void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot write '" + tmp + "'");
    out << text;
    if (!out) throw FileError("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const std::string& path, const TrainingState& s, const std::string& task_id,
                            const std::string& config_text) {
  write_text_atomic(path, state_to_json(s, task_id, config_text).dump() + "\n");
}

inline TrainingState load_checkpoint(const std::string& path) {
  const Json j = read_json_file(path);
  try {
    return state_from_json(j);
  } catch (const Json::exception& e) {
    throw FileError("malformed checkpoint '" + path + "': " + e.what());
  }
}

/// Policy parameters from either a full checkpoint or a policy-only file.
inline PolicyParameters load_policy(const std::string& path) {
  const Json j = read_json_file(path);
  try {
    return policy_from_json(j.contains("policy") ? j.at("policy") : j);
  } catch (const Json::exception& e) {
    throw FileError("malformed checkpoint '" + path + "': " + e.what());
  }
}

inline void save_policy(const std::string& path, const PolicyParameters& p) {
  write_text_atomic(path, Json{{"policy", policy_to_json(p)}}.dump() + "\n");
}

}  // namespace pacs
