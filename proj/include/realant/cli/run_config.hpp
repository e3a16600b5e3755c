#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "realant/mesh/nodes.hpp"
#include "realant/physics/body_model.hpp"
#include "realant/rl/agent.hpp"
#include "realant/sensors/pipeline.hpp"
#include "realant/tasks/env.hpp"

namespace realant::cli {

using Json = nlohmann::ordered_json;

/// Bad flags or flag combinations; maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure after a valid configuration was accepted; maps to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { in_process, mesh, mesh_distributed };

inline std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::in_process: return "in-process";
    case Mode::mesh: return "mesh";
    case Mode::mesh_distributed: return "mesh-distributed";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  for (Mode m : {Mode::in_process, Mode::mesh, Mode::mesh_distributed})
    if (mode_name(m) == s) return m;
  throw UsageError("unknown mode '" + std::string(s) + "' (expected in-process, mesh or mesh-distributed)");
}

inline sensors::RealismConfig realism_preset(std::string_view name) {
  if (name == "default") return {};
  if (name == "clean") return sensors::RealismConfig::clean();
  throw UsageError("unknown realism preset '" + std::string(name) + "' (expected default or clean)");
}

/// Fully resolved configuration of one training run.
struct RunConfig {
  tasks::TaskId task = tasks::TaskId::sleep;
  rl::AlgoConfig algo = rl::AlgoConfig::defaults(rl::Algorithm::td3);
  int episodes = 60;
  int episode_length = tasks::kEpisodeLength;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;
  sensors::RealismConfig realism;

  std::string physics_source = "builtin";
  std::optional<double> friction;
  physics::BodyModel model;  // after the friction override

  Mode mode = Mode::in_process;
  mesh::ClockMode clock = mesh::ClockMode::lockstep;
  double accel = 1.0;
  int jitter_steps = 0;
  double staleness_s = 0.25;
  std::string rollout_server;  // mesh-distributed only

  std::filesystem::path out;

  rl::TrainConfig train_config() const {
    rl::TrainConfig t;
    t.env.task = tasks::task_spec(task);
    t.env.model = model;
    t.env.realism = realism;
    t.env.episode_length = episode_length;
    t.algo = algo;
    t.episodes = episodes;
    t.seed = seed;
    t.checkpoint_every = checkpoint_every;
    return t;
  }

  void validate() const {
    if (episodes < 1) throw UsageError("--episodes must be >= 1");
    if (episode_length < 1) throw UsageError("--episode-length must be >= 1");
    if (checkpoint_every < 0) throw UsageError("--checkpoint-every must be >= 0");
    if (out.empty()) throw UsageError("--out is required");
    if (!(accel > 0.0)) throw UsageError("--accel must be > 0");
    if (jitter_steps < 0) throw UsageError("--jitter must be >= 0");
    if (!(staleness_s > 0.0)) throw UsageError("--staleness must be > 0");
    if (mode == Mode::mesh_distributed && rollout_server.empty())
      throw UsageError("mode mesh-distributed needs --rollout-server or REALANT_ROLLOUT_SERVER");
    if (mode != Mode::mesh_distributed && !rollout_server.empty())
      throw UsageError("--rollout-server is only valid with --mode mesh-distributed");
    if (mode == Mode::in_process && (accel != 1.0 || clock != mesh::ClockMode::lockstep || jitter_steps != 0))
      throw UsageError("--accel, --clock and --jitter apply to mesh modes only");
    try {
      realism.validate();
      algo.validate();
      model.validate();
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
};

inline void apply_friction(RunConfig& cfg, std::optional<double> friction) {
  cfg.friction = friction;
  if (friction) {
    if (!(*friction >= 0.0) || !std::isfinite(*friction)) throw UsageError("--friction must be a finite value >= 0");
    cfg.model.contact.friction_coeff = *friction;
  }
}

inline Json realism_json(const sensors::RealismConfig& r) {
  return Json{{"latency_steps", r.latency_steps}, {"sigma_xyz", r.sigma_xyz},     {"sigma_rpy", r.sigma_rpy},
              {"lowpass_alpha", r.lowpass_alpha}, {"diff_window", r.diff_window}, {"stack_k", r.stack_k}};
}

inline sensors::RealismConfig realism_from_json(const Json& j) {
  sensors::RealismConfig r;
  r.latency_steps = j.at("latency_steps").get<int>();
  r.sigma_xyz = j.at("sigma_xyz").get<double>();
  r.sigma_rpy = j.at("sigma_rpy").get<double>();
  r.lowpass_alpha = j.at("lowpass_alpha").get<double>();
  r.diff_window = j.at("diff_window").get<int>();
  r.stack_k = j.at("stack_k").get<int>();
  return r;
}

inline Json algo_json(const rl::AlgoConfig& a) {
  return Json{{"algorithm", rl::algorithm_name(a.algorithm)},
              {"gamma", a.gamma},
              {"tau", a.tau},
              {"updates_per_episode", a.updates_per_episode},
              {"batch_size", a.batch_size},
              {"n_critics", a.n_critics},
              {"subset_size", a.subset_size},
              {"policy_delay", a.policy_delay},
              {"target_noise", a.target_noise},
              {"target_noise_clip", a.target_noise_clip},
              {"explore_noise", a.explore_noise},
              {"preact_penalty", a.preact_penalty},
              {"preact_margin", a.preact_margin},
              {"lr", a.lr},
              {"target_entropy", a.target_entropy},
              {"initial_alpha", a.initial_alpha},
              {"hidden", a.hidden},
              {"hidden_layers", a.hidden_layers},
              {"dense", a.dense},
              {"replay_capacity", a.replay_capacity},
              {"warmup_episodes", a.warmup_episodes}};
}

inline rl::AlgoConfig algo_from_json(const Json& j) {
  rl::AlgoConfig a = rl::AlgoConfig::defaults(rl::parse_algorithm(j.at("algorithm").get<std::string>()));
  a.gamma = j.at("gamma").get<double>();
  a.tau = j.at("tau").get<double>();
  a.updates_per_episode = j.at("updates_per_episode").get<int>();
  a.batch_size = j.at("batch_size").get<int>();
  a.n_critics = j.at("n_critics").get<int>();
  a.subset_size = j.at("subset_size").get<int>();
  a.policy_delay = j.at("policy_delay").get<int>();
  a.target_noise = j.at("target_noise").get<double>();
  a.target_noise_clip = j.at("target_noise_clip").get<double>();
  a.explore_noise = j.at("explore_noise").get<double>();
  a.preact_penalty = j.at("preact_penalty").get<double>();
  a.preact_margin = j.at("preact_margin").get<double>();
  a.lr = j.at("lr").get<double>();
  a.target_entropy = j.at("target_entropy").get<double>();
  a.initial_alpha = j.at("initial_alpha").get<double>();
  a.hidden = j.at("hidden").get<int>();
  a.hidden_layers = j.at("hidden_layers").get<int>();
  a.dense = j.at("dense").get<bool>();
  a.replay_capacity = j.at("replay_capacity").get<std::size_t>();
  a.warmup_episodes = j.at("warmup_episodes").get<int>();
  return a;
}

inline constexpr int kManifestVersion = 1;

/// The manifest embeds the resolved physics model, so a run can be repeated
/// without the original config file.
inline Json manifest_json(const RunConfig& c) {
  Json physics{{"source", c.physics_source},
               {"friction_override", c.friction ? Json(*c.friction) : Json(nullptr)},
               {"model", physics::model_summary(c.model)}};
  Json mesh{{"clock", mesh::clock_mode_name(c.clock)},
            {"accel", c.accel},
            {"jitter_steps", c.jitter_steps},
            {"staleness_s", c.staleness_s},
            {"rollout_server", c.rollout_server}};
  return Json{{"format", "realant-run"},
              {"version", kManifestVersion},
              {"command", "train"},
              {"task", tasks::task_name(c.task)},
              {"episodes", c.episodes},
              {"episode_length", c.episode_length},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every},
              {"mode", mode_name(c.mode)},
              {"algo", algo_json(c.algo)},
              {"realism", realism_json(c.realism)},
              {"physics", physics},
              {"mesh", mesh}};
}

/// Inverse of manifest_json. The output directory is not part of the
/// manifest.
inline RunConfig run_config_from_manifest(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != "realant-run") throw UsageError("not a run manifest");
    if (j.at("version").get<int>() != kManifestVersion)
      throw UsageError("unsupported manifest version " + j.at("version").dump());
    RunConfig c;
    c.task = tasks::parse_task(j.at("task").get<std::string>());
    c.episodes = j.at("episodes").get<int>();
    c.episode_length = j.at("episode_length").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.algo = algo_from_json(j.at("algo"));
    c.realism = realism_from_json(j.at("realism"));
    const Json& p = j.at("physics");
    c.physics_source = p.at("source").get<std::string>();
    if (!p.at("friction_override").is_null()) c.friction = p.at("friction_override").get<double>();
    c.model = physics::load_model_string(p.at("model").get<std::string>());
    const Json& m = j.at("mesh");
    c.clock = mesh::parse_clock_mode(m.at("clock").get<std::string>());
    c.accel = m.at("accel").get<double>();
    c.jitter_steps = m.at("jitter_steps").get<int>();
    c.staleness_s = m.at("staleness_s").get<double>();
    c.rollout_server = m.at("rollout_server").get<std::string>();
    return c;
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace realant::cli
