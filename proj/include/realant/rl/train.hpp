#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "realant/rl/agent.hpp"
#include "realant/rl/checkpoint.hpp"
#include "realant/rl/replay.hpp"
#include "realant/sensors/filters.hpp"
#include "realant/tasks/env.hpp"
#include "realant/util/bytes.hpp"

namespace realant::rl {

struct EpisodeRequest {
  tasks::TaskId task = tasks::TaskId::sleep;
  int length = tasks::kEpisodeLength;
  ActMode mode = ActMode::explore;
  std::uint64_t seed = 0;
  double explore_noise = 0.1;
};

struct EpisodeData {
  int state_dim = 0;
  std::vector<Transition> transitions;

  bool diverged() const { return !transitions.empty() && transitions.back().diverged; }
  double episode_return() const {
    double r = 0.0;
    for (const auto& t : transitions) r += t.reward;
    return r;
  }
};

/// Seeds for one episode, derived from the request seed.
inline std::uint64_t env_seed_of(std::uint64_t episode_seed) { return util::splitmix64(episode_seed ^ 0x656E76ULL); }
inline std::uint64_t action_seed_of(std::uint64_t episode_seed) { return util::splitmix64(episode_seed ^ 0x616374ULL); }

/// Per-episode seed of a training run.
inline std::uint64_t episode_seed(std::uint64_t run_seed, int episode) {
  return util::splitmix64(util::splitmix64(run_seed) + static_cast<std::uint64_t>(episode) + 1);
}

/// Frame-stacks observations and pairs them into transitions.
class EpisodeRecorder {
 public:
  explicit EpisodeRecorder(int stack_k) : stack_(stack_k) { data_.state_dim = stack_.dim(); }

  const sensors::StackedState& begin(const tasks::Observation& first) {
    stack_.clear();
    data_.transitions.clear();
    state_ = stack_.push(first);
    return state_;
  }

  const sensors::StackedState& record(const tasks::Action& action, const tasks::Observation& obs, double reward,
                                      bool done, bool diverged) {
    Transition t;
    t.state = state_;
    t.action = action;
    t.reward = reward;
    state_ = stack_.push(obs);
    t.next_state = state_;
    t.done = done;
    t.diverged = diverged;
    data_.transitions.push_back(std::move(t));
    return state_;
  }

  const sensors::StackedState& state() const { return state_; }
  EpisodeData take() { return std::move(data_); }

 private:
  sensors::FrameStack stack_;
  sensors::StackedState state_;
  EpisodeData data_;
};

/// Runs one episode of `policy` in an in-process environment.
inline EpisodeData run_episode(tasks::Environment& env, const Policy& policy, const EpisodeRequest& req) {
  EpisodeRecorder rec(env.config().realism.stack_k);
  std::mt19937_64 rng(action_seed_of(req.seed));
  const sensors::StackedState* state = &rec.begin(env.reset(env_seed_of(req.seed)));
  while (true) {
    const tasks::Action a = policy.act(*state, req.mode, req.explore_noise, rng);
    const auto r = env.step(a);
    state = &rec.record(a, r.observation, r.reward, r.done, r.info.diverged);
    if (r.done) break;
  }
  return rec.take();
}

/// Produces one episode for the learner: in-process or over the wire.
using EpisodeSource = std::function<EpisodeData(const Policy&, const EpisodeRequest&)>;

inline EpisodeSource in_process_source(tasks::EnvConfig cfg) {
  auto env = std::make_shared<tasks::Environment>(cfg);
  return [env, cfg](const Policy& policy, const EpisodeRequest& req) mutable {
    if (req.length != env->config().episode_length || req.task != env->config().task.id) {
      tasks::EnvConfig c = cfg;
      c.episode_length = req.length;
      c.task = tasks::task_spec(req.task);
      env = std::make_shared<tasks::Environment>(c);
    }
    return run_episode(*env, policy, req);
  };
}

struct TrainConfig {
  tasks::EnvConfig env;
  AlgoConfig algo = AlgoConfig::defaults(Algorithm::td3);
  int episodes = 60;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;              // 0: final checkpoint only
  std::filesystem::path checkpoint_dir;  // empty: no checkpoint files

  int state_dim() const { return env.realism.stack_k * tasks::Observation::kDim; }
};

struct EpisodeLog {
  int episode = 0;
  int steps = 0;
  double episode_return = 0.0;
  std::int64_t updates = 0;
  double wallclock_s = 0.0;
  ActMode mode = ActMode::random;
  bool diverged = false;
};

struct TrainResult {
  std::vector<EpisodeLog> curve;
  Checkpoint checkpoint;
  std::int64_t total_updates = 0;
};

/// Alternates one episode of data collection with a block of gradient
/// updates. The first `warmup_episodes` use uniform random actions; updates
/// start once the last warmup episode is in the buffer.
inline TrainResult train(const TrainConfig& cfg, const EpisodeSource& source,
                         const std::function<void(const EpisodeLog&)>& on_episode = {}) {
  cfg.algo.validate();
  if (cfg.episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  const int state_dim = cfg.state_dim();
  Agent agent(cfg.algo, state_dim, util::splitmix64(cfg.seed ^ 0x6167656EULL));
  ReplayBuffer<float> buffer(state_dim, tasks::kActionDim, cfg.algo.replay_capacity);
  TrainResult result;

  for (int ep = 0; ep < cfg.episodes; ++ep) {
    EpisodeRequest req;
    req.task = cfg.env.task.id;
    req.length = cfg.env.episode_length;
    req.mode = ep < cfg.algo.warmup_episodes ? ActMode::random : ActMode::explore;
    req.seed = episode_seed(cfg.seed, ep);
    req.explore_noise = cfg.algo.explore_noise;
    const EpisodeData data = source(agent.policy(), req);
    if (data.state_dim != state_dim) throw ShapeError("episode state width does not match the learner");
    for (const auto& t : data.transitions) buffer.add(t);

    EpisodeLog log;
    log.episode = ep;
    log.steps = static_cast<int>(data.transitions.size());
    log.episode_return = data.episode_return();
    log.mode = req.mode;
    log.diverged = data.diverged();
    if (ep >= cfg.algo.warmup_episodes - 1) {
      for (int u = 0; u < cfg.algo.updates_per_episode; ++u)
        if (!agent.update(buffer).skipped) ++log.updates;
    }
    log.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.total_updates += log.updates;
    result.curve.push_back(log);
    if (on_episode) on_episode(log);

    const bool last = ep + 1 == cfg.episodes;
    if (!cfg.checkpoint_dir.empty() && (last || (cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0))) {
      const auto bytes = encode_checkpoint(checkpoint_of(agent));
      write_file_atomic(cfg.checkpoint_dir / ("checkpoint_" + std::to_string(ep + 1) + ".rant"), bytes);
      if (last) write_file_atomic(cfg.checkpoint_dir / "final.rant", bytes);
    }
  }
  result.checkpoint = checkpoint_of(agent);
  return result;
}

inline void write_curve_header(std::ostream& os) { os << "episode,steps,return,updates,wallclock_s\n"; }

inline void write_curve_row(std::ostream& os, const EpisodeLog& log) {
  os << log.episode << ',' << log.steps << ',' << physics::detail::format_double(log.episode_return) << ','
     << log.updates << ',' << std::fixed << std::setprecision(3) << log.wallclock_s << '\n';
  os.unsetf(std::ios::floatfield);
}

/// Mean return of a slice of the curve [first, first + count).
inline double mean_return(const std::vector<EpisodeLog>& curve, std::size_t first, std::size_t count) {
  double s = 0.0;
  for (std::size_t i = first; i < first + count; ++i) s += curve.at(i).episode_return;
  return s / static_cast<double>(count);
}

}  // namespace realant::rl
