#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "realant/physics/simulator.hpp"
#include "realant/sensors/pipeline.hpp"
#include "realant/tasks/observation.hpp"

namespace realant::tasks {

using Action = physics::JointVector;

inline constexpr double kControlPeriod = 0.05;
inline constexpr int kEpisodeLength = 200;
inline constexpr int kActionDim = physics::kNumJoints;

enum class TaskId : std::uint8_t { sleep = 0, stand = 1, turn = 2, walk = 3 };

inline std::string_view task_name(TaskId id) {
  switch (id) {
    case TaskId::sleep: return "sleep";
    case TaskId::stand: return "stand";
    case TaskId::turn: return "turn";
    case TaskId::walk: return "walk";
  }
  return "unknown";
}

inline TaskId parse_task(std::string_view name) {
  for (TaskId id : {TaskId::sleep, TaskId::stand, TaskId::turn, TaskId::walk})
    if (task_name(id) == name) return id;
  throw std::invalid_argument("unknown task '" + std::string(name) + "' (expected sleep, stand, turn or walk)");
}

struct TaskSpec {
  TaskId id = TaskId::sleep;
  double goal_height = 0.0;
  double goal_yaw = 3.14;
  physics::PoseTag initial_pose = physics::PoseTag::standing;
};

inline TaskSpec task_spec(TaskId id) {
  TaskSpec s;
  s.id = id;
  switch (id) {
    case TaskId::sleep:
      s.goal_height = 0.0;
      s.initial_pose = physics::PoseTag::standing;
      break;
    case TaskId::stand:
      s.goal_height = 0.12;
      s.initial_pose = physics::PoseTag::lying;
      break;
    case TaskId::turn:
    case TaskId::walk:
      s.initial_pose = physics::PoseTag::lying;
      break;
  }
  return s;
}

inline double reward_height(double z, double goal) { return -(z - goal) * (z - goal); }
inline double reward_turn(double yaw_unwrapped, double goal = 3.14) {
  return -(yaw_unwrapped - goal) * (yaw_unwrapped - goal);
}
inline double reward_walk(double xdot) { return xdot; }

/// Affine map of [-1, 1] onto each joint's limit interval; inputs are
/// clamped first.
inline physics::ServoCommand action_to_targets(const Action& action, const physics::BodyModel& model) {
  physics::ServoCommand cmd;
  for (int j = 0; j < physics::kNumJoints; ++j) {
    const double a = std::clamp(action[j], -1.0, 1.0);
    const auto lim = model.limits(j);
    cmd.targets[j] = lim.mid() + a * 0.5 * (lim.upper - lim.lower);
  }
  return cmd;
}

/// Reward of a task, evaluated on sensor estimates (or ground truth in the
/// diagnostic variant below).
inline double task_reward(const TaskSpec& spec, const sensors::Estimate& est) {
  switch (spec.id) {
    case TaskId::sleep:
    case TaskId::stand: return reward_height(est.z_filtered, spec.goal_height);
    case TaskId::turn: return reward_turn(est.euler_unwrapped[2], spec.goal_yaw);
    case TaskId::walk: return reward_walk(est.velocity.x());
  }
  return 0.0;
}

struct StepInfo {
  physics::RobotState truth;
  bool diverged = false;
  double true_reward = 0.0;  // from ground truth channels
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct EnvConfig {
  TaskSpec task = task_spec(TaskId::sleep);
  physics::BodyModel model;
  sensors::RealismConfig realism;
  int episode_length = kEpisodeLength;
};

/// One benchmark environment: simulator, sensor pipeline and reward.
class Environment {
 public:
  explicit Environment(EnvConfig cfg)
      : cfg_(std::move(cfg)), pipeline_(cfg_.realism, kControlPeriod) {
    cfg_.model.validate();
    if (cfg_.episode_length < 1) throw std::invalid_argument("episode_length must be >= 1");
  }

  const EnvConfig& config() const { return cfg_; }
  const physics::RobotState& state() const { return state_; }
  int steps() const { return steps_; }
  bool done() const { return done_; }

  Observation reset(std::uint64_t seed) {
    state_ = physics::reset(cfg_.model, cfg_.task.initial_pose);
    pipeline_.reset(seed);
    truth_yaw_ = 0.0;
    last_truth_yaw_ = physics::euler_zyx(state_.torso_orientation).yaw;
    truth_yaw_ = last_truth_yaw_;
    steps_ = 0;
    done_ = false;
    started_ = true;
    last_obs_ = pipeline_.process(state_).observation;
    return last_obs_;
  }

  StepResult step(const Action& action) {
    if (!started_ || done_) throw ProtocolError("step called without reset after terminal step");
    StepResult r;
    const auto cmd = action_to_targets(action, cfg_.model);
    try {
      state_ = physics::step(cfg_.model, state_, cmd, kControlPeriod);
    } catch (const physics::SimulationDiverged& e) {
      state_ = e.last_valid();
      ++steps_;
      done_ = true;
      r.observation = last_obs_;
      r.done = true;
      r.info.truth = state_;
      r.info.diverged = true;
      return r;
    }
    ++steps_;
    const auto est = pipeline_.process(state_);
    last_obs_ = est.observation;
    r.observation = est.observation;
    r.reward = task_reward(cfg_.task, est);
    r.info.truth = state_;
    r.info.true_reward = truth_reward();
    done_ = steps_ >= cfg_.episode_length;
    r.done = done_;
    return r;
  }

 private:
  double truth_reward() {
    const double yaw = physics::euler_zyx(state_.torso_orientation).yaw;
    truth_yaw_ += sensors::wrap_angle(yaw - last_truth_yaw_);
    last_truth_yaw_ = yaw;
    switch (cfg_.task.id) {
      case TaskId::sleep:
      case TaskId::stand: return reward_height(state_.torso_position.z(), cfg_.task.goal_height);
      case TaskId::turn: return reward_turn(truth_yaw_, cfg_.task.goal_yaw);
      case TaskId::walk: return reward_walk(state_.torso_linear_velocity.x());
    }
    return 0.0;
  }

  EnvConfig cfg_;
  sensors::Pipeline pipeline_;
  physics::RobotState state_;
  Observation last_obs_;
  double truth_yaw_ = 0.0;
  double last_truth_yaw_ = 0.0;
  int steps_ = 0;
  bool done_ = false;
  bool started_ = false;
};

/// One row of a per-episode trajectory dump.
struct TrajectoryRow {
  int step = 0;
  double time = 0.0;
  Action action = Action::Zero();
  Observation observation;
  double reward = 0.0;
  bool done = false;
};

inline void write_trajectory_header(std::ostream& os) {
  os << "step,time";
  for (int i = 0; i < kActionDim; ++i) os << ",action_" << i;
  for (int i = 0; i < Observation::kDim; ++i) os << ",obs_" << i;
  os << ",reward,done\n";
}

inline void write_trajectory_row(std::ostream& os, const TrajectoryRow& row) {
  os << row.step << ',' << physics::detail::format_double(row.time);
  for (int i = 0; i < kActionDim; ++i) os << ',' << physics::detail::format_double(row.action[i]);
  for (int i = 0; i < Observation::kDim; ++i) os << ',' << physics::detail::format_double(row.observation[i]);
  os << ',' << physics::detail::format_double(row.reward) << ',' << (row.done ? 1 : 0) << '\n';
}

}  // namespace realant::tasks
