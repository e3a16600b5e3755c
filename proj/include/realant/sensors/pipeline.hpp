#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

#include "realant/physics/robot_state.hpp"
#include "realant/sensors/delay_line.hpp"
#include "realant/sensors/differentiator.hpp"
#include "realant/sensors/filters.hpp"
#include "realant/tasks/observation.hpp"

namespace realant::sensors {

using physics::JointVector;
using physics::Vec3;

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::remainder(a, two_pi);
  if (w <= -std::numbers::pi) w += two_pi;
  return w;
}

struct RealismConfig {
  int latency_steps = 2;
  double sigma_xyz = 0.01;
  double sigma_rpy = 0.01;
  double lowpass_alpha = 0.3;
  int diff_window = 7;
  int stack_k = 4;

  /// No latency, no noise, no smoothing. The differentiator stays on.
  static RealismConfig clean() {
    RealismConfig c;
    c.latency_steps = 0;
    c.sigma_xyz = 0.0;
    c.sigma_rpy = 0.0;
    c.lowpass_alpha = 1.0;
    return c;
  }

  void validate() const {
    if (latency_steps < 0) throw std::invalid_argument("latency_steps must be >= 0");
    if (sigma_xyz < 0.0 || sigma_rpy < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
    if (!(lowpass_alpha > 0.0 && lowpass_alpha <= 1.0)) throw std::invalid_argument("lowpass_alpha must be in (0, 1]");
    if (diff_window < 3 || diff_window % 2 == 0) throw std::invalid_argument("diff_window must be odd and >= 3");
    if (stack_k < 1) throw std::invalid_argument("stack_k must be >= 1");
  }
};

/// One motion-capture style pose frame.
struct PoseSample {
  double x = 0.0, y = 0.0, z = 0.0;
  double roll = 0.0, pitch = 0.0, yaw = 0.0;
  std::uint64_t timestamp_us = 0;

  static PoseSample from_state(const physics::RobotState& s, std::uint64_t timestamp_us = 0) {
    const auto e = physics::euler_zyx(s.torso_orientation);
    return {s.torso_position.x(), s.torso_position.y(), s.torso_position.z(), e.roll, e.pitch, e.yaw, timestamp_us};
  }
};

struct JointSample {
  JointVector angles = JointVector::Zero();
  JointVector velocities = JointVector::Zero();

  static JointSample from_state(const physics::RobotState& s) { return {s.joint_angles, s.joint_velocities}; }
};

/// Delayed, noisy pose stream, as produced by the camera tracker.
class PoseChannel {
 public:
  PoseChannel(const RealismConfig& cfg, std::uint64_t seed)
      : delay_(static_cast<std::size_t>(cfg.latency_steps)), noise_(cfg.sigma_xyz, cfg.sigma_rpy, seed) {}

  void reset(std::uint64_t seed) {
    delay_.clear();
    noise_.reseed(seed);
  }

  PoseSample process(const PoseSample& truth) {
    PoseSample p = delay_.push_pop(truth);
    if (!noise_.enabled()) return p;
    double v[6] = {p.x, p.y, p.z, p.roll, p.pitch, p.yaw};
    noise_.apply(v);
    p.x = v[0];
    p.y = v[1];
    p.z = v[2];
    p.roll = wrap_angle(v[3]);
    p.pitch = wrap_angle(v[4]);
    p.yaw = wrap_angle(v[5]);
    return p;
  }

 private:
  DelayLine<PoseSample> delay_;
  NoiseModel noise_;
};

/// Everything the estimator derives from one pose and joint frame.
struct Estimate {
  tasks::Observation observation;
  Vec3 velocity = Vec3::Zero();
  double x = 0.0, y = 0.0;
  double z_filtered = 0.0;
  std::array<double, 3> euler_unwrapped{};  // roll, pitch, yaw
  bool warm = false;
};

/// Turns pose and joint frames into observations: z lowpass, Euler
/// unwrapping, smooth differentiation of position and attitude.
class StateEstimator {
 public:
  StateEstimator(const RealismConfig& cfg, double step)
      : lowpass_(cfg.lowpass_alpha),
        diffs_{Differentiator(cfg.diff_window, step), Differentiator(cfg.diff_window, step),
               Differentiator(cfg.diff_window, step), Differentiator(cfg.diff_window, step),
               Differentiator(cfg.diff_window, step), Differentiator(cfg.diff_window, step)} {}

  void reset() {
    lowpass_.clear();
    for (auto& d : diffs_) d.clear();
    primed_ = false;
  }

  Estimate update(const PoseSample& pose, const JointSample& joints) {
    Estimate est;
    const double raw[3] = {pose.roll, pose.pitch, pose.yaw};
    for (int i = 0; i < 3; ++i) {
      unwrapped_[i] = primed_ ? unwrapped_[i] + wrap_angle(raw[i] - last_raw_[i]) : raw[i];
      last_raw_[i] = raw[i];
    }
    primed_ = true;

    est.x = pose.x;
    est.y = pose.y;
    est.z_filtered = lowpass_.push(pose.z);
    est.velocity = Vec3(diffs_[0].push(pose.x), diffs_[1].push(pose.y), diffs_[2].push(est.z_filtered));
    Vec3 rates;
    for (int i = 0; i < 3; ++i) rates[i] = diffs_[3 + i].push(unwrapped_[i]);
    est.euler_unwrapped = unwrapped_;
    est.warm = diffs_[0].warm();

    tasks::ObservationInputs in;
    in.torso_velocity = est.velocity;
    in.torso_z = est.z_filtered;
    in.euler = {pose.roll, pose.pitch, pose.yaw};
    in.euler_rates = rates;
    in.joint_angles = joints.angles;
    in.joint_velocities = joints.velocities;
    est.observation = tasks::assemble_observation(in);
    return est;
  }

 private:
  Lowpass lowpass_;
  std::array<Differentiator, 6> diffs_;
  std::array<double, 3> unwrapped_{};
  double last_raw_[3] = {0.0, 0.0, 0.0};
  bool primed_ = false;
};

/// In-process pipeline: pose latency and noise, then estimation. Joint
/// channels bypass the pose latency.
class Pipeline {
 public:
  Pipeline(const RealismConfig& cfg, double step, std::uint64_t seed = 0)
      : config_(cfg), channel_(cfg, seed), estimator_(cfg, step) {
    cfg.validate();
  }

  const RealismConfig& config() const { return config_; }

  void reset(std::uint64_t seed) {
    channel_.reset(seed);
    estimator_.reset();
  }

  Estimate process(const PoseSample& truth_pose, const JointSample& joints) {
    return estimator_.update(channel_.process(truth_pose), joints);
  }

  Estimate process(const physics::RobotState& truth) {
    return process(PoseSample::from_state(truth), JointSample::from_state(truth));
  }

 private:
  RealismConfig config_;
  PoseChannel channel_;
  StateEstimator estimator_;
};

}  // namespace realant::sensors
