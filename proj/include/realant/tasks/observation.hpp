#pragma once

#include <array>
#include <cmath>

#include "realant/physics/robot_state.hpp"

namespace realant::tasks {

using physics::EulerAngles;
using physics::JointVector;
using physics::Vec3;

/// The 29-dimensional observation, laid out as
///
///   [0, 3)   torso velocity (x, y, z)
///   [3]      torso height z
///   [4, 10)  sin/cos of roll, pitch, yaw, interleaved
///   [10, 13) roll, pitch, yaw rates
///   [13, 21) joint angles
///   [21, 29) joint velocities
struct Observation {
  static constexpr int kDim = 29;
  static constexpr int kVelocity = 0;
  static constexpr int kHeight = 3;
  static constexpr int kEulerSinCos = 4;
  static constexpr int kEulerRates = 10;
  static constexpr int kJointAngles = 13;
  static constexpr int kJointVelocities = 21;

  std::array<double, kDim> values{};

  double operator[](int i) const { return values[i]; }
  double& operator[](int i) { return values[i]; }
  bool operator==(const Observation&) const = default;
};

/// Channel values an observation is assembled from, either ground truth or
/// the output of the sensor pipeline.
struct ObservationInputs {
  Vec3 torso_velocity = Vec3::Zero();
  double torso_z = 0.0;
  EulerAngles euler;
  Vec3 euler_rates = Vec3::Zero();
  JointVector joint_angles = JointVector::Zero();
  JointVector joint_velocities = JointVector::Zero();
};

inline Observation assemble_observation(const ObservationInputs& in) {
  Observation o;
  for (int i = 0; i < 3; ++i) o[Observation::kVelocity + i] = in.torso_velocity[i];
  o[Observation::kHeight] = in.torso_z;
  const double angles[3] = {in.euler.roll, in.euler.pitch, in.euler.yaw};
  for (int i = 0; i < 3; ++i) {
    o[Observation::kEulerSinCos + 2 * i] = std::sin(angles[i]);
    o[Observation::kEulerSinCos + 2 * i + 1] = std::cos(angles[i]);
  }
  for (int i = 0; i < 3; ++i) o[Observation::kEulerRates + i] = in.euler_rates[i];
  for (int j = 0; j < physics::kNumJoints; ++j) {
    o[Observation::kJointAngles + j] = in.joint_angles[j];
    o[Observation::kJointVelocities + j] = in.joint_velocities[j];
  }
  return o;
}

/// Ground-truth channels of a simulator state (Z-Y-X Euler convention).
inline ObservationInputs ground_truth_inputs(const physics::RobotState& s) {
  ObservationInputs in;
  in.torso_velocity = s.torso_linear_velocity;
  in.torso_z = s.torso_position.z();
  in.euler = physics::euler_zyx(s.torso_orientation);
  in.euler_rates = physics::euler_rates(s.torso_orientation, s.torso_angular_velocity);
  in.joint_angles = s.joint_angles;
  in.joint_velocities = s.joint_velocities;
  return in;
}

inline Observation assemble_observation(const physics::RobotState& s) {
  return assemble_observation(ground_truth_inputs(s));
}

}  // namespace realant::tasks
