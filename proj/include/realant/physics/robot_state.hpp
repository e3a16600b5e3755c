#pragma once

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "realant/physics/body_model.hpp"

namespace realant::physics {

/// Contact points: 4 foot tips followed by 8 torso corners.
inline constexpr int kNumFeet = 4;
inline constexpr int kNumCorners = 8;
inline constexpr int kNumContacts = kNumFeet + kNumCorners;

using Vec3 = Eigen::Vector3d;
using JointVector = Eigen::Matrix<double, kNumJoints, 1>;

/// Leg order is front-left, front-right, back-left, back-right. Joint `2k` is
/// the hip of leg k and joint `2k + 1` its knee.
enum class Leg : int { front_left = 0, front_right = 1, back_left = 2, back_right = 3 };

inline constexpr int hip_index(int leg) { return 2 * leg; }
inline constexpr int knee_index(int leg) { return 2 * leg + 1; }

/// Sign of a leg's body-frame x / y mounting coordinate.
inline constexpr int leg_sign_x(int leg) { return leg < 2 ? 1 : -1; }
inline constexpr int leg_sign_y(int leg) { return (leg % 2 == 0) ? 1 : -1; }

/// Torso corner `c` has signs (x: bit 2, y: bit 0, z: bit 1), so corners
/// 2i and 2i + 1 are mirror images across the x-z plane.
inline constexpr int corner_sign_x(int c) { return (c & 4) ? -1 : 1; }
inline constexpr int corner_sign_y(int c) { return (c & 1) ? -1 : 1; }
inline constexpr int corner_sign_z(int c) { return (c & 2) ? -1 : 1; }

/// Stick point of a tangential friction spring.
struct ContactAnchor {
  bool active = false;
  double x = 0.0;
  double y = 0.0;
};

/// Ground-truth state of the simulated robot.
///
/// Linear and angular torso velocities are expressed in the world frame.
/// Contact anchors are part of the state so that stepping is a pure function
/// of (model, state, command).
struct RobotState {
  Vec3 torso_position = Vec3::Zero();
  Eigen::Quaterniond torso_orientation = Eigen::Quaterniond::Identity();
  Vec3 torso_linear_velocity = Vec3::Zero();
  Vec3 torso_angular_velocity = Vec3::Zero();
  JointVector joint_angles = JointVector::Zero();
  JointVector joint_velocities = JointVector::Zero();
  double sim_time = 0.0;
  std::array<ContactAnchor, kNumContacts> anchors{};

  bool all_finite() const {
    return torso_position.allFinite() && torso_orientation.coeffs().allFinite() &&
           torso_linear_velocity.allFinite() && torso_angular_velocity.allFinite() && joint_angles.allFinite() &&
           joint_velocities.allFinite() && std::isfinite(sim_time);
  }
};

/// Roll, pitch, yaw of a Z-Y-X (yaw-pitch-roll) rotation sequence.
struct EulerAngles {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

inline EulerAngles euler_zyx(const Eigen::Quaterniond& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  EulerAngles e;
  e.roll = std::atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y));
  const double s = 2.0 * (w * y - z * x);
  e.pitch = std::asin(std::fmax(-1.0, std::fmin(1.0, s)));
  e.yaw = std::atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z));
  return e;
}

inline Eigen::Quaterniond quaternion_from_euler(const EulerAngles& e) {
  return Eigen::Quaterniond(Eigen::AngleAxisd(e.yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(e.pitch, Vec3::UnitY()) *
                            Eigen::AngleAxisd(e.roll, Vec3::UnitX()));
}

/// Euler-angle rates from a world-frame angular velocity.
inline Vec3 euler_rates(const Eigen::Quaterniond& q, const Vec3& omega_world) {
  const EulerAngles e = euler_zyx(q);
  const Vec3 w = q.conjugate() * omega_world;  // body frame
  const double sr = std::sin(e.roll), cr = std::cos(e.roll);
  const double cp = std::cos(e.pitch), tp = std::tan(e.pitch);
  const double a = w.y() * sr + w.z() * cr;
  return Vec3(w.x() + a * tp, w.y() * cr - w.z() * sr, a / cp);
}

namespace detail {
template <typename T>
bool same_bytes(const T& a, const T& b) {
  return std::memcmp(&a, &b, sizeof(T)) == 0;
}
}  // namespace detail

/// Bit-level equality of every state field.
inline bool bitwise_equal(const RobotState& a, const RobotState& b) {
  for (int i = 0; i < 3; ++i) {
    if (!detail::same_bytes(a.torso_position[i], b.torso_position[i])) return false;
    if (!detail::same_bytes(a.torso_linear_velocity[i], b.torso_linear_velocity[i])) return false;
    if (!detail::same_bytes(a.torso_angular_velocity[i], b.torso_angular_velocity[i])) return false;
  }
  for (int i = 0; i < 4; ++i)
    if (!detail::same_bytes(a.torso_orientation.coeffs()[i], b.torso_orientation.coeffs()[i])) return false;
  for (int j = 0; j < kNumJoints; ++j) {
    if (!detail::same_bytes(a.joint_angles[j], b.joint_angles[j])) return false;
    if (!detail::same_bytes(a.joint_velocities[j], b.joint_velocities[j])) return false;
  }
  if (!detail::same_bytes(a.sim_time, b.sim_time)) return false;
  for (int c = 0; c < kNumContacts; ++c) {
    if (a.anchors[c].active != b.anchors[c].active) return false;
    if (!detail::same_bytes(a.anchors[c].x, b.anchors[c].x) || !detail::same_bytes(a.anchors[c].y, b.anchors[c].y))
      return false;
  }
  return true;
}

/// Servo set-points in radians, one per joint.
struct ServoCommand {
  JointVector targets = JointVector::Zero();
  bool motors_enabled = true;

  static ServoCommand off() {
    ServoCommand c;
    c.motors_enabled = false;
    return c;
  }
  static ServoCommand hold(const RobotState& s) {
    ServoCommand c;
    c.targets = s.joint_angles;
    return c;
  }
};

}  // namespace realant::physics
