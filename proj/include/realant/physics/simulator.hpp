#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

#include "realant/physics/body_model.hpp"
#include "realant/physics/robot_state.hpp"

namespace realant::physics {

/// Raised when the integrator produces NaN/Inf or a singular mass matrix.
class SimulationDiverged : public std::runtime_error {
 public:
  SimulationDiverged(const std::string& what, const RobotState& last_valid)
      : std::runtime_error(what), last_valid_(std::make_shared<const RobotState>(last_valid)) {}
  const RobotState& last_valid() const { return *last_valid_; }

 private:
  // exception storage is only 16-byte aligned; keep the vectorized state on the heap
  std::shared_ptr<const RobotState> last_valid_;
};

/// PD position servo with a symmetric torque clamp. Beyond the velocity
/// limit the servo stops driving in the direction of motion.
inline double servo_torque(double target, double angle, double velocity, const BodyModel& model) {
  const ServoParams& s = model.servo;
  double tau = s.kp * (target - angle) - s.kd * velocity;
  tau = std::clamp(tau, -s.torque_limit, s.torque_limit);
  if (std::fabs(velocity) > s.velocity_limit && tau * velocity > 0.0) tau = 0.0;
  return tau;
}

namespace detail {

inline constexpr int kDof = 6 + kNumJoints;
inline constexpr int kJointOffset = 6;

using Vec14 = Eigen::Matrix<double, kDof, 1>;
using Mat14 = Eigen::Matrix<double, kDof, kDof>;
using Mat3x14 = Eigen::Matrix<double, 3, kDof>;
using Mat3 = Eigen::Matrix3d;

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

/// Body-frame position of a point on a leg and its first and second
/// partial derivatives with respect to (hip, knee).
struct LegPoint {
  Vec3 r;
  Vec3 d_hip;
  Vec3 d_knee;
  Vec3 dd_hip_hip;
  Vec3 dd_hip_knee;
  Vec3 dd_knee_knee;
};

struct LegFrame {
  Vec3 hip_mount;
  Vec3 out;    // upper-link direction
  Vec3 perp;   // z x out
  double sin_knee;
  double cos_knee;
};

inline LegFrame leg_frame(const BodyModel& m, int leg, double hip, double knee) {
  const double base = std::atan2(static_cast<double>(leg_sign_y(leg)), static_cast<double>(leg_sign_x(leg)));
  const double psi = base + hip;
  const double c = std::cos(psi), s = std::sin(psi);
  LegFrame f;
  f.hip_mount = Vec3(leg_sign_x(leg) * m.torso_half_extents[0], leg_sign_y(leg) * m.torso_half_extents[1],
                     -m.torso_half_extents[2]);
  f.out = Vec3(c, s, 0.0);
  f.perp = Vec3(-s, c, 0.0);
  f.sin_knee = std::sin(knee);
  f.cos_knee = std::cos(knee);
  return f;
}

inline LegPoint upper_midpoint(const BodyModel& m, const LegFrame& f) {
  const double h = 0.5 * m.upper_link_length;
  LegPoint p;
  p.r = f.hip_mount + h * f.out;
  p.d_hip = h * f.perp;
  p.d_knee.setZero();
  p.dd_hip_hip = -h * f.out;
  p.dd_hip_knee.setZero();
  p.dd_knee_knee.setZero();
  return p;
}

/// Point at distance `along` from the knee on the lower link. The lower link
/// points along sin(knee) * out - cos(knee) * z.
inline LegPoint lower_point(const BodyModel& m, const LegFrame& f, double along) {
  const Vec3 z = Vec3::UnitZ();
  const double reach = m.upper_link_length + along * f.sin_knee;
  LegPoint p;
  p.r = f.hip_mount + m.upper_link_length * f.out + along * (f.sin_knee * f.out - f.cos_knee * z);
  p.d_hip = reach * f.perp;
  p.d_knee = along * (f.cos_knee * f.out + f.sin_knee * z);
  p.dd_hip_hip = -reach * f.out;
  p.dd_hip_knee = (along * f.cos_knee) * f.perp;
  p.dd_knee_knee = along * (f.cos_knee * z - f.sin_knee * f.out);
  return p;
}

/// World-frame kinematics of a leg point: position, velocity, the
/// acceleration at zero generalized acceleration, and the 3x14 Jacobian.
struct PointKinematics {
  Vec3 pos;
  Vec3 vel;
  Vec3 bias;
  Mat3x14 jac;
};

inline PointKinematics point_kinematics(const LegPoint& lp, int leg, const Mat3& rot, const RobotState& s) {
  const Vec3& w = s.torso_angular_velocity;
  const double qh = s.joint_velocities[hip_index(leg)];
  const double qk = s.joint_velocities[knee_index(leg)];
  PointKinematics k;
  const Vec3 rw = rot * lp.r;
  const Vec3 dh = rot * lp.d_hip;
  const Vec3 dk = rot * lp.d_knee;
  const Vec3 rdot = dh * qh + dk * qk;
  const Vec3 rdd = lp.dd_hip_hip * (qh * qh) + lp.dd_hip_knee * (2.0 * qh * qk) + lp.dd_knee_knee * (qk * qk);
  k.pos = s.torso_position + rw;
  k.vel = s.torso_linear_velocity + w.cross(rw) + rdot;
  k.bias = w.cross(w.cross(rw)) + 2.0 * w.cross(rdot) + rot * rdd;
  k.jac.setZero();
  k.jac.block<3, 3>(0, 0).setIdentity();
  k.jac.block<3, 3>(0, 3) = -skew(rw);
  k.jac.col(kJointOffset + hip_index(leg)) = dh;
  k.jac.col(kJointOffset + knee_index(leg)) = dk;
  return k;
}

inline Vec3 corner_body(const BodyModel& m, int c) {
  return Vec3(corner_sign_x(c) * m.torso_half_extents[0], corner_sign_y(c) * m.torso_half_extents[1],
              corner_sign_z(c) * m.torso_half_extents[2]);
}

/// Penalty normal force plus stick-anchor Coulomb friction. Updates the
/// anchor in place.
inline Vec3 contact_force(const ContactParams& cp, const Vec3& pos, const Vec3& vel, ContactAnchor& anchor) {
  if (pos.z() >= 0.0) {
    anchor = ContactAnchor{};
    return Vec3::Zero();
  }
  const double depth = -pos.z();
  double normal = cp.stiffness * depth - cp.damping * vel.z();
  if (normal < 0.0) normal = 0.0;
  if (!anchor.active) {
    anchor.active = true;
    anchor.x = pos.x();
    anchor.y = pos.y();
  }
  double fx = -cp.tangential_stiffness * (pos.x() - anchor.x) - cp.tangential_damping * vel.x();
  double fy = -cp.tangential_stiffness * (pos.y() - anchor.y) - cp.tangential_damping * vel.y();
  const double limit = cp.friction_coeff * normal;
  const double mag = std::sqrt(fx * fx + fy * fy);
  if (mag > limit) {
    const double scale = mag > 0.0 ? limit / mag : 0.0;
    fx *= scale;
    fy *= scale;
    anchor.x = pos.x() + fx / cp.tangential_stiffness;
    anchor.y = pos.y() + fy / cp.tangential_stiffness;
  }
  return Vec3(fx, fy, normal);
}

inline Vec3 torso_inertia_diag(const BodyModel& m) {
  const double hx = m.torso_half_extents[0], hy = m.torso_half_extents[1], hz = m.torso_half_extents[2];
  const double k = m.torso_mass / 3.0;
  return Vec3(k * (hy * hy + hz * hz), k * (hx * hx + hz * hz), k * (hx * hx + hy * hy));
}

inline Vec14 velocity_vector(const RobotState& s) {
  Vec14 u;
  u << s.torso_linear_velocity, s.torso_angular_velocity, s.joint_velocities;
  return u;
}

/// Mass matrix and generalized force. Contact forces and anchor updates are
/// only computed when `anchors` is non-null; servo torques only when `cmd`
/// is non-null.
///
/// Per-leg and per-corner contributions are accumulated separately and
/// summed pairwise (left + right) so that the result is exactly mirror
/// equivariant in floating point.
inline void assemble(const BodyModel& m, const RobotState& s, const ServoCommand* cmd,
                     std::array<ContactAnchor, kNumContacts>* anchors, Mat14& mass, Vec14& force) {
  const Mat3 rot = s.torso_orientation.toRotationMatrix();
  const Vec3 g(0.0, 0.0, -m.gravity);
  const Vec3& w = s.torso_angular_velocity;

  mass.setZero();
  force.setZero();
  const Vec3 ib = torso_inertia_diag(m);
  const Mat3 iw = rot * ib.asDiagonal() * rot.transpose();
  mass.block<3, 3>(0, 0) = m.torso_mass * Mat3::Identity();
  mass.block<3, 3>(3, 3) = iw;
  for (int j = 0; j < kNumJoints; ++j) mass(kJointOffset + j, kJointOffset + j) = m.servo.armature;
  force.segment<3>(0) = m.torso_mass * g;
  force.segment<3>(3) = -w.cross(iw * w);

  std::array<Mat14, kNumLegs> leg_mass;
  std::array<Vec14, kNumLegs> leg_force;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const int hip = hip_index(leg), knee = knee_index(leg);
    const LegFrame frame = leg_frame(m, leg, s.joint_angles[hip], s.joint_angles[knee]);
    const PointKinematics up = point_kinematics(upper_midpoint(m, frame), leg, rot, s);
    const PointKinematics lo = point_kinematics(lower_point(m, frame, 0.5 * m.lower_link_length), leg, rot, s);
    Mat14& ml = leg_mass[leg];
    Vec14& fl = leg_force[leg];
    ml.noalias() = m.upper_link_mass * (up.jac.transpose() * up.jac);
    ml.noalias() += m.lower_link_mass * (lo.jac.transpose() * lo.jac);
    fl.noalias() = up.jac.transpose() * (m.upper_link_mass * (g - up.bias));
    fl.noalias() += lo.jac.transpose() * (m.lower_link_mass * (g - lo.bias));
    if (anchors) {
      const PointKinematics foot = point_kinematics(lower_point(m, frame, m.lower_link_length), leg, rot, s);
      const Vec3 f = contact_force(m.contact, foot.pos, foot.vel, (*anchors)[leg]);
      fl.noalias() += foot.jac.transpose() * f;
    }
    if (cmd && cmd->motors_enabled) {
      for (int j : {hip, knee}) {
        const double target = m.limits(j).clamp(cmd->targets[j]);
        fl[kJointOffset + j] += servo_torque(target, s.joint_angles[j], s.joint_velocities[j], m);
      }
    }
  }
  mass += (leg_mass[0] + leg_mass[1]) + (leg_mass[2] + leg_mass[3]);
  force += (leg_force[0] + leg_force[1]) + (leg_force[2] + leg_force[3]);

  if (anchors) {
    std::array<Vec14, kNumCorners> corner_force;
    for (int c = 0; c < kNumCorners; ++c) {
      const Vec3 rw = rot * corner_body(m, c);
      const Vec3 pos = s.torso_position + rw;
      const Vec3 vel = s.torso_linear_velocity + w.cross(rw);
      const Vec3 f = contact_force(m.contact, pos, vel, (*anchors)[kNumFeet + c]);
      corner_force[c].setZero();
      corner_force[c].segment<3>(0) = f;
      corner_force[c].segment<3>(3) = rw.cross(f);
    }
    force += ((corner_force[0] + corner_force[1]) + (corner_force[2] + corner_force[3])) +
             ((corner_force[4] + corner_force[5]) + (corner_force[6] + corner_force[7]));
  }
}

/// Half sum/difference of a left-right pair. Under mirroring, hip
/// coordinates swap and change sign and knee coordinates swap, so the first
/// output is mirror invariant and the second flips sign.
inline void pair_transform(double& a, double& b, bool hip) {
  const double first = 0.5 * (hip ? a - b : a + b);
  const double second = 0.5 * (hip ? a + b : a - b);
  a = first;
  b = second;
}

inline void pair_inverse(double& a, double& b, bool hip) {
  const double ua = a + b;
  const double ub = hip ? b - a : a - b;
  a = ua;
  b = ub;
}

template <typename F>
void for_each_pair(F&& f) {
  for (int leg = 0; leg < kNumLegs; leg += 2) {
    f(kJointOffset + hip_index(leg), kJointOffset + hip_index(leg + 1), true);
    f(kJointOffset + knee_index(leg), kJointOffset + knee_index(leg + 1), false);
  }
}

/// Solves mass * accel = force in the left/right pair basis.
inline bool solve_mirrored(Mat14 mass, Vec14 force, Vec14& accel) {
  for_each_pair([&](int a, int b, bool hip) {
    for (int r = 0; r < kDof; ++r) pair_transform(mass(r, a), mass(r, b), hip);
  });
  for_each_pair([&](int a, int b, bool hip) {
    for (int c = 0; c < kDof; ++c) pair_transform(mass(a, c), mass(b, c), hip);
    pair_transform(force[a], force[b], hip);
  });
  Eigen::LLT<Mat14> llt(mass);
  if (llt.info() != Eigen::Success) return false;
  accel = llt.solve(force);
  for_each_pair([&](int a, int b, bool hip) { pair_inverse(accel[a], accel[b], hip); });
  return true;
}

inline Vec14 generalized_acceleration(const BodyModel& m, RobotState& s, const ServoCommand& cmd) {
  Mat14 mass;
  Vec14 force;
  assemble(m, s, &cmd, &s.anchors, mass, force);
  Vec14 accel;
  if (!solve_mirrored(mass, force, accel)) accel.setConstant(std::nan(""));
  return accel;
}

inline void kick(RobotState& s, const Vec14& accel, double h) {
  s.torso_linear_velocity += h * accel.segment<3>(0);
  s.torso_angular_velocity += h * accel.segment<3>(3);
  s.joint_velocities += h * accel.segment<kNumJoints>(kJointOffset);
}

inline void stop_at_limits(const BodyModel& m, RobotState& s) {
  for (int j = 0; j < kNumJoints; ++j) {
    const JointLimits& lim = m.limits(j);
    if (s.joint_angles[j] <= lim.lower) {
      s.joint_angles[j] = lim.lower;
      if (s.joint_velocities[j] < 0.0) s.joint_velocities[j] = 0.0;
    } else if (s.joint_angles[j] >= lim.upper) {
      s.joint_angles[j] = lim.upper;
      if (s.joint_velocities[j] > 0.0) s.joint_velocities[j] = 0.0;
    }
  }
}

inline void drift(const BodyModel& m, RobotState& s, double h) {
  s.torso_position += h * s.torso_linear_velocity;
  const Vec3& w = s.torso_angular_velocity;
  const double speed = w.norm();
  if (speed > 0.0) {
    const double half = 0.5 * h * speed;
    const Vec3 axis = w / speed;
    const double sh = std::sin(half);
    const Eigen::Quaterniond dq(std::cos(half), sh * axis.x(), sh * axis.y(), sh * axis.z());
    s.torso_orientation = dq * s.torso_orientation;
  }
  s.torso_orientation.normalize();
  s.joint_angles += h * s.joint_velocities;
  stop_at_limits(m, s);
}

}  // namespace detail

enum class PoseTag { lying, standing };

/// Rest state for a named initial pose.
///
/// `lying` puts the torso on the ground with hips centered and knees at 100
/// degrees (legs splayed); `standing` puts the knees at their lower limit
/// (lower links nearly vertical) with the feet touching the ground.
inline RobotState reset(const BodyModel& model, PoseTag pose) {
  RobotState s;
  const double knee = pose == PoseTag::lying ? model.knee_limits.clamp(100.0 * std::numbers::pi / 180.0)
                                             : model.knee_limits.lower;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    s.joint_angles[hip_index(leg)] = model.hip_limits.clamp(0.0);
    s.joint_angles[knee_index(leg)] = knee;
  }
  const double foot_drop = model.lower_link_length * std::cos(knee);
  s.torso_position = Vec3(0.0, 0.0, model.torso_half_extents[2] + std::max(0.0, foot_drop));
  return s;
}

/// Rest state at a caller-supplied configuration. Velocities, time and
/// contact anchors are cleared; joint limits are a closed interval.
inline RobotState reset(const BodyModel& model, const RobotState& custom) {
  if (!custom.all_finite()) throw std::invalid_argument("custom initial state is not finite");
  for (int j = 0; j < kNumJoints; ++j) {
    if (!model.limits(j).contains(custom.joint_angles[j]))
      throw std::invalid_argument("custom initial state violates the limits of joint " + std::to_string(j));
  }
  RobotState s;
  s.torso_position = custom.torso_position;
  s.torso_orientation = custom.torso_orientation.normalized();
  s.joint_angles = custom.joint_angles;
  return s;
}

/// Advances the state by `dt_control` seconds with kick-drift-kick velocity
/// Verlet at the model's substep. Deterministic for identical inputs.
inline RobotState step(const BodyModel& model, const RobotState& state, const ServoCommand& cmd, double dt_control) {
  const double h = model.substep;
  const double ratio = dt_control / h;
  const long n = std::lround(ratio);
  if (n <= 0 || std::fabs(ratio - static_cast<double>(n)) > 1e-9)
    throw std::invalid_argument("dt_control must be a positive integer multiple of the substep");
  if (!state.all_finite()) throw SimulationDiverged("input state is not finite", state);

  RobotState s = state;
  const double t0 = state.sim_time;
  detail::Vec14 accel = detail::generalized_acceleration(model, s, cmd);
  for (long i = 0; i < n; ++i) {
    const RobotState last = s;
    detail::kick(s, accel, 0.5 * h);
    detail::drift(model, s, h);
    accel = detail::generalized_acceleration(model, s, cmd);
    detail::kick(s, accel, 0.5 * h);
    detail::stop_at_limits(model, s);
    s.sim_time = t0 + static_cast<double>(i + 1) * h;
    if (!s.all_finite() || !accel.allFinite()) throw SimulationDiverged("simulation diverged", last);
  }
  return s;
}

/// Reflection across the world x-z plane. Legs swap left/right, hips change
/// sign, knees keep their angle:
///
///   front_left  <-> front_right
///   back_left   <-> back_right
///   corner c    <-> corner c ^ 1
inline RobotState mirror(const RobotState& s) {
  RobotState m = s;
  m.torso_position.y() = -s.torso_position.y();
  const auto& q = s.torso_orientation;
  m.torso_orientation = Eigen::Quaterniond(q.w(), -q.x(), q.y(), -q.z());
  m.torso_linear_velocity.y() = -s.torso_linear_velocity.y();
  m.torso_angular_velocity.x() = -s.torso_angular_velocity.x();
  m.torso_angular_velocity.z() = -s.torso_angular_velocity.z();
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const int other = leg ^ 1;
    m.joint_angles[hip_index(leg)] = -s.joint_angles[hip_index(other)];
    m.joint_angles[knee_index(leg)] = s.joint_angles[knee_index(other)];
    m.joint_velocities[hip_index(leg)] = -s.joint_velocities[hip_index(other)];
    m.joint_velocities[knee_index(leg)] = s.joint_velocities[knee_index(other)];
    const ContactAnchor& a = s.anchors[other];
    m.anchors[leg] = ContactAnchor{a.active, a.x, -a.y};
  }
  for (int c = 0; c < kNumCorners; ++c) {
    const ContactAnchor& a = s.anchors[kNumFeet + (c ^ 1)];
    m.anchors[kNumFeet + c] = ContactAnchor{a.active, a.x, -a.y};
  }
  return m;
}

inline ServoCommand mirror(const ServoCommand& cmd) {
  ServoCommand m = cmd;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const int other = leg ^ 1;
    m.targets[hip_index(leg)] = -cmd.targets[hip_index(other)];
    m.targets[knee_index(leg)] = cmd.targets[knee_index(other)];
  }
  return m;
}

/// World positions of the eight link point masses (upper then lower, per leg).
inline std::array<Vec3, 2 * kNumLegs> link_positions(const BodyModel& model, const RobotState& s) {
  const detail::Mat3 rot = s.torso_orientation.toRotationMatrix();
  std::array<Vec3, 2 * kNumLegs> out;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const auto f = detail::leg_frame(model, leg, s.joint_angles[hip_index(leg)], s.joint_angles[knee_index(leg)]);
    out[2 * leg] = s.torso_position + rot * detail::upper_midpoint(model, f).r;
    out[2 * leg + 1] = s.torso_position + rot * detail::lower_point(model, f, 0.5 * model.lower_link_length).r;
  }
  return out;
}

/// World positions of the four foot tips.
inline std::array<Vec3, kNumLegs> foot_positions(const BodyModel& model, const RobotState& s) {
  const detail::Mat3 rot = s.torso_orientation.toRotationMatrix();
  std::array<Vec3, kNumLegs> out;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const auto f = detail::leg_frame(model, leg, s.joint_angles[hip_index(leg)], s.joint_angles[knee_index(leg)]);
    out[leg] = s.torso_position + rot * detail::lower_point(model, f, model.lower_link_length).r;
  }
  return out;
}

/// Kinetic plus gravitational potential energy (zero potential at z = 0).
inline double total_energy(const BodyModel& model, const RobotState& s) {
  detail::Mat14 mass;
  detail::Vec14 force;
  detail::assemble(model, s, nullptr, nullptr, mass, force);
  const detail::Vec14 u = detail::velocity_vector(s);
  const double kinetic = 0.5 * u.dot(mass * u);
  double potential = model.torso_mass * s.torso_position.z();
  const auto links = link_positions(model, s);
  for (int i = 0; i < 2 * kNumLegs; ++i)
    potential += (i % 2 == 0 ? model.upper_link_mass : model.lower_link_mass) * links[i].z();
  return kinetic + model.gravity * potential;
}

/// Deepest ground penetration over all contact points (0 when none).
inline double max_penetration(const BodyModel& model, const RobotState& s) {
  double depth = 0.0;
  for (const Vec3& f : foot_positions(model, s)) depth = std::max(depth, -f.z());
  const detail::Mat3 rot = s.torso_orientation.toRotationMatrix();
  for (int c = 0; c < kNumCorners; ++c)
    depth = std::max(depth, -(s.torso_position + rot * detail::corner_body(model, c)).z());
  return depth;
}

}  // namespace realant::physics
