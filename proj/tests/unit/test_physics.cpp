#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "realant/physics/simulator.hpp"

using namespace realant::physics;

namespace {

BodyModel defaults() { return BodyModel{}; }

ServoCommand random_command(const BodyModel& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ServoCommand c;
  for (int j = 0; j < kNumJoints; ++j) {
    const auto lim = m.limits(j);
    c.targets[j] = lim.lower + u(rng) * (lim.upper - lim.lower);
  }
  return c;
}

double max_abs_diff(const RobotState& a, const RobotState& b) {
  double d = 0.0;
  d = std::max(d, (a.torso_position - b.torso_position).cwiseAbs().maxCoeff());
  d = std::max(d, (a.torso_orientation.coeffs() - b.torso_orientation.coeffs()).cwiseAbs().maxCoeff());
  d = std::max(d, (a.torso_linear_velocity - b.torso_linear_velocity).cwiseAbs().maxCoeff());
  d = std::max(d, (a.torso_angular_velocity - b.torso_angular_velocity).cwiseAbs().maxCoeff());
  d = std::max(d, (a.joint_angles - b.joint_angles).cwiseAbs().maxCoeff());
  d = std::max(d, (a.joint_velocities - b.joint_velocities).cwiseAbs().maxCoeff());
  return d;
}

RobotState settle(const BodyModel& m, RobotState s, double seconds) {
  const ServoCommand hold = ServoCommand::hold(s);
  const int n = static_cast<int>(std::lround(seconds / 0.05));
  for (int i = 0; i < n; ++i) s = step(m, s, hold, 0.05);
  return s;
}

}  // namespace

TEST(BodyModelConfig, DefaultsGiveDocumentedTotalMass) {
  const BodyModel m = load_model_string("format_version = 1\n");
  EXPECT_NEAR(m.total_mass(), 0.710, 1e-9);
  EXPECT_DOUBLE_EQ(m.servo.kp, 8.0);
  EXPECT_DOUBLE_EQ(m.servo.torque_limit, 0.75);
}

TEST(BodyModelConfig, ZeroTorsoMassNamesTheKey) {
  try {
    load_model_string("format_version = 1\ntorso_mass = 0\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("torso_mass must be positive"), std::string::npos) << e.what();
  }
}

TEST(BodyModelConfig, FrictionOverrideEchoedInSummary) {
  const BodyModel m = load_model_string("format_version = 1\nfriction_coeff = 0.9\n");
  EXPECT_DOUBLE_EQ(m.contact.friction_coeff, 0.9);
  EXPECT_NE(model_summary(m).find("friction_coeff = 0.9\n"), std::string::npos);
}

TEST(BodyModelConfig, MissingVersionRejected) {
  EXPECT_THROW(load_model_string("friction_coeff = 0.9\n"), ConfigError);
}

TEST(BodyModelConfig, UnknownAndDuplicateKeysRejected) {
  EXPECT_THROW(load_model_string("format_version = 1\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(load_model_string("format_version = 1\ngravity = 9\ngravity = 9\n"), ConfigError);
}

TEST(BodyModelConfig, SummaryReloadsToSameModel) {
  BodyModel m;
  m.contact.friction_coeff = 0.37;
  m.upper_link_length = 0.071;
  const std::string text = model_summary(m);
  const BodyModel again = load_model_string(text);
  EXPECT_EQ(model_summary(again), text);
}

TEST(BodyModelConfig, TotalMassMismatchRejected) {
  EXPECT_THROW(load_model_string("format_version = 1\ntotal_mass = 0.8\n"), ConfigError);
  EXPECT_NO_THROW(load_model_string("format_version = 1\ntotal_mass = 0.71\n"));
}

TEST(ServoTorque, Examples) {
  const BodyModel m = defaults();
  EXPECT_EQ(servo_torque(0.3, 0.3, 0.0, m), 0.0);
  EXPECT_DOUBLE_EQ(servo_torque(1.0, 0.0, 0.0, m), 0.75);
  EXPECT_NEAR(servo_torque(0.0, 0.05, 0.0, m), -0.4, 1e-15);
}

TEST(ServoTorque, NoDriveBeyondVelocityLimit) {
  const BodyModel m = defaults();
  EXPECT_EQ(servo_torque(1.0, 0.0, 6.5, m), 0.0);
  EXPECT_GT(servo_torque(1.0, 0.0, 5.0, m), 0.0);
  EXPECT_LT(servo_torque(-1.0, 0.0, 6.5, m), 0.0);  // braking still allowed
}

TEST(Reset, LyingIsAtRestAndLevel) {
  const BodyModel m = defaults();
  const RobotState s = reset(m, PoseTag::lying);
  EXPECT_TRUE(s.torso_linear_velocity.isZero());
  EXPECT_TRUE(s.torso_angular_velocity.isZero());
  EXPECT_TRUE(s.joint_velocities.isZero());
  const auto e = euler_zyx(s.torso_orientation);
  EXPECT_EQ(e.roll, 0.0);
  EXPECT_EQ(e.pitch, 0.0);
  EXPECT_EQ(s.sim_time, 0.0);
}

TEST(Reset, StandingSettlesNearGoalHeight) {
  const BodyModel m = defaults();
  const RobotState s = settle(m, reset(m, PoseTag::standing), 1.0);
  EXPECT_NEAR(s.torso_position.z(), 0.12, 0.02);
}

TEST(Reset, CustomAtExactLimitAccepted) {
  const BodyModel m = defaults();
  RobotState c = reset(m, PoseTag::standing);
  c.joint_angles[0] = m.hip_limits.upper;
  c.joint_angles[1] = m.knee_limits.lower;
  c.joint_velocities[0] = 1.0;
  const RobotState s = reset(m, c);
  EXPECT_EQ(s.joint_angles[0], m.hip_limits.upper);
  EXPECT_EQ(s.joint_velocities[0], 0.0);
  c.joint_angles[0] = std::nextafter(m.hip_limits.upper, 10.0);
  EXPECT_THROW(reset(m, c), std::invalid_argument);
}

TEST(Step, BallisticVelocityAfterOneControlStep) {
  const BodyModel m = defaults();
  RobotState s = reset(m, PoseTag::standing);
  s.torso_position.z() = 1.0;
  const RobotState n = step(m, s, ServoCommand::off(), 0.05);
  EXPECT_NEAR(n.torso_linear_velocity.z(), -m.gravity * 0.05, 1e-6);
  EXPECT_NEAR(n.torso_position.z(), 1.0 - 0.5 * m.gravity * 0.05 * 0.05, 1e-6);
}

TEST(Step, RestingRobotStaysPut) {
  const BodyModel m = defaults();
  for (PoseTag tag : {PoseTag::standing, PoseTag::lying}) {
    const RobotState rest = settle(m, reset(m, tag), 1.0);
    const RobotState later = settle(m, rest, 1.0);
    EXPECT_LT((later.torso_position - rest.torso_position).norm(), 1e-4);
  }
}

TEST(Step, BitIdenticalRepeat) {
  const BodyModel m = defaults();
  std::mt19937_64 rng(7);
  std::vector<ServoCommand> cmds;
  for (int i = 0; i < 60; ++i) cmds.push_back(random_command(m, rng));
  auto run = [&] {
    RobotState s = reset(m, PoseTag::lying);
    for (const auto& c : cmds) s = step(m, s, c, 0.05);
    return s;
  };
  EXPECT_TRUE(bitwise_equal(run(), run()));
}

TEST(Step, RejectsNonIntegerSubstepRatio) {
  const BodyModel m = defaults();
  EXPECT_THROW(step(m, reset(m, PoseTag::lying), ServoCommand{}, 0.0505), std::invalid_argument);
  EXPECT_THROW(step(m, reset(m, PoseTag::lying), ServoCommand{}, 0.0), std::invalid_argument);
}

TEST(Step, NonFiniteInputReportsDivergence) {
  const BodyModel m = defaults();
  RobotState s = reset(m, PoseTag::lying);
  s.torso_linear_velocity.x() = std::nan("");
  EXPECT_THROW(step(m, s, ServoCommand{}, 0.05), SimulationDiverged);
}

TEST(Step, QuaternionStaysNormalizedAndJointsInLimits) {
  const BodyModel m = defaults();
  std::mt19937_64 rng(11);
  RobotState s = reset(m, PoseTag::lying);
  for (int i = 0; i < 200; ++i) {
    s = step(m, s, random_command(m, rng), 0.05);
    ASSERT_NEAR(s.torso_orientation.norm(), 1.0, 1e-9);
    for (int j = 0; j < kNumJoints; ++j) {
      ASSERT_GE(s.joint_angles[j], m.limits(j).lower - 1e-6);
      ASSERT_LE(s.joint_angles[j], m.limits(j).upper + 1e-6);
    }
  }
}

TEST(Step, RestingPenetrationBelowFiveMillimetres) {
  const BodyModel m = defaults();
  for (PoseTag tag : {PoseTag::standing, PoseTag::lying}) {
    const RobotState s = settle(m, reset(m, tag), 1.0);
    EXPECT_LT(max_penetration(m, s), 0.005);
  }
}

TEST(Mirror, Involution) {
  const BodyModel m = defaults();
  std::mt19937_64 rng(3);
  RobotState s = reset(m, PoseTag::lying);
  for (int i = 0; i < 20; ++i) s = step(m, s, random_command(m, rng), 0.05);
  EXPECT_TRUE(bitwise_equal(mirror(mirror(s)), s));
}

TEST(Mirror, SymmetricStateIsFixedPoint) {
  const BodyModel m = defaults();
  RobotState s = reset(m, PoseTag::standing);
  s.torso_position.x() = 0.3;
  for (int leg : {0, 2}) {
    s.joint_angles[hip_index(leg)] = 0.2;
    s.joint_angles[hip_index(leg + 1)] = -0.2;
  }
  EXPECT_EQ(max_abs_diff(mirror(s), s), 0.0);  // values, not bits: 0.0 mirrors to -0.0
}

TEST(Mirror, MirroredCommandsGiveMirroredTrajectory) {
  const BodyModel m = defaults();
  std::mt19937_64 rng(5);
  RobotState a = reset(m, PoseTag::lying);
  a.torso_position.y() = 0.013;
  a.torso_orientation = quaternion_from_euler({0.0, 0.0, 0.4});
  RobotState b = mirror(a);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const ServoCommand c = random_command(m, rng);
    a = step(m, a, c, 0.05);
    b = step(m, b, mirror(c), 0.05);
    worst = std::max(worst, max_abs_diff(mirror(a), b));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Energy, RestStateIsPurePotential) {
  const BodyModel m = defaults();
  const RobotState s = reset(m, PoseTag::standing);
  // hand-built link positions: hips at the bottom corners, upper link
  // horizontal along the leg's base direction, lower link dropping from the knee
  const double hz = m.torso_half_extents[2];
  double expected = m.torso_mass * s.torso_position.z();
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const double knee = s.joint_angles[knee_index(leg)];
    const double hip_z = s.torso_position.z() - hz;
    expected += m.upper_link_mass * hip_z;
    expected += m.lower_link_mass * (hip_z - 0.5 * m.lower_link_length * std::cos(knee));
  }
  EXPECT_NEAR(total_energy(m, s), m.gravity * expected, 1e-12);
}

TEST(Energy, RaisingByTenCentimetresAddsMgh) {
  const BodyModel m = defaults();
  const RobotState s = reset(m, PoseTag::lying);
  RobotState up = s;
  up.torso_position.z() += 0.1;
  EXPECT_NEAR(total_energy(m, up) - total_energy(m, s), m.total_mass() * m.gravity * 0.1, 1e-12);
}

TEST(Energy, ConservedInContactFreeFall) {
  const BodyModel m = defaults();
  RobotState s = reset(m, PoseTag::standing);
  s.torso_position.z() = 2.0;
  s.torso_linear_velocity = Vec3(0.3, -0.2, 0.5);
  s.torso_angular_velocity = Vec3(0.4, -0.7, 1.1);
  s.joint_velocities << 0.5, 1.0, -0.5, 0.8, 0.3, 0.6, -0.2, 0.9;
  const double e0 = total_energy(m, s);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    s = step(m, s, ServoCommand::off(), 0.05);
    ASSERT_EQ(max_penetration(m, s), 0.0);
    worst = std::max(worst, std::fabs(total_energy(m, s) - e0) / std::fabs(e0));
  }
  EXPECT_LT(worst, 1e-3);
}
