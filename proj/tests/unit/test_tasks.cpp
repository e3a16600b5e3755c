#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "realant/tasks/env.hpp"

using namespace realant;
using namespace realant::tasks;

namespace {

EnvConfig clean_env(TaskId id) {
  EnvConfig c;
  c.task = task_spec(id);
  c.realism = sensors::RealismConfig::clean();
  return c;
}

Action random_action(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Action a;
  for (int i = 0; i < kActionDim; ++i) a[i] = u(rng);
  return a;
}

}  // namespace

TEST(Observation, ZeroAnglesEncodeAsUnitCosines) {
  physics::RobotState s;
  const Observation o = assemble_observation(s);
  const double expected[6] = {0, 1, 0, 1, 0, 1};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(o[Observation::kEulerSinCos + i], expected[i]);
  EXPECT_EQ(o.values.size(), 29u);
}

TEST(Observation, HeightOnlyState) {
  physics::RobotState s;
  s.torso_position.z() = 0.12;
  const Observation o = assemble_observation(s);
  for (int i = 0; i < Observation::kDim; ++i) {
    const bool is_cos = i == 5 || i == 7 || i == 9;
    const double expected = i == 3 ? 0.12 : (is_cos ? 1.0 : 0.0);
    EXPECT_EQ(o[i], expected) << i;
  }
}

TEST(Observation, SinCosPairsOnUnitCircle) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int t = 0; t < 100; ++t) {
    physics::RobotState s;
    s.torso_orientation = Eigen::Quaterniond(u(rng), u(rng), u(rng), u(rng)).normalized();
    const Observation o = assemble_observation(s);
    for (int i = 0; i < 3; ++i) {
      const double a = o[Observation::kEulerSinCos + 2 * i], b = o[Observation::kEulerSinCos + 2 * i + 1];
      EXPECT_NEAR(a * a + b * b, 1.0, 1e-9);
    }
  }
}

TEST(Observation, FieldOrder) {
  ObservationInputs in;
  in.torso_velocity = Vec3(1, 2, 3);
  in.torso_z = 4;
  in.euler_rates = Vec3(11, 12, 13);
  for (int j = 0; j < 8; ++j) {
    in.joint_angles[j] = 14 + j;
    in.joint_velocities[j] = 22 + j;
  }
  const Observation o = assemble_observation(in);
  const int checks[] = {0, 1, 2, 3, 10, 11, 12, 13, 20, 21, 28};
  for (int i : checks) EXPECT_EQ(o[i], i + 1.0) << i;
}

TEST(ActionMapping, EndpointsMidpointAndClamp) {
  physics::BodyModel m;
  Action lo = Action::Constant(-1.0), mid = Action::Zero(), over = Action::Constant(1.7);
  const auto c_lo = action_to_targets(lo, m);
  const auto c_mid = action_to_targets(mid, m);
  const auto c_over = action_to_targets(over, m);
  const auto c_one = action_to_targets(Action::Constant(1.0), m);
  for (int j = 0; j < kActionDim; ++j) {
    EXPECT_NEAR(c_lo.targets[j], m.limits(j).lower, 1e-15);
    EXPECT_NEAR(c_mid.targets[j], 0.5 * (m.limits(j).lower + m.limits(j).upper), 1e-15);
    EXPECT_EQ(c_over.targets[j], c_one.targets[j]);
    EXPECT_NEAR(c_one.targets[j], m.limits(j).upper, 1e-15);
  }
}

TEST(Rewards, Examples) {
  EXPECT_EQ(reward_height(0.12, 0.12), 0.0);
  EXPECT_NEAR(reward_height(0.0, 0.12), -0.0144, 1e-15);
  EXPECT_NEAR(reward_height(0.05, 0.0), -0.0025, 1e-15);
  EXPECT_EQ(reward_turn(3.14), 0.0);
  EXPECT_NEAR(reward_turn(0.0), -9.8596, 1e-12);
  EXPECT_NEAR(reward_turn(1.57), -2.4649, 1e-12);
  EXPECT_EQ(reward_walk(0.0), 0.0);
  EXPECT_EQ(reward_walk(0.0596), 0.0596);
  EXPECT_EQ(reward_walk(-0.02), -0.02);
}

TEST(Rewards, HeightAndTurnNeverPositive) {
  for (double z = -0.1; z < 0.3; z += 0.013) EXPECT_LE(reward_height(z, 0.12), 0.0);
  for (double y = -7.0; y < 7.0; y += 0.1) EXPECT_LE(reward_turn(y), 0.0);
}

TEST(TaskSpecs, GoalsAndInitialPoses) {
  EXPECT_EQ(task_spec(TaskId::sleep).goal_height, 0.0);
  EXPECT_EQ(task_spec(TaskId::stand).goal_height, 0.12);
  EXPECT_EQ(task_spec(TaskId::turn).goal_yaw, 3.14);
  EXPECT_EQ(task_spec(TaskId::sleep).initial_pose, physics::PoseTag::standing);
  EXPECT_EQ(task_spec(TaskId::walk).initial_pose, physics::PoseTag::lying);
  EXPECT_EQ(parse_task("turn"), TaskId::turn);
  EXPECT_THROW(parse_task("run"), std::invalid_argument);
}

TEST(Environment, ResetPoses) {
  physics::BodyModel m;
  Environment walk(clean_env(TaskId::walk));
  walk.reset(1);
  EXPECT_EQ(walk.steps(), 0);
  EXPECT_TRUE(physics::bitwise_equal(walk.state(), physics::reset(m, physics::PoseTag::lying)));
  Environment sleep(clean_env(TaskId::sleep));
  sleep.reset(1);
  EXPECT_TRUE(physics::bitwise_equal(sleep.state(), physics::reset(m, physics::PoseTag::standing)));
}

TEST(Environment, SameSeedSameObservations) {
  EnvConfig cfg;
  cfg.task = task_spec(TaskId::walk);
  Environment a(cfg), b(cfg);
  EXPECT_EQ(a.reset(9), b.reset(9));
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const Action act = random_action(rng);
    const auto ra = a.step(act), rb = b.step(act);
    EXPECT_EQ(ra.observation, rb.observation);
    EXPECT_EQ(ra.reward, rb.reward);
  }
}

TEST(Environment, DoneExactlyAtStepTwoHundred) {
  Environment env(clean_env(TaskId::turn));
  env.reset(0);
  std::mt19937_64 rng(2);
  for (int t = 1; t <= 200; ++t) {
    const auto r = env.step(random_action(rng));
    EXPECT_EQ(r.done, t == 200) << t;
    EXPECT_FALSE(r.info.diverged);
  }
  EXPECT_NEAR(env.state().sim_time, 10.0, 1e-9);
  EXPECT_THROW(env.step(Action::Zero()), ProtocolError);
}

TEST(Environment, StepBeforeResetRejected) {
  Environment env(clean_env(TaskId::walk));
  EXPECT_THROW(env.step(Action::Zero()), ProtocolError);
}

TEST(Environment, DivergenceIsTerminal) {
  EnvConfig cfg = clean_env(TaskId::walk);
  cfg.model.substep = 0.05;
  cfg.model.contact.stiffness = 1e9;
  Environment env(cfg);
  env.reset(0);
  bool diverged = false;
  for (int t = 0; t < 200 && !env.done(); ++t) {
    const auto r = env.step(Action::Constant(1.0));
    if (r.info.diverged) {
      diverged = true;
      EXPECT_TRUE(r.done);
      EXPECT_EQ(r.reward, 0.0);
      EXPECT_TRUE(r.info.truth.all_finite());
    }
  }
  EXPECT_TRUE(diverged);
}

TEST(Environment, CleanWalkRewardIsSmoothDerivativeOfTrueX) {
  Environment env(clean_env(TaskId::walk));
  env.reset(3);
  std::mt19937_64 rng(8);
  std::vector<double> xs{env.state().torso_position.x()};
  std::vector<double> truth_v{env.state().torso_linear_velocity.x()};
  double sum = 0.0;
  for (int t = 1; t <= 200; ++t) {
    const auto r = env.step(random_action(rng));
    xs.push_back(r.info.truth.torso_position.x());
    sum += r.reward * kControlPeriod;
    if (t >= 6) {
      const auto x = [&](int k) { return xs[t - 3 + k]; };
      const double oracle = (5 * (x(1) - x(-1)) + 4 * (x(2) - x(-2)) + (x(3) - x(-3))) / (32 * kControlPeriod);
      EXPECT_NEAR(r.reward, oracle, 1e-12) << t;
    } else {
      EXPECT_EQ(r.reward, 0.0);
    }
  }
  // telescoping: the summed smooth derivative spans the window-interior displacement
  const double displacement = xs[197] - xs[3];
  EXPECT_NEAR(sum, displacement, 0.01);
}

TEST(Environment, SleepFoldingPolicyReachesNearZeroReward) {
  Environment env(clean_env(TaskId::sleep));
  env.reset(0);
  Action fold = Action::Zero();
  for (int leg = 0; leg < 4; ++leg) fold[physics::knee_index(leg)] = 1.0;
  StepResult r;
  do r = env.step(fold);
  while (!r.done);
  EXPECT_GT(r.reward, -1e-3);
  EXPECT_LE(r.reward, 0.0);
}

TEST(Trajectory, CsvHasFortyOneColumns) {
  std::ostringstream os;
  write_trajectory_header(os);
  TrajectoryRow row;
  row.step = 3;
  row.time = 0.15;
  write_trajectory_row(os, row);
  std::istringstream in(os.str());
  std::string line;
  while (std::getline(in, line)) EXPECT_EQ(std::count(line.begin(), line.end(), ','), 40);
}
