#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "realant/physics/simulator.hpp"
#include "realant/sensors/pipeline.hpp"

using namespace realant;
using namespace realant::sensors;

namespace {

// Central stencil of half-width M exact to the highest possible degree,
// from the Vandermonde system sum_k c_k (k^p - (-k)^p) = [p == 1].
std::vector<double> lagrange_central(int half) {
  Eigen::MatrixXd a(half, half);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(half);
  for (int r = 0; r < half; ++r) {
    const int p = 2 * r + 1;
    for (int k = 1; k <= half; ++k) a(r, k - 1) = 2.0 * std::pow(k, p);
  }
  b[0] = 1.0;
  const Eigen::VectorXd c = a.fullPivLu().solve(b);
  return std::vector<double>(c.data(), c.data() + half);
}

double run_diff(int window, double h, double t0, const std::function<double(double)>& f) {
  Differentiator d(window, h);
  const int half = (window - 1) / 2;
  double out = 0.0;
  for (int i = -half; i <= half; ++i) out = d.push(f(t0 + i * h));
  return out;
}

tasks::Observation obs_with(double v) {
  tasks::Observation o;
  o.values.fill(v);
  return o;
}

}  // namespace

TEST(Differentiator, CoefficientsForWindowSeven) {
  const auto c = holoborodko_coefficients(7);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0], 5.0 / 32.0);
  EXPECT_EQ(c[1], 4.0 / 32.0);
  EXPECT_EQ(c[2], 1.0 / 32.0);
}

TEST(Differentiator, ExactOnMonomialsUpToDegreeTwo) {
  const double h = 0.05;
  for (int window : {5, 7, 9, 11}) {
    EXPECT_EQ(run_diff(window, h, 1.0, [](double) { return 4.2; }), 0.0) << window;
    EXPECT_NEAR(run_diff(window, h, 1.0, [](double t) { return t; }), 1.0, 1e-12) << window;
    EXPECT_NEAR(run_diff(window, h, 1.0, [](double t) { return t * t; }), 2.0, 1e-12) << window;
    EXPECT_NEAR(run_diff(window, h, 0.3, [](double t) { return 3.0 * t + 1.0; }), 3.0, 1e-12) << window;
  }
}

TEST(Differentiator, MomentConditionsFromCoefficients) {
  // first moment sum 2 k c_k fixes the derivative scale
  for (int window : {5, 7, 9}) {
    const auto c = holoborodko_coefficients(window);
    double m1 = 0.0;
    for (std::size_t k = 1; k <= c.size(); ++k) m1 += 2.0 * k * c[k - 1];
    EXPECT_NEAR(m1, 1.0, 1e-15) << window;
  }
}

TEST(Differentiator, NoiseGainBelowPlainCentralDifferences) {
  const double holo = noise_gain(holoborodko_coefficients(7));
  EXPECT_NEAR(holo, 2.0 * (25.0 + 16.0 + 1.0) / 1024.0, 1e-15);
  const double three_point = noise_gain({0.5});
  const double seven_point = noise_gain(lagrange_central(3));
  EXPECT_NEAR(lagrange_central(3)[0], 0.75, 1e-12);
  EXPECT_LT(holo, three_point);
  EXPECT_LT(holo, seven_point);
}

TEST(Differentiator, ReturnsZeroDuringWarmup) {
  Differentiator d(7, 0.05);
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(d.push(i * 1.0), 0.0);
    EXPECT_FALSE(d.warm());
  }
  EXPECT_NE(d.push(6.0), 0.0);
  EXPECT_TRUE(d.warm());
}

TEST(Differentiator, Linear) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  Differentiator df(7, 0.05), dg(7, 0.05), dsum(7, 0.05);
  const double a = 1.7, b = -0.3;
  for (int i = 0; i < 50; ++i) {
    const double f = n(rng), g = n(rng);
    const double lhs = dsum.push(a * f + b * g);
    const double rhs = a * df.push(f) + b * dg.push(g);
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}

TEST(Differentiator, RejectsEvenWindow) {
  EXPECT_THROW(Differentiator(6, 0.05), std::invalid_argument);
  EXPECT_THROW(Differentiator(1, 0.05), std::invalid_argument);
}

TEST(DelayLine, ZeroDelayIsIdentity) {
  DelayLine<int> d(0);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(d.push_pop(i), i);
}

TEST(DelayLine, TwoStepsHoldFirst) {
  DelayLine<int> d(2);
  EXPECT_EQ(d.push_pop(10), 10);
  EXPECT_EQ(d.push_pop(11), 10);
  EXPECT_EQ(d.push_pop(12), 10);
  EXPECT_EQ(d.push_pop(13), 11);
}

TEST(DelayLine, TenStepShift) {
  DelayLine<int> d(10);
  for (int t = 0; t < 40; ++t) EXPECT_EQ(d.push_pop(t), std::max(0, t - 10));
}

TEST(DelayLine, CompositionAddsDelays) {
  DelayLine<int> a(3), b(4), ab(7);
  for (int t = 0; t < 30; ++t) {
    const int composed = b.push_pop(a.push_pop(100 + t));
    const int direct = ab.push_pop(100 + t);
    if (t >= 7) EXPECT_EQ(composed, direct);
  }
}

TEST(DelayLine, ClearRestartsWarmup) {
  DelayLine<int> d(2);
  d.push_pop(1);
  d.push_pop(2);
  d.clear();
  EXPECT_EQ(d.push_pop(7), 7);
  EXPECT_EQ(d.push_pop(8), 7);
}

TEST(NoiseModel, ZeroSigmaIsIdentity) {
  NoiseModel n(0.0, 0.0, 3);
  double pose[6] = {0.1, -0.2, 0.3, 1.0, -1.0, 3.0};
  const double copy[6] = {0.1, -0.2, 0.3, 1.0, -1.0, 3.0};
  n.apply(pose);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(pose[i], copy[i]);
}

TEST(NoiseModel, SampleMeanWithinThreeStandardErrors) {
  const double sigma = 0.01;
  const int n = 100000;
  NoiseModel model(sigma, sigma, 42);
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = model.draw(sigma);
    sum += d;
    sq += d * d;
  }
  const double mean = sum / n;
  EXPECT_LT(std::fabs(mean), 3.0 * sigma / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(std::sqrt(sq / n), sigma, 0.02 * sigma);
}

TEST(NoiseModel, FixedSeedReproducible) {
  NoiseModel a(0.01, 0.02, 9), b(0.01, 0.02, 9);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.draw(1.0), b.draw(1.0));
  a.reseed(5);
  b.reseed(5);
  double pa[6] = {}, pb[6] = {};
  a.apply(pa);
  b.apply(pb);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(pa[i], pb[i]);
}

TEST(Lowpass, Examples) {
  Lowpass id(1.0);
  for (double x : {0.3, -2.0, 5.0}) EXPECT_EQ(id.push(x), x);
  Lowpass c(0.3);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(c.push(0.12), 0.12);
  Lowpass half(0.5);
  EXPECT_EQ(half.push(0.0), 0.0);
  EXPECT_EQ(half.push(1.0), 0.5);
}

TEST(Lowpass, MonotoneAndBoundedForMonotoneInput) {
  Lowpass f(0.3);
  double prev = -1e9;
  for (int i = 0; i < 50; ++i) {
    const double x = std::sqrt(static_cast<double>(i));
    const double y = f.push(x);
    EXPECT_GE(y, prev);
    EXPECT_GE(y, 0.0);
    EXPECT_LE(y, x);
    prev = y;
  }
  EXPECT_THROW(Lowpass(0.0), std::invalid_argument);
}

TEST(FrameStack, DimensionsAndPadding) {
  FrameStack fs(4);
  EXPECT_EQ(fs.dim(), 116);
  const auto first = fs.push(obs_with(1.0));
  ASSERT_EQ(first.size(), 116u);
  for (double v : first) EXPECT_EQ(v, 1.0);
  const auto second = fs.push(obs_with(2.0));
  for (int i = 0; i < 29; ++i) EXPECT_EQ(second[i], 2.0);
  for (int i = 29; i < 116; ++i) EXPECT_EQ(second[i], 1.0);
  fs.push(obs_with(3.0));
  fs.push(obs_with(4.0));
  const auto fifth = fs.push(obs_with(5.0));
  for (int k = 0; k < 4; ++k) EXPECT_EQ(fifth[29 * k], 5.0 - k);
}

TEST(FrameStack, SingleFrameIsIdentity) {
  FrameStack fs(1);
  tasks::Observation o;
  for (int i = 0; i < 29; ++i) o[i] = i * 0.5;
  const auto s = fs.push(o);
  ASSERT_EQ(s.size(), 29u);
  for (int i = 0; i < 29; ++i) EXPECT_EQ(s[i], o[i]);
}

TEST(WrapAngle, HalfOpenInterval) {
  EXPECT_EQ(wrap_angle(std::numbers::pi), std::numbers::pi);
  EXPECT_NEAR(wrap_angle(-std::numbers::pi), std::numbers::pi, 1e-15);
  EXPECT_NEAR(wrap_angle(3.0 * std::numbers::pi / 2.0), -std::numbers::pi / 2.0, 1e-15);
  EXPECT_NEAR(wrap_angle(0.1 + 4.0 * std::numbers::pi), 0.1, 1e-14);
}

TEST(Pipeline, DisabledEqualsGroundTruthExceptVelocities) {
  physics::BodyModel m;
  Pipeline p(RealismConfig::clean(), 0.05, 1);
  physics::RobotState s = physics::reset(m, physics::PoseTag::lying);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 30; ++t) {
    physics::ServoCommand c;
    for (int j = 0; j < 8; ++j) c.targets[j] = m.limits(j).lower + u(rng) * (m.limits(j).upper - m.limits(j).lower);
    s = physics::step(m, s, c, 0.05);
    const auto est = p.process(s);
    const auto truth = tasks::assemble_observation(s);
    EXPECT_EQ(est.observation[tasks::Observation::kHeight], truth[tasks::Observation::kHeight]);
    for (int i = 0; i < 6; ++i)
      EXPECT_EQ(est.observation[tasks::Observation::kEulerSinCos + i], truth[tasks::Observation::kEulerSinCos + i]);
    for (int i = tasks::Observation::kJointAngles; i < 29; ++i) EXPECT_EQ(est.observation[i], truth[i]);
  }
}

TEST(Pipeline, LatencyInvisibleOnConstantPose) {
  RealismConfig delayed = RealismConfig::clean();
  delayed.latency_steps = 2;
  Pipeline a(RealismConfig::clean(), 0.05), b(delayed, 0.05);
  PoseSample pose{0.1, 0.2, 0.03, 0.01, -0.02, 1.0, 0};
  JointSample joints;
  joints.angles.setConstant(0.5);
  for (int t = 0; t < 20; ++t) {
    const auto ea = a.process(pose, joints);
    const auto eb = b.process(pose, joints);
    EXPECT_EQ(ea.observation, eb.observation);
  }
}

TEST(Pipeline, ConstantForwardSpeedRecovered) {
  Pipeline p(RealismConfig::clean(), 0.05);
  JointSample joints;
  double est = 0.0;
  for (int t = 0; t < 20; ++t) {
    PoseSample pose{0.05 * 0.05 * t, 0.0, 0.1, 0.0, 0.0, 0.0, 0};
    const auto e = p.process(pose, joints);
    est = e.velocity.x();
    if (t >= 6) EXPECT_NEAR(est, 0.05, 1e-10) << t;
  }
}

TEST(Pipeline, JointChannelsBypassPoseLatency) {
  RealismConfig cfg = RealismConfig::clean();
  cfg.latency_steps = 3;
  Pipeline p(cfg, 0.05);
  for (int t = 0; t < 10; ++t) {
    JointSample j;
    j.angles.setConstant(0.1 * t);
    PoseSample pose{0.0, 0.0, 0.01 * t, 0.0, 0.0, 0.0, 0};
    const auto e = p.process(pose, j);
    EXPECT_EQ(e.observation[tasks::Observation::kJointAngles], 0.1 * t);
    EXPECT_EQ(e.observation[tasks::Observation::kHeight], 0.01 * std::max(0, t - 3));
  }
}

TEST(Pipeline, NoisyAnglesStayOnUnitCircle) {
  RealismConfig cfg;
  cfg.sigma_rpy = 0.5;
  Pipeline p(cfg, 0.05, 77);
  JointSample j;
  for (int t = 0; t < 100; ++t) {
    const auto e = p.process(PoseSample{0, 0, 0.1, 0.3, 0.2, 3.1, 0}, j);
    for (int i = 0; i < 3; ++i) {
      const double sn = e.observation[tasks::Observation::kEulerSinCos + 2 * i];
      const double cs = e.observation[tasks::Observation::kEulerSinCos + 2 * i + 1];
      EXPECT_NEAR(sn * sn + cs * cs, 1.0, 1e-12);
    }
  }
}

TEST(Pipeline, YawUnwrappedThroughSeam) {
  Pipeline p(RealismConfig::clean(), 0.05);
  JointSample j;
  const double rate = 1.0;  // rad/s
  for (int t = 0; t < 100; ++t) {
    const double yaw = 2.5 + rate * 0.05 * t;
    const auto e = p.process(PoseSample{0, 0, 0.1, 0, 0, wrap_angle(yaw), 0}, j);
    EXPECT_NEAR(e.euler_unwrapped[2], yaw, 1e-12);
    if (t >= 6) EXPECT_NEAR(e.observation[tasks::Observation::kEulerRates + 2], rate, 1e-9);
  }
}

TEST(Pipeline, SameSeedSameStream) {
  RealismConfig cfg;
  Pipeline a(cfg, 0.05, 5), b(cfg, 0.05, 5);
  JointSample j;
  for (int t = 0; t < 30; ++t) {
    PoseSample pose{0.01 * t, 0, 0.1, 0, 0, 0, 0};
    EXPECT_EQ(a.process(pose, j).observation, b.process(pose, j).observation);
  }
}
