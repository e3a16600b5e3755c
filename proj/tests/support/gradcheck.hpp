#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "realant/rl/losses.hpp"

namespace realant::gradcheck {

using rl::Batch;
using rl::Mat;
using rl::Mlp;
using rl::MlpShape;
using rl::RowVec;
using rl::Vec;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares an analytic gradient with central finite differences of
/// `loss` over every component of `params`. Components smaller than 1e-5
/// are compared against that floor, below the round-off of the difference.
inline GradCheckResult compare_with_finite_differences(Vec<double>& params, const Vec<double>& analytic,
                                                       const std::function<double()>& loss, double eps = 1e-5) {
  GradCheckResult r;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = loss();
    params[i] = saved - eps;
    const double down = loss();
    params[i] = saved;
    const double fd = (up - down) / (2.0 * eps);
    const double scale = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-5});
    r.max_rel_error = std::max(r.max_rel_error, std::fabs(fd - analytic[i]) / scale);
    ++r.checked;
  }
  return r;
}

/// Randomized toy problem: 3-wide states, 8-wide actions, 6-unit hidden
/// layers with dense connections (all networks under 500 parameters).
struct ToyProblem {
  static constexpr int kState = 3;
  static constexpr int kHidden = 6;
  static constexpr int kBatch = 5;

  std::mt19937_64 rng;
  Batch<double> batch;
  Mlp<double> det_actor, det_actor_target, gauss_actor;
  std::vector<Mlp<double>> critics, critic_targets;

  explicit ToyProblem(std::uint64_t seed, int n_critics = 2) : rng(seed) {
    const int a = tasks::kActionDim;
    const MlpShape det{kState, a, kHidden, 2, true};
    const MlpShape gauss{kState, 2 * a, kHidden, 2, true};
    const MlpShape critic{kState + a, 1, kHidden, 2, true};
    det_actor = Mlp<double>(det);
    det_actor.initialize(rng);
    det_actor_target = Mlp<double>(det);
    det_actor_target.initialize(rng);
    gauss_actor = Mlp<double>(gauss);
    gauss_actor.initialize(rng, 0.5);
    for (int i = 0; i < n_critics; ++i) {
      Mlp<double> c(critic), t(critic);
      c.initialize(rng);
      t.initialize(rng);
      critics.push_back(c);
      critic_targets.push_back(t);
    }
    // Non-trivial input scaling on the state columns of every network.
    Vec<double> s(kState);
    s << 0.5, 1.0, 2.0;
    Vec<double> sa = Vec<double>::Ones(kState + a);
    sa.head(kState) = s;
    det_actor.set_input_scale(s);
    det_actor_target.set_input_scale(s);
    gauss_actor.set_input_scale(s);
    for (auto* v : {&critics, &critic_targets})
      for (auto& c : *v) c.set_input_scale(sa);

    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    batch.state = random(kState, kBatch, n);
    batch.next_state = random(kState, kBatch, n);
    batch.action.resize(a, kBatch);
    for (Eigen::Index j = 0; j < kBatch; ++j)
      for (int i = 0; i < a; ++i) batch.action(i, j) = u(rng);
    batch.reward = random(1, kBatch, n).row(0);
    batch.not_terminal = RowVec<double>::Ones(kBatch);
    batch.not_terminal[kBatch - 1] = 0.0;
  }

  Mat<double> normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> n;
    return random(rows, cols, n);
  }

 private:
  template <typename D>
  Mat<double> random(Eigen::Index rows, Eigen::Index cols, D& dist) {
    Mat<double> m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    return m;
  }
};

/// Worst relative error of every algorithm loss on one toy instance, keyed
/// by loss name.
inline std::map<std::string, GradCheckResult> check_all_losses(std::uint64_t seed) {
  using namespace rl;
  std::map<std::string, GradCheckResult> out;
  const double gamma = 0.99;

  auto check_critics = [&](const std::string& name, ToyProblem& p, const RowVec<double>& y) {
    std::vector<Vec<double>> grads;
    for (const auto& c : p.critics) grads.push_back(Vec<double>::Zero(c.num_params()));
    critic_regression(p.critics, p.batch, y, &grads);
    GradCheckResult worst;
    for (std::size_t i = 0; i < p.critics.size(); ++i) {
      auto r = compare_with_finite_differences(p.critics[i].params(), grads[i],
                                               [&] { return critic_regression(p.critics, p.batch, y, nullptr); });
      worst.max_rel_error = std::max(worst.max_rel_error, r.max_rel_error);
      worst.checked += r.checked;
    }
    out[name] = worst;
  };

  {  // TD3
    ToyProblem p(seed);
    const Mat<double> noise = p.normal_matrix(tasks::kActionDim, ToyProblem::kBatch);
    const RowVec<double> y = td3_target(p.det_actor_target, p.critic_targets, p.batch, noise, 0.2, 0.5, gamma);
    check_critics("td3_critic", p, y);
    Vec<double> g = Vec<double>::Zero(p.det_actor.num_params());
    td3_actor_loss(p.det_actor, p.critics[0], p.batch, &g, 0.05, 0.1);
    out["td3_actor"] = compare_with_finite_differences(
        p.det_actor.params(), g, [&] { return td3_actor_loss(p.det_actor, p.critics[0], p.batch, nullptr, 0.05, 0.1); });
  }
  for (const bool redq : {false, true}) {
    ToyProblem p(seed + (redq ? 101 : 0), redq ? 10 : 2);
    const std::string prefix = redq ? "redq_" : "sac_";
    const double alpha = 0.3;
    const std::vector<int> subset = redq ? std::vector<int>{3, 7} : std::vector<int>{0, 1};
    const Mat<double> eps2 = p.normal_matrix(tasks::kActionDim, ToyProblem::kBatch);
    const RowVec<double> y = soft_target(p.gauss_actor, p.critic_targets, subset, p.batch, eps2, alpha, gamma);
    check_critics(prefix + "critic", p, y);

    const Mat<double> eps = p.normal_matrix(tasks::kActionDim, ToyProblem::kBatch);
    const CriticReduce reduce = redq ? CriticReduce::mean : CriticReduce::min;
    Vec<double> g = Vec<double>::Zero(p.gauss_actor.num_params());
    RowVec<double> logp;
    soft_actor_loss(p.gauss_actor, p.critics, reduce, p.batch, eps, alpha, &g, &logp);
    out[prefix + "actor"] = compare_with_finite_differences(p.gauss_actor.params(), g, [&] {
      return soft_actor_loss(p.gauss_actor, p.critics, reduce, p.batch, eps, alpha, nullptr);
    });

    if (!redq) {
      Vec<double> la(1), gla(1);
      la[0] = std::log(alpha);
      double ga = 0.0;
      temperature_loss(la[0], logp, -8.0, &ga);
      gla[0] = ga;
      out["sac_temperature"] =
          compare_with_finite_differences(la, gla, [&] { return temperature_loss(la[0], logp, -8.0, (double*)nullptr); });
    }
  }
  return out;
}

}  // namespace realant::gradcheck
