#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <type_traits>
#include <vector>

#include "realant/rl/mlp.hpp"
#include "realant/rl/replay.hpp"

namespace realant::rl {

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

/// Optional outputs are excluded from deduction so callers may pass nullptr.
template <typename T>
using Out = std::type_identity_t<T>*;

/// Rows [state; action] for critic input.
template <typename S>
Mat<S> concat_rows(const Mat<S>& top, const Mat<S>& bottom) {
  Mat<S> out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

/// Critic regression sum_i mean_b (Q_i(s, a) - y)^2. Gradients for critic i
/// are accumulated into (*grads)[i] when `grads` is non-null.
template <typename S>
S critic_regression(const std::vector<Mlp<S>>& critics, const Batch<S>& batch, const RowVec<S>& target,
                    Out<std::vector<Vec<S>>> grads) {
  const Mat<S> sa = concat_rows(batch.state, batch.action);
  const S inv_b = S(1) / static_cast<S>(batch.size());
  S loss = 0;
  for (std::size_t i = 0; i < critics.size(); ++i) {
    MlpCache<S> cache;
    const Mat<S> q = critics[i].forward(sa, grads ? &cache : nullptr);
    const RowVec<S> err = q.row(0) - target;
    loss += err.squaredNorm() * inv_b;
    if (grads) {
      const Mat<S> dq = (S(2) * inv_b) * err;
      critics[i].backward(cache, dq, &(*grads)[i]);
    }
  }
  return loss;
}

/// Deterministic tanh policy output.
template <typename S>
Mat<S> tanh_policy(const Mlp<S>& actor, const Mat<S>& state, MlpCache<S>* cache = nullptr) {
  return actor.forward(state, cache).array().tanh().matrix();
}

/// TD3 target y = r + gamma * mask * min_j Q'_j(s', clip(pi'(s') + clip(sigma n, -c, c), -1, 1))
/// with `noise` holding standard normal draws.
template <typename S>
RowVec<S> td3_target(const Mlp<S>& actor_target, const std::vector<Mlp<S>>& critic_targets, const Batch<S>& batch,
                     const Mat<S>& noise, S sigma, S clip, S gamma) {
  Mat<S> a2 = tanh_policy(actor_target, batch.next_state);
  a2 += (sigma * noise).cwiseMax(-clip).cwiseMin(clip);
  a2 = a2.cwiseMax(S(-1)).cwiseMin(S(1));
  const Mat<S> sa2 = concat_rows(batch.next_state, a2);
  RowVec<S> qmin = critic_targets[0].forward(sa2).row(0);
  for (std::size_t j = 1; j < critic_targets.size(); ++j) qmin = qmin.cwiseMin(critic_targets[j].forward(sa2).row(0));
  return batch.reward + gamma * batch.not_terminal.cwiseProduct(qmin);
}

/// TD3 actor objective -mean_b Q_1(s, pi(s)) + penalty * mean_b sum_j
/// max(0, |u_j| - margin)^2, with u the pre-tanh head.
template <typename S>
S td3_actor_loss(const Mlp<S>& actor, const Mlp<S>& critic, const Batch<S>& batch, Out<Vec<S>> grad,
                 S penalty = S(0), S margin = S(0)) {
  MlpCache<S> actor_cache, critic_cache;
  const Mat<S> u = actor.forward(batch.state, grad ? &actor_cache : nullptr);
  const Mat<S> a = u.array().tanh().matrix();
  const Mat<S> q = critic.forward(concat_rows(batch.state, a), grad ? &critic_cache : nullptr);
  const S inv_b = S(1) / static_cast<S>(batch.size());
  const Mat<S> excess = (u.array().abs() - margin).max(S(0)).matrix();
  const S loss = (penalty * excess.squaredNorm() - q.sum()) * inv_b;
  if (grad) {
    const Mat<S> dq = Mat<S>::Constant(1, batch.size(), -inv_b);
    Mat<S> dsa;
    critic.backward(critic_cache, dq, nullptr, &dsa);
    const Mat<S> da = dsa.bottomRows(a.rows());
    const Mat<S> du = da.cwiseProduct((S(1) - a.array().square()).matrix()) +
                      (S(2) * penalty * inv_b) * excess.cwiseProduct(u.array().sign().matrix());
    actor.backward(actor_cache, du, grad);
  }
  return loss;
}

/// Reparameterized sample of a tanh-squashed diagonal Gaussian whose head
/// stacks [mean; log_std].
template <typename S>
struct SquashedSample {
  Mat<S> mean;
  Mat<S> log_std;  // clamped
  Mat<S> clamp_mask;  // 1 where the raw log_std was inside the clamp range
  Mat<S> std;
  Mat<S> eps;
  Mat<S> action;
  RowVec<S> log_prob;
};

/// log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|.
template <typename S>
S log_one_minus_tanh_sq(S u) {
  const S x = S(-2) * u;
  const S softplus = x > S(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return S(2) * (static_cast<S>(std::numbers::ln2) - u - softplus);
}

template <typename S>
SquashedSample<S> squashed_sample(const Mat<S>& head, const Mat<S>& eps) {
  const auto a_dim = head.rows() / 2;
  SquashedSample<S> s;
  s.mean = head.topRows(a_dim);
  const Mat<S> raw = head.bottomRows(a_dim);
  s.log_std = raw.cwiseMax(static_cast<S>(kLogStdMin)).cwiseMin(static_cast<S>(kLogStdMax));
  s.clamp_mask = (raw.array() >= static_cast<S>(kLogStdMin) && raw.array() <= static_cast<S>(kLogStdMax))
                     .template cast<S>()
                     .matrix();
  s.std = s.log_std.array().exp().matrix();
  s.eps = eps;
  const Mat<S> u = s.mean + s.std.cwiseProduct(eps);
  s.action = u.array().tanh().matrix();
  const S half_log_2pi = static_cast<S>(0.5 * std::log(2.0 * std::numbers::pi));
  s.log_prob.resize(head.cols());
  for (Eigen::Index j = 0; j < head.cols(); ++j) {
    S lp = 0;
    for (Eigen::Index i = 0; i < a_dim; ++i)
      lp += -S(0.5) * eps(i, j) * eps(i, j) - s.log_std(i, j) - half_log_2pi - log_one_minus_tanh_sq(u(i, j));
    s.log_prob[j] = lp;
  }
  return s;
}

/// Gradient of a loss with respect to the policy head given its gradients
/// with respect to the squashed action and the log-probability.
template <typename S>
Mat<S> squashed_backward(const SquashedSample<S>& s, const Mat<S>& d_action, const RowVec<S>& d_logp) {
  const auto a_dim = s.mean.rows();
  const auto cols = s.mean.cols();
  Mat<S> dhead(2 * a_dim, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < a_dim; ++i) {
      const S a = s.action(i, j);
      // d logp / du = 2 tanh(u) from the squashing correction
      const S du = d_action(i, j) * (S(1) - a * a) + d_logp[j] * S(2) * a;
      dhead(i, j) = du;
      dhead(a_dim + i, j) = s.clamp_mask(i, j) * (du * s.std(i, j) * s.eps(i, j) - d_logp[j]);
    }
  }
  return dhead;
}

/// Soft target y = r + gamma * mask * (min_{j in subset} Q'_j(s', a') - alpha log pi(a'|s')).
template <typename S>
RowVec<S> soft_target(const Mlp<S>& actor, const std::vector<Mlp<S>>& critic_targets, const std::vector<int>& subset,
                      const Batch<S>& batch, const Mat<S>& eps, S alpha, S gamma) {
  const auto sample = squashed_sample(actor.forward(batch.next_state), eps);
  const Mat<S> sa2 = concat_rows(batch.next_state, sample.action);
  RowVec<S> qmin = critic_targets[subset[0]].forward(sa2).row(0);
  for (std::size_t k = 1; k < subset.size(); ++k)
    qmin = qmin.cwiseMin(critic_targets[subset[k]].forward(sa2).row(0));
  return batch.reward + gamma * batch.not_terminal.cwiseProduct(qmin - alpha * sample.log_prob);
}

enum class CriticReduce { min, mean };

/// Soft actor objective mean_b(alpha log pi(a|s) - R_i Q_i(s, a)), R = min
/// or mean over the critics. The per-sample log-probabilities are returned
/// through `log_prob_out` for the temperature update.
template <typename S>
S soft_actor_loss(const Mlp<S>& actor, const std::vector<Mlp<S>>& critics, CriticReduce reduce, const Batch<S>& batch,
                  const Mat<S>& eps, S alpha, Out<Vec<S>> grad, Out<RowVec<S>> log_prob_out = nullptr) {
  MlpCache<S> actor_cache;
  const auto sample = squashed_sample(actor.forward(batch.state, grad ? &actor_cache : nullptr), eps);
  const Mat<S> sa = concat_rows(batch.state, sample.action);
  const auto n = critics.size();
  const auto b = batch.size();
  std::vector<MlpCache<S>> caches(n);
  Mat<S> qs(static_cast<Eigen::Index>(n), b);
  for (std::size_t i = 0; i < n; ++i) qs.row(i) = critics[i].forward(sa, grad ? &caches[i] : nullptr).row(0);

  RowVec<S> qred(b);
  std::vector<int> argmin(b, 0);
  if (reduce == CriticReduce::min) {
    for (Eigen::Index j = 0; j < b; ++j) {
      Eigen::Index best = 0;
      for (Eigen::Index i = 1; i < qs.rows(); ++i)
        if (qs(i, j) < qs(best, j)) best = i;
      argmin[j] = static_cast<int>(best);
      qred[j] = qs(best, j);
    }
  } else {
    qred = qs.colwise().sum() / static_cast<S>(n);
  }
  const S inv_b = S(1) / static_cast<S>(b);
  const S loss = (alpha * sample.log_prob - qred).sum() * inv_b;
  if (log_prob_out) *log_prob_out = sample.log_prob;

  if (grad) {
    Mat<S> d_action = Mat<S>::Zero(sample.action.rows(), b);
    for (std::size_t i = 0; i < n; ++i) {
      Mat<S> dq = Mat<S>::Zero(1, b);
      bool any = false;
      for (Eigen::Index j = 0; j < b; ++j) {
        if (reduce == CriticReduce::mean) {
          dq(0, j) = -inv_b / static_cast<S>(n);
          any = true;
        } else if (argmin[j] == static_cast<int>(i)) {
          dq(0, j) = -inv_b;
          any = true;
        }
      }
      if (!any) continue;
      Mat<S> dsa;
      critics[i].backward(caches[i], dq, nullptr, &dsa);
      d_action += dsa.bottomRows(d_action.rows());
    }
    const RowVec<S> d_logp = RowVec<S>::Constant(b, alpha * inv_b);
    actor.backward(actor_cache, squashed_backward(sample, d_action, d_logp), grad);
  }
  return loss;
}

/// Temperature objective -mean_b(log_alpha * (log pi + target_entropy)),
/// returning the gradient with respect to log_alpha through `grad`.
template <typename S>
S temperature_loss(S log_alpha, const RowVec<S>& log_prob, S target_entropy, Out<S> grad) {
  const S mean_term = (log_prob.array() + target_entropy).mean();
  if (grad) *grad = -mean_term;
  return -log_alpha * mean_term;
}

}  // namespace realant::rl
