#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "realant/rl/adam.hpp"
#include "realant/rl/losses.hpp"
#include "realant/rl/mlp.hpp"
#include "realant/tasks/observation.hpp"
#include "realant/rl/replay.hpp"
#include "realant/tasks/env.hpp"

namespace realant::rl {

enum class Algorithm : std::uint8_t { td3 = 0, sac = 1, redq = 2 };

inline std::string_view algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::td3: return "td3";
    case Algorithm::sac: return "sac";
    case Algorithm::redq: return "redq";
  }
  return "unknown";
}

inline Algorithm parse_algorithm(std::string_view name) {
  for (Algorithm a : {Algorithm::td3, Algorithm::sac, Algorithm::redq})
    if (algorithm_name(a) == name) return a;
  throw std::invalid_argument("unknown algorithm '" + std::string(name) + "' (expected td3, sac or redq)");
}

inline bool stochastic_policy(Algorithm a) { return a != Algorithm::td3; }

class ConfigurationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AlgoConfig {
  Algorithm algorithm = Algorithm::td3;
  double gamma = 0.99;
  double tau = 0.005;
  int updates_per_episode = 200;
  int batch_size = 256;
  int n_critics = 2;
  int subset_size = 2;  // M, critics in the target minimum
  int policy_delay = 2;
  double target_noise = 0.2;
  double target_noise_clip = 0.5;
  double explore_noise = 0.3;
  double preact_penalty = 0.0;  // TD3 actor hinge penalty on the pre-tanh head
  double preact_margin = 2.5;
  double lr = 3e-4;
  double target_entropy = -8.0;
  double initial_alpha = 0.2;
  int hidden = 256;
  int hidden_layers = 3;
  bool dense = true;
  std::size_t replay_capacity = 100000;
  int warmup_episodes = 10;

  static AlgoConfig defaults(Algorithm a) {
    AlgoConfig c;
    c.algorithm = a;
    switch (a) {
      case Algorithm::td3: break;
      case Algorithm::sac:
        c.policy_delay = 1;
        break;
      case Algorithm::redq:
        c.updates_per_episode = 2000;
        c.n_critics = 10;
        c.subset_size = 2;
        c.policy_delay = 10;
        break;
    }
    return c;
  }

  void validate() const {
    if (n_critics < 1) throw ConfigurationError("n_critics must be >= 1");
    if (subset_size < 1 || subset_size > n_critics)
      throw ConfigurationError("subset size M = " + std::to_string(subset_size) + " must be in [1, N = " +
                               std::to_string(n_critics) + "]");
    if (algorithm == Algorithm::td3 && n_critics != 2) throw ConfigurationError("td3 uses exactly two critics");
    if (batch_size < 1) throw ConfigurationError("batch_size must be >= 1");
    if (updates_per_episode < 0) throw ConfigurationError("updates_per_episode must be >= 0");
    if (policy_delay < 1) throw ConfigurationError("policy_delay must be >= 1");
    if (warmup_episodes < 0) throw ConfigurationError("warmup_episodes must be >= 0");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigurationError("gamma must be in [0, 1]");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigurationError("tau must be in [0, 1]");
    if (lr < 0.0) throw ConfigurationError("learning rate must be >= 0");
    if (preact_penalty < 0.0 || preact_margin < 0.0) throw ConfigurationError("pre-tanh penalty and margin must be >= 0");
    if (initial_alpha <= 0.0) throw ConfigurationError("initial_alpha must be positive");
  }

  MlpShape actor_shape(int state_dim) const {
    const int out = tasks::kActionDim * (stochastic_policy(algorithm) ? 2 : 1);
    return {state_dim, out, hidden, hidden_layers, dense};
  }
  MlpShape critic_shape(int state_dim) const {
    return {state_dim + tasks::kActionDim, 1, hidden, hidden_layers, dense};
  }
};

enum class ActMode : std::uint8_t { random = 0, explore = 1, exploit = 2 };

inline std::string_view act_mode_name(ActMode m) {
  switch (m) {
    case ActMode::random: return "random";
    case ActMode::explore: return "explore";
    case ActMode::exploit: return "exploit";
  }
  return "unknown";
}

/// The acting half of an agent: enough to run rollouts anywhere.
struct Policy {
  Algorithm algorithm = Algorithm::td3;
  Mlp<float> actor;

  template <typename Rng>
  tasks::Action act(const std::vector<double>& state, ActMode mode, double explore_noise, Rng& rng) const {
    tasks::Action a;
    if (mode == ActMode::random) {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (int i = 0; i < tasks::kActionDim; ++i) a[i] = u(rng);
      return a;
    }
    Mat<float> x(static_cast<Eigen::Index>(state.size()), 1);
    for (std::size_t i = 0; i < state.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = static_cast<float>(state[i]);
    const Mat<float> head = actor.forward(x);
    std::normal_distribution<double> normal(0.0, 1.0);
    if (!stochastic_policy(algorithm)) {
      for (int i = 0; i < tasks::kActionDim; ++i) {
        double v = std::tanh(static_cast<double>(head(i, 0)));
        if (mode == ActMode::explore) v = std::clamp(v + explore_noise * normal(rng), -1.0, 1.0);
        a[i] = v;
      }
      return a;
    }
    for (int i = 0; i < tasks::kActionDim; ++i) {
      const double mean = head(i, 0);
      double u = mean;
      if (mode == ActMode::explore) {
        const double log_std = std::clamp(static_cast<double>(head(tasks::kActionDim + i, 0)), kLogStdMin, kLogStdMax);
        u += std::exp(log_std) * normal(rng);
      }
      a[i] = std::tanh(u);
    }
    return a;
  }
};

/// Networks of an actor-critic learner.
template <typename S>
struct Networks {
  Mlp<S> actor;
  Mlp<S> actor_target;  // TD3 only
  std::vector<Mlp<S>> critics;
  std::vector<Mlp<S>> critic_targets;
  S log_alpha = 0;
};

struct UpdateStats {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  bool actor_updated = false;
  bool skipped = false;  // replay too small
};

inline constexpr float kJointVelocityInputScale = 0.1f;

/// Network input multipliers for a state of stacked observations followed by
/// `trailing` unscaled inputs: joint velocities shrink to the order of the
/// other channels. Widths that are not whole observation stacks get no
/// scaling.
inline Vec<float> state_input_scale(int state_dim, int trailing = 0) {
  Vec<float> s = Vec<float>::Ones(state_dim + trailing);
  if (state_dim % tasks::Observation::kDim != 0) return s;
  for (int f = 0; f < state_dim; f += tasks::Observation::kDim)
    s.segment(f + tasks::Observation::kJointVelocities, tasks::kActionDim).setConstant(kJointVelocityInputScale);
  return s;
}

/// TD3, SAC and REDQ learners sharing one update loop. SAC and REDQ are the
/// same soft actor-critic with different critic counts, target subsets and
/// actor reductions.
class Agent {
 public:
  Agent(const AlgoConfig& cfg, int state_dim, std::uint64_t seed) : cfg_(cfg), state_dim_(state_dim), rng_(seed) {
    cfg.validate();
    std::mt19937_64 init_rng(seed ^ 0x5DEECE66DULL);
    nets_.actor = Mlp<float>(cfg.actor_shape(state_dim));
    nets_.actor.initialize(init_rng, 0.01f);
    nets_.actor.set_input_scale(state_input_scale(state_dim));
    nets_.actor_target = nets_.actor;
    for (int i = 0; i < cfg.n_critics; ++i) {
      Mlp<float> c(cfg.critic_shape(state_dim));
      c.initialize(init_rng);
      c.set_input_scale(state_input_scale(state_dim, tasks::kActionDim));
      nets_.critics.push_back(c);
    }
    nets_.critic_targets = nets_.critics;
    nets_.log_alpha = static_cast<float>(std::log(cfg.initial_alpha));
    const AdamConfig adam{cfg.lr};
    actor_opt_ = Adam<float>(nets_.actor.num_params(), adam);
    for (const auto& c : nets_.critics) critic_opts_.emplace_back(c.num_params(), adam);
    alpha_opt_ = Adam<float>(1, adam);
  }

  const AlgoConfig& config() const { return cfg_; }
  int state_dim() const { return state_dim_; }
  Networks<float>& networks() { return nets_; }
  const Networks<float>& networks() const { return nets_; }
  std::int64_t updates() const { return updates_; }
  double alpha() const { return std::exp(static_cast<double>(nets_.log_alpha)); }

  Policy policy() const { return Policy{cfg_.algorithm, nets_.actor}; }

  /// Critic subsets drawn so far (REDQ bookkeeping, for reproducibility checks).
  const std::vector<int>& last_subset() const { return last_subset_; }

  UpdateStats update(const ReplayBuffer<float>& buffer) {
    UpdateStats st;
    if (buffer.size() < static_cast<std::size_t>(cfg_.batch_size)) {
      st.skipped = true;
      return st;
    }
    const Batch<float> batch = buffer.sample(cfg_.batch_size, rng_);
    ++updates_;
    if (cfg_.algorithm == Algorithm::td3)
      td3_step(batch, st);
    else
      soft_step(batch, st);
    st.alpha = alpha();
    return st;
  }

 private:
  Mat<float> standard_normal(Eigen::Index rows, Eigen::Index cols) {
    Mat<float> m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<float>(normal_(rng_));
    return m;
  }

  void critic_step(const Batch<float>& batch, const RowVec<float>& y, UpdateStats& st) {
    std::vector<Vec<float>> grads;
    for (const auto& c : nets_.critics) grads.push_back(Vec<float>::Zero(static_cast<Eigen::Index>(c.num_params())));
    st.critic_loss = critic_regression(nets_.critics, batch, y, &grads);
    for (std::size_t i = 0; i < nets_.critics.size(); ++i) critic_opts_[i].step(nets_.critics[i].params(), grads[i]);
  }

  void td3_step(const Batch<float>& batch, UpdateStats& st) {
    const Mat<float> noise = standard_normal(tasks::kActionDim, batch.size());
    const RowVec<float> y =
        td3_target(nets_.actor_target, nets_.critic_targets, batch, noise, static_cast<float>(cfg_.target_noise),
                   static_cast<float>(cfg_.target_noise_clip), static_cast<float>(cfg_.gamma));
    critic_step(batch, y, st);
    if (updates_ % cfg_.policy_delay == 0) {
      Vec<float> g = Vec<float>::Zero(static_cast<Eigen::Index>(nets_.actor.num_params()));
      st.actor_loss = td3_actor_loss(nets_.actor, nets_.critics[0], batch, &g, static_cast<float>(cfg_.preact_penalty),
                                    static_cast<float>(cfg_.preact_margin));
      actor_opt_.step(nets_.actor.params(), g);
      st.actor_updated = true;
      const auto tau = static_cast<float>(cfg_.tau);
      polyak_update(nets_.actor_target, nets_.actor, tau);
      for (std::size_t i = 0; i < nets_.critics.size(); ++i) polyak_update(nets_.critic_targets[i], nets_.critics[i], tau);
    }
  }

  std::vector<int> sample_subset() {
    std::vector<int> all(cfg_.n_critics);
    for (int i = 0; i < cfg_.n_critics; ++i) all[i] = i;
    if (cfg_.subset_size == cfg_.n_critics) return all;
    // partial Fisher-Yates
    for (int i = 0; i < cfg_.subset_size; ++i) {
      std::uniform_int_distribution<int> pick(i, cfg_.n_critics - 1);
      std::swap(all[i], all[pick(rng_)]);
    }
    all.resize(cfg_.subset_size);
    return all;
  }

  void soft_step(const Batch<float>& batch, UpdateStats& st) {
    const float alpha = std::exp(nets_.log_alpha);
    last_subset_ = sample_subset();
    const Mat<float> eps2 = standard_normal(tasks::kActionDim, batch.size());
    const RowVec<float> y = soft_target(nets_.actor, nets_.critic_targets, last_subset_, batch, eps2, alpha,
                                        static_cast<float>(cfg_.gamma));
    critic_step(batch, y, st);
    if (updates_ % cfg_.policy_delay == 0) {
      const Mat<float> eps = standard_normal(tasks::kActionDim, batch.size());
      const CriticReduce reduce = cfg_.algorithm == Algorithm::redq ? CriticReduce::mean : CriticReduce::min;
      Vec<float> g = Vec<float>::Zero(static_cast<Eigen::Index>(nets_.actor.num_params()));
      RowVec<float> logp;
      st.actor_loss = soft_actor_loss(nets_.actor, nets_.critics, reduce, batch, eps, alpha, &g, &logp);
      actor_opt_.step(nets_.actor.params(), g);
      float ga = 0.0f;
      temperature_loss(nets_.log_alpha, logp, static_cast<float>(cfg_.target_entropy), &ga);
      Vec<float> la(1), gla(1);
      la[0] = nets_.log_alpha;
      gla[0] = ga;
      alpha_opt_.step(la, gla);
      nets_.log_alpha = la[0];
      st.actor_updated = true;
    }
    const auto tau = static_cast<float>(cfg_.tau);
    for (std::size_t i = 0; i < nets_.critics.size(); ++i) polyak_update(nets_.critic_targets[i], nets_.critics[i], tau);
  }

  AlgoConfig cfg_;
  int state_dim_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  Networks<float> nets_;
  Adam<float> actor_opt_;
  std::vector<Adam<float>> critic_opts_;
  Adam<float> alpha_opt_;
  std::int64_t updates_ = 0;
  std::vector<int> last_subset_;
};

}  // namespace realant::rl
