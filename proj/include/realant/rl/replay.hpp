#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "realant/rl/mlp.hpp"
#include "realant/tasks/env.hpp"

namespace realant::rl {

/// One environment step on stacked states.
struct Transition {
  std::vector<double> state;
  tasks::Action action = tasks::Action::Zero();
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;      // last step of the episode (time limit or divergence)
  bool diverged = false;  // the only truly terminal outcome
};

/// Columns of a sampled minibatch.
template <typename S>
struct Batch {
  Mat<S> state;
  Mat<S> action;
  RowVec<S> reward;
  Mat<S> next_state;
  RowVec<S> not_terminal;

  int size() const { return static_cast<int>(state.cols()); }
};

/// FIFO ring of transitions with uniform sampling with replacement.
template <typename S>
class ReplayBuffer {
 public:
  ReplayBuffer(int state_dim, int action_dim, std::size_t capacity)
      : state_dim_(state_dim), action_dim_(action_dim), capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
    states_.resize(state_dim, static_cast<Eigen::Index>(capacity));
    next_states_.resize(state_dim, static_cast<Eigen::Index>(capacity));
    actions_.resize(action_dim, static_cast<Eigen::Index>(capacity));
    rewards_.resize(static_cast<Eigen::Index>(capacity));
    not_terminal_.resize(static_cast<Eigen::Index>(capacity));
  }

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return size_; }
  std::uint64_t total_inserted() const { return inserted_; }

  void add(const Transition& t) {
    if (static_cast<int>(t.state.size()) != state_dim_ || static_cast<int>(t.next_state.size()) != state_dim_)
      throw ShapeError("transition state width does not match the replay buffer");
    const auto col = static_cast<Eigen::Index>(head_);
    for (int i = 0; i < state_dim_; ++i) {
      states_(i, col) = static_cast<S>(t.state[i]);
      next_states_(i, col) = static_cast<S>(t.next_state[i]);
    }
    for (int i = 0; i < action_dim_; ++i) actions_(i, col) = static_cast<S>(t.action[i]);
    rewards_[col] = static_cast<S>(t.reward);
    not_terminal_[col] = t.diverged ? S(0) : S(1);
    head_ = (head_ + 1) % capacity_;
    if (size_ < capacity_) ++size_;
    ++inserted_;
  }

  /// Transition at age-ordered position i (0 = oldest still stored).
  Transition at(std::size_t i) const {
    if (i >= size_) throw std::out_of_range("replay index out of range");
    const std::size_t oldest = size_ < capacity_ ? 0 : head_;
    const auto col = static_cast<Eigen::Index>((oldest + i) % capacity_);
    Transition t;
    t.state.resize(state_dim_);
    t.next_state.resize(state_dim_);
    for (int k = 0; k < state_dim_; ++k) {
      t.state[k] = states_(k, col);
      t.next_state[k] = next_states_(k, col);
    }
    for (int k = 0; k < action_dim_; ++k) t.action[k] = actions_(k, col);
    t.reward = rewards_[col];
    t.diverged = not_terminal_[col] == S(0);
    return t;
  }

  template <typename Rng>
  Batch<S> sample(int batch_size, Rng& rng) const {
    if (size_ == 0) throw std::logic_error("cannot sample from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
    Batch<S> b;
    b.state.resize(state_dim_, batch_size);
    b.next_state.resize(state_dim_, batch_size);
    b.action.resize(action_dim_, batch_size);
    b.reward.resize(batch_size);
    b.not_terminal.resize(batch_size);
    for (int j = 0; j < batch_size; ++j) {
      const auto col = static_cast<Eigen::Index>(pick(rng));
      b.state.col(j) = states_.col(col);
      b.next_state.col(j) = next_states_.col(col);
      b.action.col(j) = actions_.col(col);
      b.reward[j] = rewards_[col];
      b.not_terminal[j] = not_terminal_[col];
    }
    return b;
  }

 private:
  int state_dim_;
  int action_dim_;
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  std::uint64_t inserted_ = 0;
  Mat<S> states_;
  Mat<S> next_states_;
  Mat<S> actions_;
  Vec<S> rewards_;
  Vec<S> not_terminal_;
};

}  // namespace realant::rl
