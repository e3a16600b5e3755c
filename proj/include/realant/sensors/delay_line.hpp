#pragma once

#include <cstddef>
#include <deque>

namespace realant::sensors {

/// Fixed integer-step delay. The output at step t is the input at step
/// t - d; before d inputs have been seen the first input is held.
template <typename T>
class DelayLine {
 public:
  explicit DelayLine(std::size_t delay = 0) : delay_(delay) {}

  std::size_t delay() const { return delay_; }

  T push_pop(const T& value) {
    if (queue_.empty()) {
      // hold-first: pre-fill so the first input is repeated during warmup
      queue_.assign(delay_, value);
    }
    queue_.push_back(value);
    T out = queue_.front();
    queue_.pop_front();
    return out;
  }

  void clear() { queue_.clear(); }

 private:
  std::size_t delay_;
  std::deque<T> queue_;
};

}  // namespace realant::sensors
