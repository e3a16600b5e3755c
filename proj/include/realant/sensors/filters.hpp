#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <stdexcept>
#include <vector>

#include "realant/tasks/observation.hpp"

namespace realant::sensors {

/// First-order exponential smoother y <- a*x + (1-a)*y, seeded with the
/// first sample.
class Lowpass {
 public:
  explicit Lowpass(double alpha = 1.0) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("lowpass alpha must be in (0, 1]");
  }

  double push(double x) {
    if (!primed_) {
      y_ = x;
      primed_ = true;
    } else if (alpha_ == 1.0) {
      y_ = x;
    } else {
      y_ = alpha_ * x + (1.0 - alpha_) * y_;
    }
    return y_;
  }

  void clear() { primed_ = false; }

 private:
  double alpha_;
  double y_ = 0.0;
  bool primed_ = false;
};

/// Zero-mean Gaussian tracking noise on pose channels.
class NoiseModel {
 public:
  NoiseModel(double sigma_xyz = 0.0, double sigma_rpy = 0.0, std::uint64_t seed = 0)
      : sigma_xyz_(sigma_xyz), sigma_rpy_(sigma_rpy), rng_(seed) {
    if (sigma_xyz < 0.0 || sigma_rpy < 0.0) throw std::invalid_argument("noise sigma must be non-negative");
  }

  void reseed(std::uint64_t seed) {
    rng_.seed(seed);
    normal_.reset();
  }

  bool enabled() const { return sigma_xyz_ > 0.0 || sigma_rpy_ > 0.0; }
  double sigma_xyz() const { return sigma_xyz_; }
  double sigma_rpy() const { return sigma_rpy_; }

  double draw(double sigma) { return sigma * normal_(rng_); }

  /// Adds noise to (x, y, z, roll, pitch, yaw) in that order.
  void apply(double (&pose)[6]) {
    if (!enabled()) return;
    for (int i = 0; i < 3; ++i) pose[i] += draw(sigma_xyz_);
    for (int i = 3; i < 6; ++i) pose[i] += draw(sigma_rpy_);
  }

 private:
  double sigma_xyz_;
  double sigma_rpy_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Concatenation of the K most recent observations, newest first.
using StackedState = std::vector<double>;

class FrameStack {
 public:
  explicit FrameStack(int k = 4) : k_(k) {
    if (k < 1) throw std::invalid_argument("stack size must be >= 1");
  }

  int size() const { return k_; }
  int dim() const { return k_ * tasks::Observation::kDim; }

  StackedState push(const tasks::Observation& obs) {
    if (frames_.empty()) frames_.assign(k_, obs);
    frames_.push_front(obs);
    frames_.pop_back();
    return current();
  }

  StackedState current() const {
    StackedState out;
    out.reserve(dim());
    for (const auto& f : frames_) out.insert(out.end(), f.values.begin(), f.values.end());
    return out;
  }

  void clear() { frames_.clear(); }

 private:
  int k_;
  std::deque<tasks::Observation> frames_;
};

}  // namespace realant::sensors
