#pragma once

#include <cmath>
#include <cstdint>

#include "realant/rl/mlp.hpp"

namespace realant::rl {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over one flat parameter vector.
template <typename S>
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(Vec<S>::Zero(n)), v_(Vec<S>::Zero(n)) {}

  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }
  const Vec<S>& first_moment() const { return m_; }
  const Vec<S>& second_moment() const { return v_; }

  void step(Vec<S>& params, const Vec<S>& grad) {
    ++t_;
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    m_ = b1 * m_ + (S(1) - b1) * grad;
    v_ = b2 * v_ + (S(1) - b2) * grad.cwiseProduct(grad);
    const S c1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const S c2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const S lr = static_cast<S>(cfg_.lr), eps = static_cast<S>(cfg_.eps);
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
  }

 private:
  AdamConfig cfg_;
  Vec<S> m_;
  Vec<S> v_;
  std::int64_t t_ = 0;
};

}  // namespace realant::rl
