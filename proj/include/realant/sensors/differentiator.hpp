#pragma once

#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

namespace realant::sensors {

/// Antisymmetric coefficients c_1..c_M of Holoborodko's smooth noise-robust
/// central differentiator of odd length W = 2M + 1, exact on polynomials up
/// to degree 2:
///
///   f'(0) ~ (1/h) * sum_k c_k (f_k - f_-k)
///   c_k = (C(2m, m-k+1) - C(2m, m-k-1)) / 2^(2m+1),  m = (W-3)/2
///
/// W = 7 gives (5, 4, 1) / 32. W = 3 degenerates to the plain central
/// difference (1/2).
inline std::vector<double> holoborodko_coefficients(int window) {
  if (window < 3 || window % 2 == 0) throw std::invalid_argument("differentiator window must be odd and >= 3");
  const int half = (window - 1) / 2;
  if (window == 3) return {0.5};
  const int m = (window - 3) / 2;
  auto binom = [](int n, int k) -> double {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
  };
  const double scale = static_cast<double>(std::uint64_t{1} << (2 * m + 1));
  std::vector<double> c(half);
  for (int k = 1; k <= half; ++k) c[k - 1] = (binom(2 * m, m - k + 1) - binom(2 * m, m - k - 1)) / scale;
  return c;
}

/// Sum of squared full-stencil coefficients (white-noise variance gain, in
/// units of sigma^2 / h^2).
inline double noise_gain(const std::vector<double>& half_coefficients) {
  double g = 0.0;
  for (double c : half_coefficients) g += 2.0 * c * c;
  return g;
}

/// Streaming differentiator over the last W samples of a channel. The
/// estimate refers to the window center, (W-1)/2 samples in the past.
class Differentiator {
 public:
  Differentiator(int window, double step) : coeffs_(holoborodko_coefficients(window)), window_(window), step_(step) {}

  int window() const { return window_; }
  double step() const { return step_; }
  bool warm() const { return static_cast<int>(samples_.size()) == window_; }

  /// Adds a sample and returns the derivative estimate, or 0 while the
  /// window is still filling.
  double push(double value) {
    samples_.push_back(value);
    if (static_cast<int>(samples_.size()) > window_) samples_.pop_front();
    return estimate();
  }

  double estimate() const {
    if (!warm()) return 0.0;
    const int center = (window_ - 1) / 2;
    double acc = 0.0;
    for (int k = 1; k <= center; ++k) acc += coeffs_[k - 1] * (samples_[center + k] - samples_[center - k]);
    return acc / step_;
  }

  void clear() { samples_.clear(); }

 private:
  std::vector<double> coeffs_;
  int window_;
  double step_;
  std::deque<double> samples_;
};

}  // namespace realant::sensors
