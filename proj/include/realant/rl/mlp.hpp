#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace realant::rl {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Layer widths of a fully connected ReLU network. With `dense` set, every
/// hidden layer after the first also sees the raw network input,
/// concatenated after the previous layer's activations.
struct MlpShape {
  int input_dim = 0;
  int output_dim = 0;
  int hidden = 256;
  int hidden_layers = 3;
  bool dense = true;

  int num_layers() const { return hidden_layers + 1; }

  /// Input columns of layer l (0-based; the last layer is the output head).
  int layer_input(int l) const {
    if (l == 0) return input_dim;
    if (l == hidden_layers) return hidden;
    return hidden + (dense ? input_dim : 0);
  }
  int layer_output(int l) const { return l == hidden_layers ? output_dim : hidden; }
  bool takes_raw_input(int l) const { return l == 0 || (dense && l < hidden_layers); }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (int l = 0; l < num_layers(); ++l)
      n += static_cast<std::size_t>(layer_output(l)) * (layer_input(l) + 1);
    return n;
  }

  bool operator==(const MlpShape&) const = default;

  void validate() const {
    if (input_dim < 1 || output_dim < 1 || hidden < 1 || hidden_layers < 1)
      throw ShapeError("network dimensions must be positive");
  }
};

/// Offsets of one layer inside the flat parameter vector. The weight block
/// is column-major (out x in), followed by the bias.
struct LayerSlot {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int rows = 0;
  int cols = 0;
};

inline std::vector<LayerSlot> layer_slots(const MlpShape& shape) {
  std::vector<LayerSlot> slots;
  std::size_t off = 0;
  for (int l = 0; l < shape.num_layers(); ++l) {
    LayerSlot s;
    s.rows = shape.layer_output(l);
    s.cols = shape.layer_input(l);
    s.weight = off;
    off += static_cast<std::size_t>(s.rows) * s.cols;
    s.bias = off;
    off += s.rows;
    slots.push_back(s);
  }
  return slots;
}

/// Activations kept from a forward pass for the backward pass.
template <typename S>
struct MlpCache {
  Mat<S> input;
  std::vector<Mat<S>> hidden;  // post-ReLU activations of each hidden layer
};

/// Dense-connection MLP over a flat parameter vector. Batches are stored
/// as columns.
template <typename S>
class Mlp {
 public:
  using MatS = Mat<S>;
  using VecS = Vec<S>;
  using WeightMap = Eigen::Map<MatS>;
  using ConstWeightMap = Eigen::Map<const MatS>;
  using BiasMap = Eigen::Map<VecS>;
  using ConstBiasMap = Eigen::Map<const VecS>;

  Mlp() = default;
  explicit Mlp(const MlpShape& shape) : shape_(shape) {
    shape.validate();
    slots_ = layer_slots(shape);
    params_ = VecS::Zero(static_cast<Eigen::Index>(shape.num_params()));
  }

  const MlpShape& shape() const { return shape_; }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }
  VecS& params() { return params_; }
  const VecS& params() const { return params_; }
  const LayerSlot& slot(int l) const { return slots_[l]; }

  /// Fixed per-input multipliers applied before the first layer and the
  /// dense skips. Empty means identity.
  void set_input_scale(VecS scale) {
    if (scale.size() != 0 && scale.size() != shape_.input_dim) throw ShapeError("input scale width mismatch");
    input_scale_ = std::move(scale);
  }
  const VecS& input_scale() const { return input_scale_; }

  WeightMap weight(int l) { return WeightMap(params_.data() + slots_[l].weight, slots_[l].rows, slots_[l].cols); }
  ConstWeightMap weight(int l) const {
    return ConstWeightMap(params_.data() + slots_[l].weight, slots_[l].rows, slots_[l].cols);
  }
  BiasMap bias(int l) { return BiasMap(params_.data() + slots_[l].bias, slots_[l].rows); }
  ConstBiasMap bias(int l) const { return ConstBiasMap(params_.data() + slots_[l].bias, slots_[l].rows); }

  /// Fan-in uniform initialization; the output layer is scaled by
  /// `output_scale`.
  template <typename Rng>
  void initialize(Rng& rng, S output_scale = S(1)) {
    for (int l = 0; l < shape_.num_layers(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(slots_[l].cols));
      std::uniform_real_distribution<double> u(-bound, bound);
      const S scale = l == shape_.hidden_layers ? output_scale : S(1);
      auto w = weight(l);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<S>(u(rng)) * scale;
      auto b = bias(l);
      for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = static_cast<S>(u(rng)) * scale;
    }
  }

  MatS forward(const MatS& raw, MlpCache<S>* cache = nullptr) const {
    if (raw.rows() != shape_.input_dim)
      throw ShapeError("network input has " + std::to_string(raw.rows()) + " rows, expected " +
                       std::to_string(shape_.input_dim));
    MatS scaled;
    if (input_scale_.size() != 0) scaled = raw.array().colwise() * input_scale_.array();
    const MatS& x = input_scale_.size() != 0 ? scaled : raw;
    const int n_hidden = shape_.hidden_layers;
    MatS act;
    if (cache) {
      cache->input = x;
      cache->hidden.resize(n_hidden);
    }
    for (int l = 0; l < n_hidden; ++l) {
      MatS z;
      const auto w = weight(l);
      if (l == 0) {
        z.noalias() = w * x;
      } else {
        z.noalias() = w.leftCols(shape_.hidden) * act;
        if (shape_.dense) z.noalias() += w.rightCols(shape_.input_dim) * x;
      }
      z.colwise() += bias(l);
      act = z.cwiseMax(S(0));
      if (cache) cache->hidden[l] = act;
    }
    MatS out;
    out.noalias() = weight(n_hidden) * act;
    out.colwise() += bias(n_hidden);
    return out;
  }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
  /// A null `grad` skips parameter gradients; a non-null `dinput` receives
  /// d(loss)/d(input).
  void backward(const MlpCache<S>& cache, const MatS& dout, VecS* grad, MatS* dinput = nullptr) const {
    const int n_hidden = shape_.hidden_layers;
    const MatS& x = cache.input;
    auto gw = [&](int l) { return WeightMap(grad->data() + slots_[l].weight, slots_[l].rows, slots_[l].cols); };
    auto gb = [&](int l) { return BiasMap(grad->data() + slots_[l].bias, slots_[l].rows); };

    MatS dx;
    if (dinput) dx = MatS::Zero(x.rows(), x.cols());

    if (grad) {
      gw(n_hidden).noalias() += dout * cache.hidden[n_hidden - 1].transpose();
      gb(n_hidden) += dout.rowwise().sum();
    }
    MatS dact;
    dact.noalias() = weight(n_hidden).transpose() * dout;

    for (int l = n_hidden - 1; l >= 0; --l) {
      const MatS dz = (cache.hidden[l].array() > S(0)).select(dact, S(0));
      const auto w = weight(l);
      if (grad) gb(l) += dz.rowwise().sum();
      if (l == 0) {
        if (grad) gw(0).noalias() += dz * x.transpose();
        if (dinput) dx.noalias() += w.transpose() * dz;
        break;
      }
      if (grad) gw(l).leftCols(shape_.hidden).noalias() += dz * cache.hidden[l - 1].transpose();
      if (shape_.dense) {
        if (grad) gw(l).rightCols(shape_.input_dim).noalias() += dz * x.transpose();
        if (dinput) dx.noalias() += w.rightCols(shape_.input_dim).transpose() * dz;
      }
      dact.noalias() = w.leftCols(shape_.hidden).transpose() * dz;
    }
    if (dinput) {
      if (input_scale_.size() != 0) dx.array().colwise() *= input_scale_.array();
      *dinput = std::move(dx);
    }
  }

 private:
  MlpShape shape_;
  std::vector<LayerSlot> slots_;
  VecS params_;
  VecS input_scale_;
};

/// Polyak averaging target <- (1 - tau) target + tau online, written as an
/// increment so equal networks stay bit-identical.
template <typename S>
void polyak_update(Mlp<S>& target, const Mlp<S>& online, S tau) {
  target.params() += tau * (online.params() - target.params());
}

}  // namespace realant::rl
