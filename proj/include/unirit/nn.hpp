#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "unirit/error.hpp"

namespace unirit::nn {

template <typename Scalar>
using Tensor2D = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

enum class Activation { relu, leaky_relu, tanh, none };

inline constexpr double kLeakySlope = 0.01;

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

enum class Pooling { max, mean };

std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& name);

template <typename Scalar>
void apply_activation(Activation act, Tensor2D<Scalar>& z) {
  switch (act) {
    case Activation::relu:
      z = z.cwiseMax(Scalar(0));
      break;
    case Activation::leaky_relu:
      z = z.unaryExpr([](Scalar v) { return v > Scalar(0) ? v : Scalar(kLeakySlope) * v; });
      break;
    case Activation::tanh:
      z = z.array().tanh().matrix();
      break;
    case Activation::none:
      break;
  }
}

/// Multiplies `grad` in place by the activation derivative, given pre-activation `z` and output `a`.
template <typename Scalar>
void activation_backward(Activation act, const Tensor2D<Scalar>& z, const Tensor2D<Scalar>& a, Tensor2D<Scalar>& grad) {
  switch (act) {
    case Activation::relu:
      grad.array() = (z.array() > Scalar(0)).select(grad.array(), Scalar(0));
      break;
    case Activation::leaky_relu:
      grad.array() = (z.array() > Scalar(0)).select(grad.array(), Scalar(kLeakySlope) * grad.array());
      break;
    case Activation::tanh:
      grad.array() *= (Scalar(1) - a.array().square());
      break;
    case Activation::none:
      break;
  }
}

/// Affine layer y = act(x W + b); W is fan_in x fan_out.
template <typename Scalar>
struct DenseLayer {
  Tensor2D<Scalar> weight;
  Tensor2D<Scalar> bias;  // 1 x fan_out
  Activation activation = Activation::none;

  Eigen::Index fan_in() const { return weight.rows(); }
  Eigen::Index fan_out() const { return weight.cols(); }
};

/// Per-layer gradients shaped like an MlpStack.
template <typename Scalar>
struct StackGradients {
  std::vector<Tensor2D<Scalar>> weight;
  std::vector<Tensor2D<Scalar>> bias;

  void set_zero() {
    for (auto& w : weight) w.setZero();
    for (auto& b : bias) b.setZero();
  }
};

/// Activations retained by a forward pass for the matching backward pass.
template <typename Scalar>
struct ForwardCache {
  std::vector<Tensor2D<Scalar>> inputs;       // input of each layer
  std::vector<Tensor2D<Scalar>> preact;       // x W + b of each layer
  std::vector<Tensor2D<Scalar>> outputs;      // act(preact) of each layer
  bool empty() const { return inputs.empty(); }
};

/// Stack of dense layers applied row-wise (one row per point or per sample).
template <typename Scalar>
class MlpStack {
 public:
  MlpStack() = default;

  /// widths = {in, h1, ..., out}; activations has widths.size()-1 entries.
  MlpStack(const std::vector<int>& widths, const std::vector<Activation>& activations, std::uint64_t seed) {
    if (widths.size() < 2) throw ValidationError("MlpStack needs at least an input and an output width");
    if (activations.size() != widths.size() - 1)
      throw ValidationError("MlpStack: one activation per layer required");
    for (int w : widths)
      if (w <= 0) throw ValidationError("MlpStack: widths must be positive");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      DenseLayer<Scalar> layer;
      layer.weight.resize(widths[l], widths[l + 1]);
      layer.bias = Tensor2D<Scalar>::Zero(1, widths[l + 1]);
      layer.activation = activations[l];
      // Glorot-uniform from a per-layer stream, drawn in double
      std::mt19937_64 rng(seed * 1000003ULL + l);
      const double limit = std::sqrt(6.0 / (widths[l] + widths[l + 1]));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = static_cast<Scalar>(dist(rng));
      layers_.push_back(std::move(layer));
    }
  }

  explicit MlpStack(std::vector<DenseLayer<Scalar>> layers) : layers_(std::move(layers)) {
    for (std::size_t l = 1; l < layers_.size(); ++l)
      if (layers_[l].fan_in() != layers_[l - 1].fan_out())
        throw ValidationError("MlpStack: inconsistent consecutive widths");
  }

  std::size_t depth() const { return layers_.size(); }
  Eigen::Index input_width() const { return layers_.front().fan_in(); }
  Eigen::Index output_width() const { return layers_.back().fan_out(); }
  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }
  std::vector<DenseLayer<Scalar>>& layers() { return layers_; }

  std::vector<int> widths() const {
    std::vector<int> w{static_cast<int>(input_width())};
    for (const auto& l : layers_) w.push_back(static_cast<int>(l.fan_out()));
    return w;
  }

  /// Zeroes the last layer so the stack outputs exactly zero.
  void zero_output_layer() {
    layers_.back().weight.setZero();
    layers_.back().bias.setZero();
  }

  Tensor2D<Scalar> forward(const Tensor2D<Scalar>& input, ForwardCache<Scalar>* cache = nullptr) const {
    if (input.cols() != input_width())
      throw ValidationError("MlpStack::forward: input has " + std::to_string(input.cols()) + " columns, expected " +
                            std::to_string(input_width()));
    if (cache) *cache = ForwardCache<Scalar>{};
    Tensor2D<Scalar> x = input;
    for (const auto& layer : layers_) {
      Tensor2D<Scalar> z = x * layer.weight;
      z.rowwise() += layer.bias.row(0);
      if (cache) {
        cache->inputs.push_back(std::move(x));
        cache->preact.push_back(z);
      }
      apply_activation(layer.activation, z);
      if (cache) cache->outputs.push_back(z);
      x = std::move(z);
    }
    return x;
  }

  /// Accumulates parameter gradients into `grads` and returns d(loss)/d(input).
  Tensor2D<Scalar> backward(const ForwardCache<Scalar>& cache, const Tensor2D<Scalar>& upstream,
                            StackGradients<Scalar>& grads) const {
    check_cache(cache, upstream);
    return backward_layers(cache, upstream, grads, 0);
  }

  /// Row i of the logical input is [left_i, shared, right_i]; `shared` is
  /// never replicated in memory.
  struct BroadcastInput {
    Tensor2D<Scalar> left;
    RowVector<Scalar> shared;
    Tensor2D<Scalar> right;
  };

  struct BroadcastGradient {
    Tensor2D<Scalar> left;
    RowVector<Scalar> shared;
    Tensor2D<Scalar> right;
  };

  Tensor2D<Scalar> forward_broadcast(const BroadcastInput& in, ForwardCache<Scalar>* cache = nullptr) const {
    const Eigen::Index a = in.left.cols(), b = in.shared.cols(), c = in.right.cols();
    if (a + b + c != input_width() || in.left.rows() != in.right.rows())
      throw ValidationError("MlpStack::forward_broadcast: input blocks do not match the first layer");
    const auto& first = layers_.front();
    Tensor2D<Scalar> z = in.left * first.weight.topRows(a) + in.right * first.weight.bottomRows(c);
    const RowVector<Scalar> row = in.shared * first.weight.middleRows(a, b) + first.bias.row(0);
    z.rowwise() += row;
    if (cache) {
      *cache = ForwardCache<Scalar>{};
      cache->inputs.emplace_back();  // layer-0 input lives in `in`
      cache->preact.push_back(z);
    }
    apply_activation(first.activation, z);
    if (cache) cache->outputs.push_back(z);
    Tensor2D<Scalar> x = std::move(z);
    for (std::size_t k = 1; k < layers_.size(); ++k) {
      const auto& layer = layers_[k];
      Tensor2D<Scalar> zk = x * layer.weight;
      zk.rowwise() += layer.bias.row(0);
      if (cache) {
        cache->inputs.push_back(std::move(x));
        cache->preact.push_back(zk);
      }
      apply_activation(layer.activation, zk);
      if (cache) cache->outputs.push_back(zk);
      x = std::move(zk);
    }
    return x;
  }

  BroadcastGradient backward_broadcast(const ForwardCache<Scalar>& cache, const BroadcastInput& in,
                                       const Tensor2D<Scalar>& upstream, StackGradients<Scalar>& grads) const {
    check_cache(cache, upstream);
    Tensor2D<Scalar> g = backward_layers(cache, upstream, grads, 1);
    const auto& first = layers_.front();
    activation_backward(first.activation, cache.preact[0], cache.outputs[0], g);
    const Eigen::Index a = in.left.cols(), b = in.shared.cols(), c = in.right.cols();
    const RowVector<Scalar> gsum = g.colwise().sum();
    grads.weight[0].topRows(a).noalias() += in.left.transpose() * g;
    grads.weight[0].middleRows(a, b).noalias() += in.shared.transpose() * gsum;
    grads.weight[0].bottomRows(c).noalias() += in.right.transpose() * g;
    grads.bias[0] += gsum;
    BroadcastGradient out;
    out.left = g * first.weight.topRows(a).transpose();
    out.shared = gsum * first.weight.middleRows(a, b).transpose();
    out.right = g * first.weight.bottomRows(c).transpose();
    return out;
  }

  StackGradients<Scalar> zero_gradients() const {
    StackGradients<Scalar> g;
    for (const auto& l : layers_) {
      g.weight.push_back(Tensor2D<Scalar>::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Tensor2D<Scalar>::Zero(1, l.bias.cols()));
    }
    return g;
  }

  void collect_parameters(std::vector<Tensor2D<Scalar>*>& out) {
    for (auto& l : layers_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }

  template <typename Other>
  MlpStack<Other> cast() const {
    std::vector<DenseLayer<Other>> layers;
    for (const auto& l : layers_)
      layers.push_back({l.weight.template cast<Other>(), l.bias.template cast<Other>(), l.activation});
    return MlpStack<Other>(std::move(layers));
  }

 private:
  void check_cache(const ForwardCache<Scalar>& cache, const Tensor2D<Scalar>& upstream) const {
    if (cache.empty() || cache.inputs.size() != layers_.size())
      throw ValidationError("MlpStack::backward: no forward cache for this stack");
    if (upstream.cols() != output_width() || upstream.rows() != cache.outputs.back().rows())
      throw ValidationError("MlpStack::backward: upstream gradient shape mismatch");
  }

  // Runs layers last..stop in reverse; returns the gradient w.r.t. the input of layer `stop`.
  Tensor2D<Scalar> backward_layers(const ForwardCache<Scalar>& cache, const Tensor2D<Scalar>& upstream,
                                   StackGradients<Scalar>& grads, std::size_t stop) const {
    Tensor2D<Scalar> g = upstream;
    for (std::size_t k = layers_.size(); k-- > stop;) {
      const auto& layer = layers_[k];
      activation_backward(layer.activation, cache.preact[k], cache.outputs[k], g);
      grads.weight[k].noalias() += cache.inputs[k].transpose() * g;
      grads.bias[k] += g.colwise().sum();
      g = (g * layer.weight.transpose()).eval();
    }
    return g;
  }

  std::vector<DenseLayer<Scalar>> layers_;
};

template <typename Scalar>
void collect_gradients(StackGradients<Scalar>& g, std::vector<Tensor2D<Scalar>*>& out) {
  for (std::size_t k = 0; k < g.weight.size(); ++k) {
    out.push_back(&g.weight[k]);
    out.push_back(&g.bias[k]);
  }
}

/// Column-wise reduction of an N x C feature block to 1 x C.
template <typename Scalar>
struct PoolResult {
  RowVector<Scalar> value;
  std::vector<Eigen::Index> argmax;  // max pooling only
  Eigen::Index rows = 0;
  Pooling kind = Pooling::max;
};

template <typename Scalar>
PoolResult<Scalar> pool(const Tensor2D<Scalar>& features, Pooling kind) {
  if (features.rows() < 1) throw ValidationError("pool: empty feature block");
  PoolResult<Scalar> r;
  r.rows = features.rows();
  r.kind = kind;
  if (kind == Pooling::mean) {
    r.value = features.colwise().mean();
    return r;
  }
  r.value.resize(features.cols());
  r.argmax.resize(static_cast<std::size_t>(features.cols()));
  for (Eigen::Index c = 0; c < features.cols(); ++c) {
    Eigen::Index best = 0;
    Scalar v = features(0, c);
    for (Eigen::Index i = 1; i < features.rows(); ++i) {
      if (features(i, c) > v) {
        v = features(i, c);
        best = i;
      }
    }
    r.value(c) = v;
    r.argmax[static_cast<std::size_t>(c)] = best;
  }
  return r;
}

template <typename Scalar>
PoolResult<Scalar> pool_max(const Tensor2D<Scalar>& features) {
  return pool<Scalar>(features, Pooling::max);
}

/// Routes a pooled-row gradient back onto the N x C feature block.
template <typename Scalar>
Tensor2D<Scalar> pool_backward(const PoolResult<Scalar>& pooled, const RowVector<Scalar>& grad) {
  const Eigen::Index cols = pooled.value.cols();
  if (grad.cols() != cols) throw ValidationError("pool_backward: gradient width mismatch");
  if (pooled.kind == Pooling::mean) {
    Tensor2D<Scalar> out(pooled.rows, cols);
    out.rowwise() = grad / static_cast<Scalar>(pooled.rows);
    return out;
  }
  Tensor2D<Scalar> out = Tensor2D<Scalar>::Zero(pooled.rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) out(pooled.argmax[static_cast<std::size_t>(c)], c) = grad(c);
  return out;
}

/// Adam hyper-parameters and moment estimates, one moment pair per parameter tensor.
template <typename Scalar>
struct AdamState {
  long step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Tensor2D<Scalar>> m;
  std::vector<Tensor2D<Scalar>> v;
};

/// One bias-corrected Adam update. Moments are allocated on the first call.
template <typename Scalar>
void adam_step(std::span<Tensor2D<Scalar>* const> params, std::span<Tensor2D<Scalar>* const> grads,
               AdamState<Scalar>& state) {
  if (params.size() != grads.size()) throw ValidationError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty() && state.step == 0) {
    for (auto* p : params) {
      state.m.push_back(Tensor2D<Scalar>::Zero(p->rows(), p->cols()));
      state.v.push_back(Tensor2D<Scalar>::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw ValidationError("adam_step: state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->rows() != grads[k]->rows() || params[k]->cols() != grads[k]->cols() ||
        state.m[k].rows() != params[k]->rows() || state.m[k].cols() != params[k]->cols())
      throw ValidationError("adam_step: shape mismatch at parameter " + std::to_string(k));
  }
  ++state.step;
  const Scalar b1 = static_cast<Scalar>(state.beta1);
  const Scalar b2 = static_cast<Scalar>(state.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(state.beta1, static_cast<double>(state.step)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(state.beta2, static_cast<double>(state.step)));
  const Scalar lr = static_cast<Scalar>(state.lr);
  const Scalar eps = static_cast<Scalar>(state.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto& g = *grads[k];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    params[k]->array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

}  // namespace unirit::nn
