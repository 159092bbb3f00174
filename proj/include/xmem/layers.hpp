#ifndef XMEM_LAYERS_HPP_
#define XMEM_LAYERS_HPP_

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "xmem/tensor.hpp"

namespace xmem {

enum class Activation { identity, relu, tanh, leaky_relu };

inline constexpr double kLeakySlope = 0.2;

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

/// One trainable weight group. `weights` is fan_in x fan_out.
template <typename T>
struct ParamGroup {
  std::string name;
  Tensor<T> weights;
  std::vector<T> bias;

  size_t fan_in() const { return weights.rows(); }
  size_t fan_out() const { return weights.cols(); }
  size_t count() const { return weights.size() + bias.size(); }

  ParamGroup zeros_like() const {
    return {name, Tensor<T>(weights.rows(), weights.cols()), std::vector<T>(bias.size(), T(0))};
  }
  bool operator==(const ParamGroup&) const = default;
};

/// x * W + b, broadcast over rows.
template <typename T>
Tensor<T> affine_forward(const Tensor<T>& x, const ParamGroup<T>& p) {
  if (x.cols() != p.weights.rows()) {
    throw DimensionError("affine_forward(" + p.name + "): input " + x.shape_str() +
                         " vs weights " + p.weights.shape_str());
  }
  Tensor<T> out = matmul(x, p.weights);
  for (size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (size_t j = 0; j < r.size(); ++j) r[j] += p.bias[j];
  }
  return out;
}

/// Accumulates dW, db into `grad` and returns dL/dx.
template <typename T>
Tensor<T> affine_backward(const Tensor<T>& x, const ParamGroup<T>& p, const Tensor<T>& dy,
                          ParamGroup<T>& grad) {
  if (dy.rows() != x.rows() || dy.cols() != p.weights.cols()) {
    throw DimensionError("affine_backward(" + p.name + "): upstream " + dy.shape_str() +
                         " vs output [" + std::to_string(x.rows()) + "x" +
                         std::to_string(p.weights.cols()) + "]");
  }
  add_inplace(grad.weights, matmul_tn(x, dy));
  for (size_t i = 0; i < dy.rows(); ++i) {
    auto r = dy.row(i);
    for (size_t j = 0; j < r.size(); ++j) grad.bias[j] += r[j];
  }
  return matmul_nt(dy, p.weights);
}

template <typename T>
T activate(T z, Activation a) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z > T(0) ? z : T(0);
    case Activation::tanh: return std::tanh(z);
    case Activation::leaky_relu: return z > T(0) ? z : T(kLeakySlope) * z;
  }
  return z;
}

// Derivative given pre-activation z and output y.
template <typename T>
T activation_slope(T z, T y, Activation a) {
  switch (a) {
    case Activation::identity: return T(1);
    case Activation::relu: return z > T(0) ? T(1) : T(0);
    case Activation::tanh: return T(1) - y * y;
    case Activation::leaky_relu: return z > T(0) ? T(1) : T(kLeakySlope);
  }
  return T(1);
}

inline bool is_piecewise_linear(Activation a) { return a != Activation::tanh; }

template <typename T>
Tensor<T> activation_forward(const Tensor<T>& x, Activation a) {
  check_finite(x, activation_name(a));
  Tensor<T> out(x.rows(), x.cols());
  auto in = x.values();
  auto o = out.values();
  for (size_t i = 0; i < in.size(); ++i) o[i] = activate(in[i], a);
  return out;
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& pre, const Tensor<T>& post, const Tensor<T>& dy,
                              Activation a) {
  if (!pre.same_shape(dy) || !post.same_shape(dy)) {
    throw DimensionError(std::string("activation_backward(") + activation_name(a) + "): " +
                         pre.shape_str() + " vs " + dy.shape_str());
  }
  Tensor<T> dx(dy.rows(), dy.cols());
  auto z = pre.values();
  auto y = post.values();
  auto g = dy.values();
  auto o = dx.values();
  for (size_t i = 0; i < g.size(); ++i) o[i] = g[i] * activation_slope(z[i], y[i], a);
  return dx;
}

template <typename T>
struct Layer {
  ParamGroup<T> params;
  Activation act = Activation::identity;
  bool operator==(const Layer&) const = default;
};

template <typename T>
struct MlpCache {
  std::vector<Tensor<T>> inputs;  // input of each layer
  std::vector<Tensor<T>> pre;     // pre-activation of each layer
  std::vector<Tensor<T>> post;    // output of each layer
};

/// A stack of affine + activation layers.
template <typename T>
struct Mlp {
  std::vector<Layer<T>> layers;

  // Glorot-uniform weights, zero bias. layer names are `<prefix>.<index>`.
  static Mlp build(const std::string& prefix, const std::vector<size_t>& dims,
                   const std::vector<Activation>& acts, std::mt19937_64& rng);

  size_t in_dim() const { return layers.empty() ? 0 : layers.front().params.fan_in(); }
  size_t out_dim() const { return layers.empty() ? 0 : layers.back().params.fan_out(); }
  size_t count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.params.count();
    return n;
  }

  Mlp zeros_like() const {
    Mlp z;
    for (const auto& l : layers) z.layers.push_back({l.params.zeros_like(), l.act});
    return z;
  }

  Tensor<T> forward(const Tensor<T>& x, MlpCache<T>* cache = nullptr) const;

  /// Accumulates parameter gradients into `grad` (same structure); returns dL/dx.
  Tensor<T> backward(const MlpCache<T>& cache, const Tensor<T>& dy, Mlp& grad) const;

  /// Per-row gradient of a scalar-output network w.r.t. its input. Requires
  /// piecewise-linear activations so that the result is locally constant in x.
  Tensor<T> input_gradient(const MlpCache<T>& cache) const;

  /// Accumulates into `grad` the parameter gradient of
  /// sum_rows <upstream_row, input_gradient_row>. Biases receive zero.
  void input_gradient_backward(const MlpCache<T>& cache, const Tensor<T>& upstream,
                               Mlp& grad) const;

  bool operator==(const Mlp&) const = default;
};

template <typename T>
Mlp<T> Mlp<T>::build(const std::string& prefix, const std::vector<size_t>& dims,
                     const std::vector<Activation>& acts, std::mt19937_64& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1) {
    throw DimensionError("Mlp::build(" + prefix + "): need one activation per layer");
  }
  Mlp m;
  for (size_t k = 0; k + 1 < dims.size(); ++k) {
    const size_t fan_in = dims[k], fan_out = dims[k + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor<T> w(fan_in, fan_out);
    for (auto& v : w.values()) v = static_cast<T>(u(rng));
    m.layers.push_back(
        {ParamGroup<T>{prefix + "." + std::to_string(k), std::move(w), std::vector<T>(fan_out, T(0))},
         acts[k]});
  }
  return m;
}

template <typename T>
Tensor<T> Mlp<T>::forward(const Tensor<T>& x, MlpCache<T>* cache) const {
  if (cache) *cache = {};
  Tensor<T> h = x;
  for (const auto& l : layers) {
    Tensor<T> z = affine_forward(h, l.params);
    check_finite(z, l.params.name.c_str());
    Tensor<T> y = activation_forward(z, l.act);
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(std::move(z));
      cache->post.push_back(y);
    }
    h = std::move(y);
  }
  return h;
}

template <typename T>
Tensor<T> Mlp<T>::backward(const MlpCache<T>& cache, const Tensor<T>& dy, Mlp& grad) const {
  Tensor<T> g = dy;
  for (size_t k = layers.size(); k-- > 0;) {
    const auto& l = layers[k];
    Tensor<T> dz = activation_backward(cache.pre[k], cache.post[k], g, l.act);
    g = affine_backward(cache.inputs[k], l.params, dz, grad.layers[k].params);
  }
  return g;
}

template <typename T>
Tensor<T> Mlp<T>::input_gradient(const MlpCache<T>& cache) const {
  if (out_dim() != 1) throw DimensionError("input_gradient: network output must be scalar");
  for (const auto& l : layers) {
    if (!is_piecewise_linear(l.act)) {
      throw std::invalid_argument("input_gradient: " + l.params.name + " is not piecewise linear");
    }
  }
  const size_t rows = cache.inputs.front().rows();
  // b = d out / d z_k, walked from the top down; slopes are 0/1/0.2 constants.
  Tensor<T> b(rows, 1, T(1));
  for (size_t k = layers.size(); k-- > 0;) {
    const auto& l = layers[k];
    Tensor<T> dz = activation_backward(cache.pre[k], cache.post[k], b, l.act);
    b = matmul_nt(dz, l.params.weights);
  }
  return b;
}

template <typename T>
void Mlp<T>::input_gradient_backward(const MlpCache<T>& cache, const Tensor<T>& upstream,
                                     Mlp& grad) const {
  const size_t rows = upstream.rows();
  const size_t n = layers.size();
  // down[k] = d out / d z_k per row (includes the slope of layer k).
  std::vector<Tensor<T>> down(n);
  Tensor<T> b(rows, 1, T(1));
  for (size_t k = n; k-- > 0;) {
    down[k] = activation_backward(cache.pre[k], cache.post[k], b, layers[k].act);
    b = matmul_nt(down[k], layers[k].params.weights);
  }
  // up = upstream pushed forward through the linear parts with fixed slopes;
  // dphi/dW_k = sum_rows up_k (outer) down_k.
  Tensor<T> up = upstream;
  for (size_t k = 0; k < n; ++k) {
    add_inplace(grad.layers[k].params.weights, matmul_tn(up, down[k]));
    if (k + 1 == n) break;
    Tensor<T> z = matmul(up, layers[k].params.weights);
    up =activation_backward(cache.pre[k], cache.post[k], z, layers[k].act);
  }
}

}  // namespace xmem

#endif  // XMEM_LAYERS_HPP_
