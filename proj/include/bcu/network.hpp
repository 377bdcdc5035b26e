// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "bcu/architecture.hpp"
#include "bcu/rng.hpp"
#include "bcu/tensor.hpp"

namespace bcu {

/// Weight collection W_l of one weight-bearing layer. The bias is part of the
/// collection so that per-layer re-initialization covers it too.
template <typename Scalar>
struct LayerParams {
  Tensor<Scalar> weight;  // conv: Cout x Cin x K x K, dense: Cout x Cin
  Tensor<Scalar> bias;    // Cout

  Index size() const { return weight.size() + bias.size(); }
};

/// One entry per weight-bearing layer, in network order. Used for weights,
/// gradients and optimizer buffers alike.
template <typename Scalar>
using ParamList = std::vector<LayerParams<Scalar>>;

template <typename Scalar>
class Network {
 public:
  Network() = default;

  explicit Network(Architecture arch) : arch_(std::move(arch)) {
    params_.reserve(arch_.weight_layer_count());
    for (std::size_t layer : arch_.weight_layers) {
      std::visit(
          [&](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, Conv2D>) {
              params_.push_back({Tensor<Scalar>({l.out_channels, l.in_channels, l.kernel, l.kernel}),
                                 Tensor<Scalar>({l.out_channels})});
            } else if constexpr (std::is_same_v<T, Dense>) {
              params_.push_back(
                  {Tensor<Scalar>({l.out_features, l.in_features}), Tensor<Scalar>({l.out_features})});
            }
          },
          arch_.layers[layer]);
    }
  }

  const Architecture& architecture() const { return arch_; }
  Index num_classes() const { return arch_.num_classes; }
  std::size_t weight_layer_count() const { return params_.size(); }

  ParamList<Scalar>& params() { return params_; }
  const ParamList<Scalar>& params() const { return params_; }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  /// Provenance and training metadata; persisted as the model file's JSON trailer.
  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  template <typename To>
  Network<To> cast() const {
    Network<To> out(arch_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.params()[i].weight = params_[i].weight.template cast<To>();
      out.params()[i].bias = params_[i].bias.template cast<To>();
    }
    out.metadata() = metadata_;
    return out;
  }

  /// Bit-wise equality of architecture and every weight.
  bool same_weights(const Network& other) const {
    if (!(arch_ == other.arch_) || params_.size() != other.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!(params_[i].weight == other.params_[i].weight) || !(params_[i].bias == other.params_[i].bias)) {
        return false;
      }
    }
    return true;
  }

 private:
  Architecture arch_;
  ParamList<Scalar> params_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

/// Zero-valued parameter list mirroring `net`.
template <typename Scalar>
ParamList<Scalar> zeros_like(const ParamList<Scalar>& params) {
  ParamList<Scalar> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({Tensor<Scalar>(p.weight.shape()), Tensor<Scalar>(p.bias.shape())});
  return out;
}

/// Fan-in scaled uniform initialization: weights U(-sqrt(6/fan_in), +...),
/// biases U(-1/sqrt(fan_in), +...). Parameters are drawn layer by layer,
/// weights before bias, in row-major order.
template <typename Scalar>
void init_fan_in_uniform(Network<Scalar>& net, Rng& rng) {
  for (auto& p : net.params()) {
    const Index fan_in = p.weight.size() / p.weight.dim(0);
    const double wb = std::sqrt(6.0 / static_cast<double>(fan_in));
    const double bb = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Index i = 0; i < p.weight.size(); ++i) p.weight[i] = static_cast<Scalar>(rng.uniform(-wb, wb));
    for (Index i = 0; i < p.bias.size(); ++i) p.bias[i] = static_cast<Scalar>(rng.uniform(-bb, bb));
  }
}

/// Activations recorded by a training-mode forward pass and consumed by backward().
template <typename Scalar>
struct Tape {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  std::vector<Tensor<Scalar>> inputs;             // input seen by each layer
  std::vector<Matrix> columns;                    // im2col buffers of conv layers
  std::vector<std::vector<Index>> argmax;         // winning input offset per pool output
  Shape output_shape;

  bool recorded() const { return !inputs.empty(); }
  void clear() { *this = Tape{}; }
};

namespace detail {

template <typename Scalar>
void im2col(const Tensor<Scalar>& x, const Conv2D& conv, Index out_h, Index out_w,
            typename Tape<Scalar>::Matrix& cols) {
  const Index batch = x.dim(0), in_h = x.dim(2), in_w = x.dim(3);
  const Index k = conv.kernel, positions = out_h * out_w;
  cols.setZero(conv.in_channels * k * k, batch * positions);
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < conv.in_channels; ++c) {
      const Scalar* plane = x.data() + (b * conv.in_channels + c) * in_h * in_w;
      for (Index ki = 0; ki < k; ++ki) {
        for (Index kj = 0; kj < k; ++kj) {
          const Index row = (c * k + ki) * k + kj;
          for (Index oh = 0; oh < out_h; ++oh) {
            const Index ih = oh * conv.stride - conv.padding + ki;
            if (ih < 0 || ih >= in_h) continue;
            for (Index ow = 0; ow < out_w; ++ow) {
              const Index iw = ow * conv.stride - conv.padding + kj;
              if (iw < 0 || iw >= in_w) continue;
              cols(row, b * positions + oh * out_w + ow) = plane[ih * in_w + iw];
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const typename Tape<Scalar>::Matrix& cols, const Conv2D& conv, Index out_h, Index out_w,
            Tensor<Scalar>& dx) {
  const Index batch = dx.dim(0), in_h = dx.dim(2), in_w = dx.dim(3);
  const Index k = conv.kernel, positions = out_h * out_w;
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < conv.in_channels; ++c) {
      Scalar* plane = dx.data() + (b * conv.in_channels + c) * in_h * in_w;
      for (Index ki = 0; ki < k; ++ki) {
        for (Index kj = 0; kj < k; ++kj) {
          const Index row = (c * k + ki) * k + kj;
          for (Index oh = 0; oh < out_h; ++oh) {
            const Index ih = oh * conv.stride - conv.padding + ki;
            if (ih < 0 || ih >= in_h) continue;
            for (Index ow = 0; ow < out_w; ++ow) {
              const Index iw = ow * conv.stride - conv.padding + kj;
              if (iw < 0 || iw >= in_w) continue;
              plane[ih * in_w + iw] += cols(row, b * positions + oh * out_w + ow);
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> conv_forward(const Tensor<Scalar>& x, const Conv2D& conv, const LayerParams<Scalar>& p,
                            const Shape& out_shape, typename Tape<Scalar>::Matrix& cols) {
  const Index batch = x.dim(0), out_h = out_shape[1], out_w = out_shape[2];
  const Index positions = out_h * out_w;
  im2col(x, conv, out_h, out_w, cols);
  const auto w = p.weight.matrix(conv.out_channels);
  typename Tape<Scalar>::Matrix y = w * cols;
  Tensor<Scalar> out({batch, conv.out_channels, out_h, out_w});
  for (Index b = 0; b < batch; ++b) {
    for (Index co = 0; co < conv.out_channels; ++co) {
      Scalar* dst = out.data() + (b * conv.out_channels + co) * positions;
      const Scalar bias = p.bias[co];
      for (Index pos = 0; pos < positions; ++pos) dst[pos] = y(co, b * positions + pos) + bias;
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& x, const Conv2D& conv,
                             const LayerParams<Scalar>& p, const typename Tape<Scalar>::Matrix& cols,
                             LayerParams<Scalar>& grad) {
  const Index batch = grad_out.dim(0), out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  const Index positions = out_h * out_w;
  typename Tape<Scalar>::Matrix g(conv.out_channels, batch * positions);
  for (Index b = 0; b < batch; ++b) {
    for (Index co = 0; co < conv.out_channels; ++co) {
      const Scalar* src = grad_out.data() + (b * conv.out_channels + co) * positions;
      for (Index pos = 0; pos < positions; ++pos) g(co, b * positions + pos) = src[pos];
    }
  }
  grad.weight.matrix(conv.out_channels).noalias() = g * cols.transpose();
  grad.bias.values() = g.rowwise().sum();
  const typename Tape<Scalar>::Matrix dcols = p.weight.matrix(conv.out_channels).transpose() * g;
  Tensor<Scalar> dx(x.shape());
  col2im(dcols, conv, out_h, out_w, dx);
  return dx;
}

template <typename Scalar>
Tensor<Scalar> dense_forward(const Tensor<Scalar>& x, const Dense& dense, const LayerParams<Scalar>& p) {
  const Index batch = x.dim(0);
  Tensor<Scalar> out({batch, dense.out_features});
  auto y = out.matrix(batch);
  y.noalias() = x.matrix(batch) * p.weight.matrix(dense.out_features).transpose();
  y.rowwise() += p.bias.values().transpose();
  return out;
}

template <typename Scalar>
Tensor<Scalar> dense_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& x, const Dense& dense,
                              const LayerParams<Scalar>& p, LayerParams<Scalar>& grad) {
  const Index batch = x.dim(0);
  const auto g = grad_out.matrix(batch);
  grad.weight.matrix(dense.out_features).noalias() = g.transpose() * x.matrix(batch);
  grad.bias.values() = g.colwise().sum().transpose();
  Tensor<Scalar> dx(x.shape());
  dx.matrix(batch).noalias() = g * p.weight.matrix(dense.out_features);
  return dx;
}

template <typename Scalar>
Tensor<Scalar> maxpool_forward(const Tensor<Scalar>& x, const MaxPool2D& pool, const Shape& out_shape,
                               std::vector<Index>* argmax) {
  const Index batch = x.dim(0), channels = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  const Index out_h = out_shape[1], out_w = out_shape[2];
  Tensor<Scalar> out({batch, channels, out_h, out_w});
  if (argmax) argmax->assign(static_cast<std::size_t>(out.size()), 0);
  Index o = 0;
  for (Index bc = 0; bc < batch * channels; ++bc) {
    const Index base = bc * in_h * in_w;
    for (Index oh = 0; oh < out_h; ++oh) {
      for (Index ow = 0; ow < out_w; ++ow, ++o) {
        Index best = base + (oh * pool.stride) * in_w + ow * pool.stride;
        for (Index ki = 0; ki < pool.kernel; ++ki) {
          for (Index kj = 0; kj < pool.kernel; ++kj) {
            const Index at = base + (oh * pool.stride + ki) * in_w + ow * pool.stride + kj;
            if (x[at] > x[best]) best = at;  // first maximum wins ties
          }
        }
        out[o] = x[best];
        if (argmax) (*argmax)[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Runs the network on a batch shaped B x input_shape. When `tape` is non-null
/// the activations needed by backward() are recorded into it.
/// Throws ConfigError on a shape mismatch and NumericError on non-finite logits.
template <typename Scalar>
Tensor<Scalar> forward(const Network<Scalar>& net, const Tensor<Scalar>& batch, Tape<Scalar>* tape = nullptr) {
  const Architecture& arch = net.architecture();
  Shape expected = arch.input_shape;
  if (batch.rank() != static_cast<Index>(expected.size()) + 1 || batch.dim(0) < 1 ||
      !std::equal(expected.begin(), expected.end(), batch.shape().begin() + 1)) {
    throw ConfigError("batch shape " + shape_string(batch.shape()) + " does not match network input " +
                      shape_string(expected) + " with a leading batch dimension");
  }
  const Index n = batch.dim(0);
  if (tape) {
    tape->clear();
    tape->inputs.reserve(arch.layers.size());
    tape->columns.resize(arch.layers.size());
    tape->argmax.resize(arch.layers.size());
  }

  typename Tape<Scalar>::Matrix scratch;
  Tensor<Scalar> x = batch;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    Shape out_shape = arch.output_shapes[i];
    out_shape.insert(out_shape.begin(), n);
    Tensor<Scalar> y = std::visit(
        [&](const auto& layer) -> Tensor<Scalar> {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, Conv2D>) {
            auto& cols = tape ? tape->columns[i] : scratch;
            return detail::conv_forward(x, layer, net.params()[*arch.weight_slot(i)], arch.output_shapes[i], cols);
          } else if constexpr (std::is_same_v<T, Dense>) {
            return detail::dense_forward(x, layer, net.params()[*arch.weight_slot(i)]);
          } else if constexpr (std::is_same_v<T, ReLU>) {
            return Tensor<Scalar>(x.shape(), x.values().cwiseMax(Scalar(0)));
          } else if constexpr (std::is_same_v<T, MaxPool2D>) {
            return detail::maxpool_forward(x, layer, arch.output_shapes[i], tape ? &tape->argmax[i] : nullptr);
          } else {
            return x.reshaped(out_shape);
          }
        },
        arch.layers[i]);
    if (tape) tape->inputs.push_back(std::move(x));
    x = std::move(y);
  }
  if (!x.all_finite()) throw NumericError("forward pass produced non-finite logits");
  if (tape) tape->output_shape = x.shape();
  return x;
}

template <typename Scalar>
struct Gradients {
  ParamList<Scalar> params;  // mirrors Network::params()
  Tensor<Scalar> input;      // d loss / d batch
};

/// Back-propagates d loss / d logits through the activations of the last
/// forward() recorded in `tape`. Throws StateError when nothing was recorded.
template <typename Scalar>
Gradients<Scalar> backward(const Network<Scalar>& net, const Tape<Scalar>& tape, const Tensor<Scalar>& grad_logits) {
  if (!tape.recorded()) throw StateError("backward called without a recorded forward pass");
  if (grad_logits.shape() != tape.output_shape) {
    throw ConfigError("gradient shape " + shape_string(grad_logits.shape()) + " does not match logits " +
                      shape_string(tape.output_shape));
  }
  const Architecture& arch = net.architecture();
  Gradients<Scalar> grads{zeros_like(net.params()), {}};
  Tensor<Scalar> g = grad_logits;
  for (std::size_t ii = arch.layers.size(); ii-- > 0;) {
    const Tensor<Scalar>& x = tape.inputs[ii];
    g = std::visit(
        [&](const auto& layer) -> Tensor<Scalar> {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, Conv2D>) {
            const std::size_t slot = *arch.weight_slot(ii);
            return detail::conv_backward(g, x, layer, net.params()[slot], tape.columns[ii], grads.params[slot]);
          } else if constexpr (std::is_same_v<T, Dense>) {
            const std::size_t slot = *arch.weight_slot(ii);
            return detail::dense_backward(g, x, layer, net.params()[slot], grads.params[slot]);
          } else if constexpr (std::is_same_v<T, ReLU>) {
            return Tensor<Scalar>(x.shape(), (x.values().array() > Scalar(0)).select(g.values().array(), Scalar(0)).matrix());
          } else if constexpr (std::is_same_v<T, MaxPool2D>) {
            Tensor<Scalar> dx(x.shape());
            const auto& winners = tape.argmax[ii];
            for (Index o = 0; o < g.size(); ++o) dx[winners[static_cast<std::size_t>(o)]] += g[o];
            return dx;
          } else {
            return g.reshaped(x.shape());
          }
        },
        arch.layers[ii]);
  }
  grads.input = std::move(g);
  return grads;
}

}  // namespace bcu
