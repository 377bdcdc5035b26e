// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "bcu/data.hpp"
#include "bcu/network.hpp"
#include "bcu/rng.hpp"

namespace bcu::test {

template <typename Scalar>
Tensor<Scalar> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

template <typename Scalar>
Network<Scalar> random_network(const std::string& arch, std::uint64_t seed) {
  Network<Scalar> net(parse_architecture(arch));
  Rng rng(seed);
  init_fan_in_uniform(net, rng);
  for (auto& p : net.params()) {
    for (Index i = 0; i < p.bias.size(); ++i) p.bias[i] = static_cast<Scalar>(rng.uniform(-0.2, 0.2));
  }
  return net;
}

/// Labeled dataset of random images in [0, 1].
inline Dataset random_dataset(Index n, const Shape& sample, int classes, std::uint64_t seed) {
  Rng rng(seed);
  Shape shape = sample;
  shape.insert(shape.begin(), n);
  Dataset d;
  d.images = random_tensor<float>(shape, rng, 0.0, 1.0);
  d.labels = std::vector<int>(static_cast<std::size_t>(n));
  for (auto& y : *d.labels) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  d.num_classes = classes;
  d.name = "random";
  return d;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("bcu-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Straight-line double-precision evaluation, independent of the im2col
/// engine. Returns the input of every layer plus the final output.
inline std::vector<std::vector<double>> reference_forward(const Network<float>& net, const std::vector<double>& x0) {
  const Architecture& arch = net.architecture();
  std::vector<std::vector<double>> acts{x0};
  Shape shape = arch.input_shape;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const std::vector<double>& x = acts.back();
    std::vector<double> y;
    std::visit(
        [&](const auto& layer) {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, Conv2D>) {
            const auto& p = net.params()[*arch.weight_slot(i)];
            const Index c = shape[0], h = shape[1], w = shape[2], k = layer.kernel;
            const Index oh = (h + 2 * layer.padding - k) / layer.stride + 1;
            const Index ow = (w + 2 * layer.padding - k) / layer.stride + 1;
            y.assign(static_cast<std::size_t>(layer.out_channels * oh * ow), 0.0);
            for (Index o = 0; o < layer.out_channels; ++o)
              for (Index r = 0; r < oh; ++r)
                for (Index s = 0; s < ow; ++s) {
                  double acc = p.bias[o];
                  for (Index ci = 0; ci < c; ++ci)
                    for (Index u = 0; u < k; ++u)
                      for (Index v = 0; v < k; ++v) {
                        const Index ii = r * layer.stride + u - layer.padding;
                        const Index jj = s * layer.stride + v - layer.padding;
                        if (ii < 0 || jj < 0 || ii >= h || jj >= w) continue;
                        acc += static_cast<double>(p.weight[((o * c + ci) * k + u) * k + v]) *
                               x[static_cast<std::size_t>((ci * h + ii) * w + jj)];
                      }
                  y[static_cast<std::size_t>((o * oh + r) * ow + s)] = acc;
                }
            shape = {layer.out_channels, oh, ow};
          } else if constexpr (std::is_same_v<T, Dense>) {
            const auto& p = net.params()[*arch.weight_slot(i)];
            y.assign(static_cast<std::size_t>(layer.out_features), 0.0);
            for (Index o = 0; o < layer.out_features; ++o) {
              double acc = p.bias[o];
              for (Index j = 0; j < layer.in_features; ++j) {
                acc += static_cast<double>(p.weight[o * layer.in_features + j]) * x[static_cast<std::size_t>(j)];
              }
              y[static_cast<std::size_t>(o)] = acc;
            }
            shape = {layer.out_features};
          } else if constexpr (std::is_same_v<T, ReLU>) {
            for (double v : x) y.push_back(v > 0.0 ? v : 0.0);
          } else if constexpr (std::is_same_v<T, MaxPool2D>) {
            const Index c = shape[0], h = shape[1], w = shape[2];
            const Index oh = (h - layer.kernel) / layer.stride + 1, ow = (w - layer.kernel) / layer.stride + 1;
            for (Index ci = 0; ci < c; ++ci)
              for (Index r = 0; r < oh; ++r)
                for (Index s = 0; s < ow; ++s) {
                  double best = -INFINITY;
                  for (Index u = 0; u < layer.kernel; ++u)
                    for (Index v = 0; v < layer.kernel; ++v) {
                      best = std::max(best, x[static_cast<std::size_t>(
                                                (ci * h + r * layer.stride + u) * w + s * layer.stride + v)]);
                    }
                  y.push_back(best);
                }
            shape = {c, oh, ow};
          } else {
            y = x;
            shape = {shape_size(shape)};
          }
        },
        arch.layers[i]);
    acts.push_back(std::move(y));
  }
  return acts;
}

}  // namespace bcu::test
