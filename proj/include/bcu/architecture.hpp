// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bcu/tensor.hpp"

namespace bcu {

struct Conv2D {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 3;
  Index stride = 1;
  Index padding = 0;
};

struct Dense {
  Index in_features = 0;
  Index out_features = 0;
};

struct ReLU {};

struct MaxPool2D {
  Index kernel = 2;
  Index stride = 2;
};

struct Flatten {};

using LayerSpec = std::variant<Conv2D, Dense, ReLU, MaxPool2D, Flatten>;

std::string layer_kind_name(const LayerSpec& layer);

/// A fully shape-inferred layer stack. `id` is the canonical descriptor string
/// and round-trips through parse_architecture().
///
/// Descriptor grammar: `CxHxW:tok,tok,...` where each token is one of
///   c<out>k<k>[s<stride>][p<pad>]   Conv2D
///   d<out>                          Dense
///   m<k>[s<stride>]                 MaxPool2D (stride defaults to k)
///   r                               ReLU
///   f                               Flatten
/// Registered aliases (e.g. `small_cnn`) expand to a descriptor.
struct Architecture {
  std::string id;
  Shape input_shape;                    // per-sample C x H x W (or F for vector input)
  std::vector<LayerSpec> layers;
  std::vector<Shape> output_shapes;     // per-sample output shape of each layer
  std::vector<std::size_t> weight_layers;  // indices into `layers`, network order l = 1..L
  Index num_classes = 0;

  std::size_t weight_layer_count() const { return weight_layers.size(); }
  /// Position of `layer` in weight_layers, if it carries weights.
  std::optional<std::size_t> weight_slot(std::size_t layer) const;
  std::string weight_layer_name(std::size_t slot) const;

  friend bool operator==(const Architecture& a, const Architecture& b) { return a.id == b.id; }
};

/// Parses a descriptor or alias. Throws ConfigError on malformed input or
/// inconsistent shapes.
Architecture parse_architecture(std::string_view descriptor);

/// Descriptor for a registered alias, or nullopt.
std::optional<std::string> architecture_alias(std::string_view name);

}  // namespace bcu
