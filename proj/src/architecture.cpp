// SPDX-License-Identifier: Apache-2.0
#include "bcu/architecture.hpp"

#include <cctype>
#include <map>
#include <sstream>

namespace bcu {
namespace {

struct Cursor {
  std::string_view text;
  std::size_t pos = 0;

  bool done() const { return pos >= text.size(); }
  char peek() const { return done() ? '\0' : text[pos]; }

  bool consume(char c) {
    if (peek() != c) return false;
    ++pos;
    return true;
  }

  Index number(std::string_view token) {
    const std::size_t start = pos;
    while (!done() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
    if (start == pos) {
      throw ConfigError("architecture token '" + std::string(token) + "': expected a number");
    }
    return std::stoll(std::string(text.substr(start, pos - start)));
  }
};

const std::map<std::string, std::string, std::less<>>& aliases() {
  static const std::map<std::string, std::string, std::less<>> table{
      // Three conv stages then a hidden dense layer and the classifier:
      // five weight-bearing layers, parameter count growing with depth
      // except for the classifier.
      {"small_cnn", "1x28x28:c8k3p1,r,m2,c16k3p1,r,m2,c32k3p1,r,m2,f,d64,r,d10"},
      {"tiny_cnn", "1x28x28:c4k3p1,r,m2,c8k3p1,r,m2,f,d10"},
      {"mlp", "1x28x28:f,d128,r,d10"},
  };
  return table;
}

std::string canonical_token(const LayerSpec& layer) {
  std::ostringstream os;
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv2D>) {
          os << 'c' << l.out_channels << 'k' << l.kernel;
          if (l.stride != 1) os << 's' << l.stride;
          if (l.padding != 0) os << 'p' << l.padding;
        } else if constexpr (std::is_same_v<T, Dense>) {
          os << 'd' << l.out_features;
        } else if constexpr (std::is_same_v<T, MaxPool2D>) {
          os << 'm' << l.kernel;
          if (l.stride != l.kernel) os << 's' << l.stride;
        } else if constexpr (std::is_same_v<T, ReLU>) {
          os << 'r';
        } else {
          os << 'f';
        }
      },
      layer);
  return os.str();
}

}  // namespace

std::string layer_kind_name(const LayerSpec& layer) {
  static constexpr const char* names[] = {"conv2d", "dense", "relu", "maxpool2d", "flatten"};
  return names[layer.index()];
}

std::optional<std::size_t> Architecture::weight_slot(std::size_t layer) const {
  for (std::size_t i = 0; i < weight_layers.size(); ++i) {
    if (weight_layers[i] == layer) return i;
  }
  return std::nullopt;
}

std::string Architecture::weight_layer_name(std::size_t slot) const {
  const std::size_t layer = weight_layers.at(slot);
  return "layer " + std::to_string(slot + 1) + " (" + layer_kind_name(layers[layer]) + " #" +
         std::to_string(layer) + ")";
}

std::optional<std::string> architecture_alias(std::string_view name) {
  const auto& table = aliases();
  if (auto it = table.find(name); it != table.end()) return it->second;
  return std::nullopt;
}

Architecture parse_architecture(std::string_view descriptor) {
  std::string expanded;
  if (auto alias = architecture_alias(descriptor)) {
    expanded = *alias;
    descriptor = expanded;
  }

  const std::size_t colon = descriptor.find(':');
  if (colon == std::string_view::npos) {
    throw ConfigError("architecture '" + std::string(descriptor) +
                      "': expected '<input shape>:<layers>' or a known alias");
  }

  Architecture arch;
  {
    Cursor c{descriptor.substr(0, colon)};
    do {
      arch.input_shape.push_back(c.number("input shape"));
    } while (c.consume('x'));
    if (!c.done() || arch.input_shape.size() > 3) {
      throw ConfigError("architecture input shape must be F, HxW or CxHxW");
    }
    if (arch.input_shape.size() == 2) arch.input_shape.insert(arch.input_shape.begin(), 1);
    for (Index d : arch.input_shape) {
      if (d <= 0) throw ConfigError("architecture input dimensions must be positive");
    }
  }

  Shape current = arch.input_shape;
  std::string_view body = descriptor.substr(colon + 1);
  std::size_t start = 0;
  while (start <= body.size()) {
    std::size_t end = body.find(',', start);
    if (end == std::string_view::npos) end = body.size();
    const std::string_view token = body.substr(start, end - start);
    start = end + 1;
    if (token.empty()) throw ConfigError("architecture has an empty layer token");

    Cursor c{token};
    const char kind = token[0];
    c.pos = 1;
    LayerSpec layer;
    const std::size_t index = arch.layers.size();
    switch (kind) {
      case 'c': {
        if (current.size() != 3) throw ConfigError("conv layer needs a CxHxW input at layer " + std::to_string(index));
        Conv2D conv;
        conv.in_channels = current[0];
        conv.out_channels = c.number(token);
        if (!c.consume('k')) throw ConfigError("conv token '" + std::string(token) + "' needs k<size>");
        conv.kernel = c.number(token);
        if (c.consume('s')) conv.stride = c.number(token);
        if (c.consume('p')) conv.padding = c.number(token);
        if (conv.out_channels <= 0 || conv.kernel <= 0 || conv.stride <= 0) {
          throw ConfigError("conv token '" + std::string(token) + "' has non-positive parameters");
        }
        const Index h = (current[1] + 2 * conv.padding - conv.kernel) / conv.stride + 1;
        const Index w = (current[2] + 2 * conv.padding - conv.kernel) / conv.stride + 1;
        if (current[1] + 2 * conv.padding < conv.kernel || current[2] + 2 * conv.padding < conv.kernel) {
          throw ConfigError("conv kernel larger than padded input at layer " + std::to_string(index));
        }
        current = {conv.out_channels, h, w};
        layer = conv;
        break;
      }
      case 'd': {
        if (current.size() != 1) {
          throw ConfigError("dense layer needs a flat input at layer " + std::to_string(index) +
                            " (insert 'f')");
        }
        Dense dense;
        dense.in_features = current[0];
        dense.out_features = c.number(token);
        if (dense.out_features <= 0) throw ConfigError("dense layer needs positive width");
        current = {dense.out_features};
        layer = dense;
        break;
      }
      case 'm': {
        if (current.size() != 3) throw ConfigError("maxpool needs a CxHxW input at layer " + std::to_string(index));
        MaxPool2D pool;
        pool.kernel = c.number(token);
        pool.stride = c.consume('s') ? c.number(token) : pool.kernel;
        if (pool.kernel <= 0 || pool.stride <= 0 || pool.kernel > current[1] || pool.kernel > current[2]) {
          throw ConfigError("maxpool token '" + std::string(token) + "' does not fit its input");
        }
        current = {current[0], (current[1] - pool.kernel) / pool.stride + 1,
                   (current[2] - pool.kernel) / pool.stride + 1};
        layer = pool;
        break;
      }
      case 'r':
        layer = ReLU{};
        break;
      case 'f':
        current = {shape_size(current)};
        layer = Flatten{};
        break;
      default:
        throw ConfigError("unknown architecture token '" + std::string(token) + "'");
    }
    if (!c.done()) throw ConfigError("trailing characters in architecture token '" + std::string(token) + "'");

    if (std::holds_alternative<Conv2D>(layer) || std::holds_alternative<Dense>(layer)) {
      arch.weight_layers.push_back(index);
    }
    arch.layers.push_back(layer);
    arch.output_shapes.push_back(current);
    if (end == body.size()) break;
  }

  if (arch.layers.empty() || !std::holds_alternative<Dense>(arch.layers.back())) {
    throw ConfigError("architecture must end with a dense classifier");
  }
  arch.num_classes = std::get<Dense>(arch.layers.back()).out_features;

  std::ostringstream id;
  for (std::size_t i = 0; i < arch.input_shape.size(); ++i) id << (i ? "x" : "") << arch.input_shape[i];
  id << ':';
  for (std::size_t i = 0; i < arch.layers.size(); ++i) id << (i ? "," : "") << canonical_token(arch.layers[i]);
  arch.id = id.str();
  return arch;
}

}  // namespace bcu
