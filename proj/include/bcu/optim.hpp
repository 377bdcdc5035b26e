// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "bcu/network.hpp"

namespace bcu {

/// Multi-step schedule: initial_lr * gamma^(number of milestones <= epoch).
struct LrSchedule {
  double initial_lr = 0.1;
  std::vector<int> milestones;
  double gamma = 0.1;

  void validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("lr gamma must lie in (0, 1]");
    if (!std::is_sorted(milestones.begin(), milestones.end())) {
      throw ConfigError("lr milestones must be sorted");
    }
  }

  double lr_at(int epoch) const {
    const auto passed = std::upper_bound(milestones.begin(), milestones.end(), epoch) - milestones.begin();
    double lr = initial_lr;
    for (std::ptrdiff_t i = 0; i < passed; ++i) lr *= gamma;
    return lr;
  }
};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///   v <- momentum * v + g + weight_decay * w
///   w <- w - lr * v
template <typename Scalar>
struct OptimizerState {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  ParamList<Scalar> velocity;

  OptimizerState() = default;
  OptimizerState(const Network<Scalar>& net, double momentum_, double weight_decay_)
      : momentum(momentum_), weight_decay(weight_decay_), velocity(zeros_like(net.params())) {}
};

template <typename Scalar>
void sgd_step(Network<Scalar>& net, const ParamList<Scalar>& grads, OptimizerState<Scalar>& state, double lr) {
  auto& params = net.params();
  if (grads.size() != params.size() || state.velocity.size() != params.size()) {
    throw ConfigError("sgd_step: gradient/optimizer state does not mirror the network");
  }
  const auto mu = static_cast<Scalar>(state.momentum);
  const auto wd = static_cast<Scalar>(state.weight_decay);
  const auto step = static_cast<Scalar>(lr);
  auto update = [&](Tensor<Scalar>& w, const Tensor<Scalar>& g, Tensor<Scalar>& v) {
    if (g.shape() != w.shape() || v.shape() != w.shape()) {
      throw ConfigError("sgd_step: shape mismatch " + shape_string(g.shape()) + " vs " + shape_string(w.shape()));
    }
    v.values() = mu * v.values() + g.values() + wd * w.values();
    w.values() -= step * v.values();
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    update(params[i].weight, grads[i].weight, state.velocity[i].weight);
    update(params[i].bias, grads[i].bias, state.velocity[i].bias);
  }
}

}  // namespace bcu
