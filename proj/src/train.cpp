// SPDX-License-Identifier: Apache-2.0
#include "bcu/train.hpp"

#include <cmath>

namespace bcu {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  schedule.validate();
}

TrainHistory run_training(Network<float>& net, const Dataset& data, const TrainConfig& cfg, const BatchLoss& loss,
                          const std::string& tag) {
  cfg.validate();
  if (data.size() == 0) throw ConfigError(tag + ": training set is empty");
  TrainHistory history;
  OptimizerState<float> state(net, cfg.momentum, cfg.weight_decay);
  Tape<float> tape;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.schedule.lr_at(epoch);
    const auto plan = batches(data.size(), cfg.batch_size, cfg.seed, epoch);
    Rng aug_rng(cfg.seed, "augment", static_cast<std::uint64_t>(epoch));
    double total = 0.0;
    for (std::size_t it = 0; it < plan.size(); ++it) {
      const auto& idx = plan[it];
      TensorF input = normalize(augment(gather_images(data, idx), cfg.augment, aug_rng), data.normalization);
      const TensorF logits = forward(net, input, &tape);
      const LossResult<float> result = loss(logits, idx, input);
      if (!std::isfinite(result.loss) || !result.grad.all_finite()) {
        throw TrainingError(tag + ": non-finite loss at epoch " + std::to_string(epoch + 1) + ", iteration " +
                            std::to_string(it + 1));
      }
      const Gradients<float> grads = backward(net, tape, result.grad);
      sgd_step(net, grads.params, state, lr);
      total += result.loss * static_cast<double>(idx.size());
    }
    history.epoch_loss.push_back(total / static_cast<double>(data.size()));
  }
  for (const auto& p : net.params()) {
    if (!p.weight.all_finite() || !p.bias.all_finite()) throw TrainingError(tag + ": weights diverged");
  }
  return history;
}

TrainHistory train_supervised(Network<float>& net, const Dataset& labeled, const TrainConfig& cfg,
                              const std::string& tag) {
  labeled.validate();
  const auto& labels = labeled.require_labels(tag);
  std::vector<int> batch_labels;
  return run_training(
      net, labeled, cfg,
      [&](const TensorF& logits, std::span<const Index> idx, const TensorF&) {
        batch_labels.clear();
        for (Index i : idx) batch_labels.push_back(labels[static_cast<std::size_t>(i)]);
        return cross_entropy_loss(logits, std::span<const int>(batch_labels));
      },
      tag);
}

TensorF predict_logits(const Network<float>& net, const Dataset& data, Index batch_size) {
  TensorF out({data.size(), net.num_classes()});
  std::vector<Index> idx;
  for (Index start = 0; start < data.size(); start += batch_size) {
    const Index end = std::min(data.size(), start + batch_size);
    idx.clear();
    for (Index i = start; i < end; ++i) idx.push_back(i);
    const TensorF logits = forward(net, normalize(gather_images(data, idx), data.normalization));
    out.values().segment(start * net.num_classes(), logits.size()) = logits.values();
  }
  return out;
}

std::vector<int> predict_labels(const Network<float>& net, const Dataset& data, Index batch_size) {
  if (data.size() == 0) return {};
  return argmax_rows(predict_logits(net, data, batch_size));
}

Network<float> make_initialized(const Architecture& arch, std::uint64_t seed) {
  Network<float> net(arch);
  Rng rng(seed, "weight-init");
  init_fan_in_uniform(net, rng);
  return net;
}

}  // namespace bcu
