// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bcu/data.hpp"
#include "bcu/loss.hpp"
#include "bcu/network.hpp"
#include "bcu/optim.hpp"

namespace bcu {

struct TrainConfig {
  int epochs = 30;
  Index batch_size = 64;
  LrSchedule schedule{0.05, {15, 23}, 0.1};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  AugmentPolicy augment;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-batch objective: receives the student logits, the dataset indices of
/// the batch and the exact (augmented, normalized) network input.
using BatchLoss =
    std::function<LossResult<float>(const TensorF& logits, std::span<const Index> indices, const TensorF& input)>;

struct TrainHistory {
  std::vector<double> epoch_loss;  // sample-weighted mean loss of each epoch
};

/// Minibatch SGD over `data` for cfg.epochs epochs. Shuffling and augmentation
/// draw from substreams of cfg.seed. Throws TrainingError on a non-finite loss,
/// naming the epoch and iteration.
TrainHistory run_training(Network<float>& net, const Dataset& data, const TrainConfig& cfg, const BatchLoss& loss,
                          const std::string& tag);

/// Cross-entropy against the dataset labels.
TrainHistory train_supervised(Network<float>& net, const Dataset& labeled, const TrainConfig& cfg,
                              const std::string& tag = "train");

/// Logits of `net` for every sample (normalized, never augmented), in order.
TensorF predict_logits(const Network<float>& net, const Dataset& data, Index batch_size = 256);
std::vector<int> predict_labels(const Network<float>& net, const Dataset& data, Index batch_size = 256);

/// Freshly initialized network for `arch`, drawing from the "weight-init" substream.
Network<float> make_initialized(const Architecture& arch, std::uint64_t seed);

}  // namespace bcu
