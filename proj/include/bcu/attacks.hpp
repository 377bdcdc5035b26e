// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "bcu/data.hpp"
#include "bcu/network.hpp"
#include "bcu/train.hpp"

namespace bcu {

/// size x size block of alternating 1/0 pixels (top-left cell white) placed in
/// the lower-right corner, `margin` pixels away from both edges.
struct Checkerboard {
  Index size = 3;
  Index margin = 0;
};

/// (1 - alpha) * x + alpha * pattern with a per-pixel U[0, 1) pattern fixed by
/// `pattern_seed`.
struct Blended {
  std::uint64_t pattern_seed = 0;
  double alpha = 0.2;
};

/// x + (delta / 255) * sin(2 pi j freq / W) on column j; delta in 8-bit units.
struct Sinusoid {
  double delta = 20.0;
  double freq = 6.0;
};

using TriggerSpec = std::variant<Checkerboard, Blended, Sinusoid>;

std::string trigger_name(const TriggerSpec& spec);
void validate_trigger(const TriggerSpec& spec);

/// Applies the trigger to a C x H x W image in [0, 1]; output is clamped to [0, 1].
TensorF apply_trigger(const TensorF& image, const TriggerSpec& spec);

/// Triggers every sample of a dataset in place.
void apply_trigger_all(Dataset& data, const TriggerSpec& spec);

enum class PoisonStrategy { all_to_one, clean_label };

struct PoisonPlan {
  TriggerSpec trigger = Checkerboard{};
  int target_label = 0;
  /// all_to_one: fraction of the whole training set; clean_label: fraction of
  /// the target-class samples.
  double rate = 0.1;
  PoisonStrategy strategy = PoisonStrategy::all_to_one;
  std::uint64_t seed = 0;

  void validate(int num_classes) const;
  std::string hash() const;
};

nlohmann::json to_json(const TriggerSpec& spec);
TriggerSpec trigger_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PoisonPlan& plan);
PoisonPlan poison_plan_from_json(const nlohmann::json& j);
std::string to_string(PoisonStrategy strategy);

struct PoisonResult {
  Dataset poisoned;
  std::vector<Index> indices;  // D_backdoor, ascending
};

/// all_to_one: round(rate * N) samples chosen uniformly receive the trigger and
/// the target label. clean_label: round(rate * |target class|) target-class
/// samples receive the trigger; labels are untouched.
PoisonResult poison_training_set(const Dataset& train, const PoisonPlan& plan);

/// Triggered copies of every test sample whose label is not the target, all
/// labeled with the target.
Dataset build_asr_set(const Dataset& test, const PoisonPlan& plan);

/// Trains a freshly initialized network on the poisoned set with cross-entropy.
/// Provenance (plan hash, seed, poisoned count) is written to the metadata.
Network<float> train_backdoor_model(const Architecture& arch, const PoisonResult& poisoned, const PoisonPlan& plan,
                                    const TrainConfig& cfg, TrainHistory* history = nullptr);

}  // namespace bcu
