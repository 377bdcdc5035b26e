// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "bcu/data.hpp"
#include "bcu/network.hpp"
#include "bcu/train.hpp"

namespace bcu {

enum class MaskMode { exact_count, bernoulli };
enum class ScheduleStrategy { uniform, increasing, decreasing };
enum class LabelMode { soft, hard };

std::string to_string(MaskMode mode);
std::string to_string(ScheduleStrategy strategy);
std::string to_string(LabelMode mode);
MaskMode parse_mask_mode(const std::string& text);
ScheduleStrategy parse_schedule_strategy(const std::string& text);
LabelMode parse_label_mode(const std::string& text);

/// Re-initialization ratio delta_l per weight-bearing layer, in network order.
struct InitSchedule {
  std::vector<double> ratios;
  MaskMode mode = MaskMode::exact_count;

  void validate(const Architecture& arch) const;
  /// Weight-count-weighted mean of the ratios, i.e. the fraction of all
  /// parameters that gets re-initialized.
  double overall_fraction(const Network<float>& net) const;
};

/// Fixed re-initialization ratio of the classifier for non-uniform schedules.
inline constexpr double kClassifierRatio = 0.1;
/// Ratio between the re-initialization ratios of consecutive hidden layers.
inline constexpr double kScheduleGrowth = 3.0;

/// uniform:    every delta_l = budget.
/// increasing: hidden layers c * 3^(l-1), classifier 0.1, with c chosen so the
///             weight-count-weighted mean equals budget.
/// decreasing: hidden layers c * 3^(L-1-l), the reverse progression, classifier
///             0.1, with the same weighted mean. Ratios that would exceed 1 are
///             pinned at 1 and c is re-solved over the other hidden layers.
/// Throws ConfigError when the budget is outside (0, 1), when `increasing` needs
/// some delta_l > 1, or when the hidden layers cannot hold the budget.
InitSchedule make_schedule(ScheduleStrategy strategy, const Network<float>& net, double budget,
                           MaskMode mode = MaskMode::exact_count);

/// Boolean mask m_l per weight tensor; true marks positions taken from the
/// freshly initialized network.
struct LayerMask {
  Eigen::Array<bool, Eigen::Dynamic, 1> weight;
  Eigen::Array<bool, Eigen::Dynamic, 1> bias;

  Index count() const { return weight.count() + bias.count(); }
  Index size() const { return weight.size() + bias.size(); }
};

struct MaskSet {
  std::vector<LayerMask> layers;
};

/// exact_count: exactly round(delta_l * |W_l|) positions of layer l (weights and
/// bias together) sampled without replacement. bernoulli: independent
/// I[U < delta_l] per position. Drawn from the "mask-sampling" substream.
MaskSet sample_masks(const Network<float>& net, const InitSchedule& schedule, std::uint64_t seed);

/// (1 - m_l) . W^t_l + m_l . W^s_l for every layer. The teacher is not modified.
Network<float> adaptive_layerwise_init(const Network<float>& teacher, const Network<float>& fresh,
                                       const MaskSet& masks);

struct DefenseConfig {
  double temperature = 4.0;
  int epochs = 30;
  Index batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  AugmentPolicy augment;
  bool t_squared_scaling = false;
  std::uint64_t seed = 0;

  void validate() const;
  TrainConfig train_config() const;
};

struct DefenseResult {
  Network<float> model;
  std::vector<double> epoch_loss;
};

/// Label-free distillation: per batch the teacher logits (no gradient) supervise
/// the student through kl_distill_loss at temperature T. Teacher logits are
/// computed on exactly the student's input, and cached per sample when
/// augmentation is off.
DefenseResult distill(const Network<float>& teacher, Network<float> student, const Dataset& unlabeled,
                      const DefenseConfig& cfg);

/// As distill, but the supervision is the teacher's argmax (lowest index on
/// ties) fed to cross-entropy.
DefenseResult hard_label_distill(const Network<float>& teacher, Network<float> student, const Dataset& unlabeled,
                                 const DefenseConfig& cfg);

/// Cross-entropy finetuning of a copy of the teacher on labeled data.
DefenseResult finetune_baseline(const Network<float>& teacher, const Dataset& labeled, const DefenseConfig& cfg);

struct CleanseOptions {
  ScheduleStrategy strategy = ScheduleStrategy::increasing;
  double budget = 0.2;
  MaskMode mask_mode = MaskMode::exact_count;
  LabelMode label_mode = LabelMode::soft;
  DefenseConfig defense;
};

struct CleanseResult {
  Network<float> model;
  Network<float> initialized;  // student right after adaptive layer-wise init
  InitSchedule schedule;
  Index reinitialized = 0;     // mask entries set
  std::vector<double> epoch_loss;
};

/// Full cleansing run: schedule, fresh student ("student-init" substream of the
/// defense seed), masks, layer-wise init, then soft or hard distillation.
CleanseResult cleanse(const Network<float>& teacher, const Dataset& unlabeled, const CleanseOptions& options);

nlohmann::json to_json(const DefenseConfig& cfg);
nlohmann::json to_json(const InitSchedule& schedule);

}  // namespace bcu
