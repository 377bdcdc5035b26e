// SPDX-License-Identifier: Apache-2.0
#include "bcu/defense.hpp"

#include <cmath>

#include "bcu/loss.hpp"

namespace bcu {

std::string to_string(MaskMode mode) { return mode == MaskMode::exact_count ? "exact_count" : "bernoulli"; }

std::string to_string(ScheduleStrategy strategy) {
  switch (strategy) {
    case ScheduleStrategy::uniform:
      return "uniform";
    case ScheduleStrategy::increasing:
      return "increasing";
    case ScheduleStrategy::decreasing:
      return "decreasing";
  }
  return "uniform";
}

std::string to_string(LabelMode mode) { return mode == LabelMode::soft ? "soft" : "hard"; }

MaskMode parse_mask_mode(const std::string& text) {
  if (text == "exact_count") return MaskMode::exact_count;
  if (text == "bernoulli") return MaskMode::bernoulli;
  throw ConfigError("unknown mask mode '" + text + "' (exact_count, bernoulli)");
}

ScheduleStrategy parse_schedule_strategy(const std::string& text) {
  if (text == "uniform") return ScheduleStrategy::uniform;
  if (text == "increasing") return ScheduleStrategy::increasing;
  if (text == "decreasing") return ScheduleStrategy::decreasing;
  throw ConfigError("unknown init strategy '" + text + "' (uniform, increasing, decreasing)");
}

LabelMode parse_label_mode(const std::string& text) {
  if (text == "soft") return LabelMode::soft;
  if (text == "hard") return LabelMode::hard;
  throw ConfigError("unknown label mode '" + text + "' (soft, hard)");
}

void InitSchedule::validate(const Architecture& arch) const {
  if (ratios.size() != arch.weight_layer_count()) {
    throw ConfigError("init schedule has " + std::to_string(ratios.size()) + " ratios for " +
                      std::to_string(arch.weight_layer_count()) + " weight layers");
  }
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("init ratio " + std::to_string(r) + " outside [0, 1]");
  }
}

double InitSchedule::overall_fraction(const Network<float>& net) const {
  validate(net.architecture());
  double replaced = 0.0;
  for (std::size_t l = 0; l < ratios.size(); ++l) replaced += ratios[l] * static_cast<double>(net.params()[l].size());
  return replaced / static_cast<double>(net.parameter_count());
}

InitSchedule make_schedule(ScheduleStrategy strategy, const Network<float>& net, double budget, MaskMode mode) {
  if (!(budget > 0.0 && budget < 1.0)) {
    throw ConfigError("re-initialization budget must lie in (0, 1), got " + std::to_string(budget));
  }
  const std::size_t layers = net.weight_layer_count();
  InitSchedule schedule{std::vector<double>(layers, budget), mode};
  if (strategy == ScheduleStrategy::uniform) return schedule;

  if (layers < 2) throw ConfigError("adaptive schedules need at least one hidden weight layer besides the classifier");
  const std::size_t hidden = layers - 1;
  const double total = static_cast<double>(net.parameter_count());
  const double classifier = static_cast<double>(net.params().back().size());
  const double target = budget * total - kClassifierRatio * classifier;
  if (!(target > 0.0)) {
    throw ConfigError("budget " + std::to_string(budget) + " is below the classifier's fixed share");
  }
  std::vector<double> growth(hidden);
  for (std::size_t l = 0; l < hidden; ++l) {
    const std::size_t step = strategy == ScheduleStrategy::decreasing ? hidden - 1 - l : l;
    growth[l] = std::pow(kScheduleGrowth, static_cast<double>(step));
  }
  // Layers whose scaled ratio would exceed 1 are saturated; decreasing spreads
  // the excess over the remaining hidden layers, increasing rejects the budget.
  std::vector<bool> saturated(hidden, false);
  for (;;) {
    double remaining = target, weighted = 0.0;
    for (std::size_t l = 0; l < hidden; ++l) {
      const double size = static_cast<double>(net.params()[l].size());
      if (saturated[l]) {
        remaining -= size;
      } else {
        weighted += growth[l] * size;
      }
    }
    if (!(weighted > 0.0 && remaining > 0.0)) {
      throw ConfigError("budget " + std::to_string(budget) + " is infeasible: it exceeds the hidden layers' capacity");
    }
    const double scale = remaining / weighted;
    bool changed = false;
    for (std::size_t l = 0; l < hidden; ++l) {
      if (saturated[l]) {
        schedule.ratios[l] = 1.0;
        continue;
      }
      const double r = scale * growth[l];
      if (r > 1.0) {
        if (strategy == ScheduleStrategy::increasing) {
          throw ConfigError("budget " + std::to_string(budget) + " is infeasible: layer " + std::to_string(l + 1) +
                            " would need ratio " + std::to_string(r));
        }
        saturated[l] = true;
        changed = true;
      }
      schedule.ratios[l] = r;
    }
    if (!changed) break;
  }
  schedule.ratios.back() = kClassifierRatio;
  return schedule;
}

MaskSet sample_masks(const Network<float>& net, const InitSchedule& schedule, std::uint64_t seed) {
  schedule.validate(net.architecture());
  MaskSet masks;
  for (std::size_t l = 0; l < net.weight_layer_count(); ++l) {
    const auto& p = net.params()[l];
    const Index nw = p.weight.size(), n = p.size();
    const double ratio = schedule.ratios[l];
    Eigen::Array<bool, Eigen::Dynamic, 1> flat = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n, false);
    Rng rng(seed, "mask-sampling", l);
    if (schedule.mode == MaskMode::exact_count) {
      const auto count = static_cast<Index>(std::llround(ratio * static_cast<double>(n)));
      for (Index k : rng.sample_without_replacement<Index>(n, count)) flat[k] = true;
    } else {
      for (Index k = 0; k < n; ++k) flat[k] = rng.uniform() < ratio;
    }
    masks.layers.push_back({flat.head(nw), flat.tail(n - nw)});
  }
  return masks;
}

Network<float> adaptive_layerwise_init(const Network<float>& teacher, const Network<float>& fresh,
                                       const MaskSet& masks) {
  if (!(teacher.architecture() == fresh.architecture())) {
    throw ConfigError("teacher (" + teacher.architecture().id + ") and fresh student (" + fresh.architecture().id +
                      ") architectures differ");
  }
  if (masks.layers.size() != teacher.weight_layer_count()) {
    throw ConfigError("mask set does not cover every weight layer");
  }
  Network<float> student = teacher;
  for (std::size_t l = 0; l < masks.layers.size(); ++l) {
    const auto& m = masks.layers[l];
    auto& s = student.params()[l];
    const auto& f = fresh.params()[l];
    if (m.weight.size() != s.weight.size() || m.bias.size() != s.bias.size()) {
      throw ConfigError("mask shape does not match " + teacher.architecture().weight_layer_name(l));
    }
    s.weight.values() = m.weight.select(f.weight.values().array(), s.weight.values().array()).matrix();
    s.bias.values() = m.bias.select(f.bias.values().array(), s.bias.values().array()).matrix();
  }
  return student;
}

void DefenseConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (epochs < 0) throw ConfigError("defense epochs must be non-negative");
  train_config().validate();
}

TrainConfig DefenseConfig::train_config() const {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch_size;
  tc.schedule = LrSchedule{lr, {}, 1.0};
  tc.momentum = momentum;
  tc.weight_decay = weight_decay;
  tc.augment = augment;
  tc.seed = seed;
  return tc;
}

namespace {

void require_pair(const Network<float>& teacher, const Network<float>& student, const Dataset& data) {
  if (!(teacher.architecture() == student.architecture())) {
    throw ConfigError("teacher and student architectures differ");
  }
  if (data.size() == 0) throw ConfigError("defense data set is empty");
  if (data.sample_shape() != teacher.architecture().input_shape) {
    throw ConfigError("defense images " + shape_string(data.sample_shape()) + " do not match model input " +
                      shape_string(teacher.architecture().input_shape));
  }
}

/// Teacher logits for a batch: cached rows when inputs are deterministic,
/// otherwise a forward pass on the exact student input.
class TeacherOracle {
 public:
  TeacherOracle(const Network<float>& teacher, const Dataset& data, const DefenseConfig& cfg) : teacher_(teacher) {
    if (cfg.augment.kind == AugmentKind::none) cache_ = predict_logits(teacher, data);
  }

  TensorF logits(std::span<const Index> idx, const TensorF& input) const {
    if (cache_.empty()) return forward(teacher_, input);
    const Index k = cache_.dim(1);
    TensorF out({static_cast<Index>(idx.size()), k});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.values().segment(static_cast<Index>(i) * k, k) = cache_.values().segment(idx[i] * k, k);
    }
    return out;
  }

 private:
  const Network<float>& teacher_;
  TensorF cache_;
};

}  // namespace

DefenseResult distill(const Network<float>& teacher, Network<float> student, const Dataset& unlabeled,
                      const DefenseConfig& cfg) {
  cfg.validate();
  require_pair(teacher, student, unlabeled);
  const TeacherOracle oracle(teacher, unlabeled, cfg);
  const DistillLossOptions options{cfg.t_squared_scaling};
  TrainHistory h = run_training(
      student, unlabeled, cfg.train_config(),
      [&](const TensorF& logits, std::span<const Index> idx, const TensorF& input) {
        return kl_distill_loss(oracle.logits(idx, input), logits, cfg.temperature, options);
      },
      "distill");
  return {std::move(student), std::move(h.epoch_loss)};
}

DefenseResult hard_label_distill(const Network<float>& teacher, Network<float> student, const Dataset& unlabeled,
                                 const DefenseConfig& cfg) {
  cfg.validate();
  require_pair(teacher, student, unlabeled);
  const TeacherOracle oracle(teacher, unlabeled, cfg);
  TrainHistory h = run_training(
      student, unlabeled, cfg.train_config(),
      [&](const TensorF& logits, std::span<const Index> idx, const TensorF& input) {
        const std::vector<int> labels = argmax_rows(oracle.logits(idx, input));
        return cross_entropy_loss(logits, std::span<const int>(labels));
      },
      "hard-label-distill");
  return {std::move(student), std::move(h.epoch_loss)};
}

DefenseResult finetune_baseline(const Network<float>& teacher, const Dataset& labeled, const DefenseConfig& cfg) {
  cfg.validate();
  Network<float> model = teacher;
  TrainHistory h = train_supervised(model, labeled, cfg.train_config(), "finetune");
  return {std::move(model), std::move(h.epoch_loss)};
}

CleanseResult cleanse(const Network<float>& teacher, const Dataset& unlabeled, const CleanseOptions& options) {
  options.defense.validate();
  CleanseResult result;
  result.schedule = make_schedule(options.strategy, teacher, options.budget, options.mask_mode);
  Network<float> fresh(teacher.architecture());
  {
    Rng rng(options.defense.seed, "student-init");
    init_fan_in_uniform(fresh, rng);
  }
  const MaskSet masks = sample_masks(teacher, result.schedule, options.defense.seed);
  for (const auto& m : masks.layers) result.reinitialized += m.count();
  result.initialized = adaptive_layerwise_init(teacher, fresh, masks);
  DefenseResult trained = options.label_mode == LabelMode::soft
                              ? distill(teacher, result.initialized, unlabeled, options.defense)
                              : hard_label_distill(teacher, result.initialized, unlabeled, options.defense);
  result.model = std::move(trained.model);
  result.epoch_loss = std::move(trained.epoch_loss);
  return result;
}

nlohmann::json to_json(const DefenseConfig& cfg) {
  return {{"temperature", cfg.temperature},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"lr", cfg.lr},
          {"momentum", cfg.momentum},
          {"weight_decay", cfg.weight_decay},
          {"augment", {{"policy", to_string(cfg.augment.kind)}, {"pad", cfg.augment.pad}}},
          {"t_squared_scaling", cfg.t_squared_scaling},
          {"seed", cfg.seed}};
}

nlohmann::json to_json(const InitSchedule& schedule) {
  return {{"ratios", schedule.ratios}, {"mode", to_string(schedule.mode)}};
}

}  // namespace bcu
