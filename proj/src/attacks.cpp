// SPDX-License-Identifier: Apache-2.0
#include "bcu/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "bcu/model_io.hpp"

namespace bcu {
namespace {

void require_image(const TensorF& image) {
  if (image.rank() != 3) throw ConfigError("apply_trigger expects a C x H x W image, got " + shape_string(image.shape()));
}

TensorF blend_pattern(const Shape& shape, std::uint64_t seed) {
  TensorF pattern(shape);
  Rng rng(seed, "blend-pattern");
  for (Index i = 0; i < pattern.size(); ++i) pattern[i] = static_cast<float>(rng.uniform());
  return pattern;
}

}  // namespace

std::string trigger_name(const TriggerSpec& spec) {
  static constexpr const char* names[] = {"checkerboard", "blended", "sinusoid"};
  return names[spec.index()];
}

void validate_trigger(const TriggerSpec& spec) {
  std::visit(
      [](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, Checkerboard>) {
          if (t.size < 1 || t.margin < 0) throw ConfigError("checkerboard needs size >= 1 and margin >= 0");
        } else if constexpr (std::is_same_v<T, Blended>) {
          if (!(t.alpha >= 0.0 && t.alpha <= 1.0)) throw ConfigError("blend alpha must lie in [0, 1]");
        } else {
          if (!(t.delta >= 0.0)) throw ConfigError("sinusoid delta must be non-negative");
          if (!(t.freq >= 1.0)) throw ConfigError("sinusoid frequency must be >= 1");
        }
      },
      spec);
}

TensorF apply_trigger(const TensorF& image, const TriggerSpec& spec) {
  require_image(image);
  validate_trigger(spec);
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  TensorF out = image;
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, Checkerboard>) {
          if (t.size + t.margin > h || t.size + t.margin > w) {
            throw ConfigError("checkerboard of size " + std::to_string(t.size) + " (margin " +
                              std::to_string(t.margin) + ") does not fit a " + std::to_string(h) + "x" +
                              std::to_string(w) + " image");
          }
          const Index top = h - t.margin - t.size, left = w - t.margin - t.size;
          for (Index ch = 0; ch < c; ++ch) {
            for (Index i = 0; i < t.size; ++i) {
              for (Index j = 0; j < t.size; ++j) {
                out[(ch * h + top + i) * w + left + j] = (i + j) % 2 == 0 ? 1.0f : 0.0f;
              }
            }
          }
        } else if constexpr (std::is_same_v<T, Blended>) {
          const TensorF pattern = blend_pattern(image.shape(), t.pattern_seed);
          const auto a = static_cast<float>(t.alpha);
          out.values() = (1.0f - a) * image.values() + a * pattern.values();
        } else {
          for (Index j = 0; j < w; ++j) {
            const double shift =
                (t.delta / 255.0) * std::sin(2.0 * std::numbers::pi * static_cast<double>(j) * t.freq /
                                             static_cast<double>(w));
            for (Index ch = 0; ch < c; ++ch) {
              for (Index i = 0; i < h; ++i) {
                float& px = out[(ch * h + i) * w + j];
                px = static_cast<float>(static_cast<double>(px) + shift);
              }
            }
          }
        }
      },
      spec);
  out.values() = out.values().cwiseMax(0.0f).cwiseMin(1.0f);
  return out;
}

void apply_trigger_all(Dataset& data, const TriggerSpec& spec) {
  const Shape sample = data.sample_shape();
  const Index stride = data.sample_size();
  for (Index n = 0; n < data.size(); ++n) {
    TensorF image(sample, data.images.values().segment(n * stride, stride));
    data.images.values().segment(n * stride, stride) = apply_trigger(image, spec).values();
  }
}

std::string to_string(PoisonStrategy strategy) {
  return strategy == PoisonStrategy::all_to_one ? "all_to_one" : "clean_label";
}

void PoisonPlan::validate(int num_classes) const {
  validate_trigger(trigger);
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("poison rate must lie in [0, 1], got " + std::to_string(rate));
  if (target_label < 0 || target_label >= num_classes) {
    throw ConfigError("target label " + std::to_string(target_label) + " outside [0, " + std::to_string(num_classes) +
                      ")");
  }
}

nlohmann::json to_json(const TriggerSpec& spec) {
  nlohmann::json j;
  j["kind"] = trigger_name(spec);
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, Checkerboard>) {
          j["size"] = t.size;
          j["margin"] = t.margin;
        } else if constexpr (std::is_same_v<T, Blended>) {
          j["pattern_seed"] = t.pattern_seed;
          j["alpha"] = t.alpha;
        } else {
          j["delta"] = t.delta;
          j["freq"] = t.freq;
        }
      },
      spec);
  return j;
}

TriggerSpec trigger_from_json(const nlohmann::json& j) {
  const std::string kind = j.value("kind", "checkerboard");
  if (kind == "checkerboard") return Checkerboard{j.value<Index>("size", 3), j.value<Index>("margin", 0)};
  if (kind == "blended") return Blended{j.value<std::uint64_t>("pattern_seed", 0), j.value("alpha", 0.2)};
  if (kind == "sinusoid") return Sinusoid{j.value("delta", 20.0), j.value("freq", 6.0)};
  throw ConfigError("unknown trigger kind '" + kind + "' (checkerboard, blended, sinusoid)");
}

nlohmann::json to_json(const PoisonPlan& plan) {
  return {{"trigger", to_json(plan.trigger)},
          {"target_label", plan.target_label},
          {"rate", plan.rate},
          {"strategy", to_string(plan.strategy)},
          {"seed", plan.seed}};
}

PoisonPlan poison_plan_from_json(const nlohmann::json& j) {
  PoisonPlan plan;
  if (j.contains("trigger")) plan.trigger = trigger_from_json(j["trigger"]);
  plan.target_label = j.value("target_label", 0);
  const std::string strategy = j.value("strategy", "all_to_one");
  if (strategy == "all_to_one") {
    plan.strategy = PoisonStrategy::all_to_one;
  } else if (strategy == "clean_label") {
    plan.strategy = PoisonStrategy::clean_label;
  } else {
    throw ConfigError("unknown poisoning strategy '" + strategy + "' (all_to_one, clean_label)");
  }
  plan.rate = j.value("rate", plan.strategy == PoisonStrategy::clean_label ? 0.8 : 0.1);
  plan.seed = j.value<std::uint64_t>("seed", 0);
  return plan;
}

std::string PoisonPlan::hash() const { return hex64(fnv1a64(to_json(*this).dump())); }

PoisonResult poison_training_set(const Dataset& train, const PoisonPlan& plan) {
  const auto& labels = train.require_labels("poison_training_set");
  plan.validate(train.num_classes);

  std::vector<Index> candidates;
  if (plan.strategy == PoisonStrategy::all_to_one) {
    candidates.resize(static_cast<std::size_t>(train.size()));
    std::iota(candidates.begin(), candidates.end(), Index{0});
  } else {
    for (Index i = 0; i < train.size(); ++i) {
      if (labels[static_cast<std::size_t>(i)] == plan.target_label) candidates.push_back(i);
    }
  }
  const auto pool = static_cast<Index>(candidates.size());
  const auto count = static_cast<Index>(std::llround(plan.rate * static_cast<double>(pool)));

  Rng rng(plan.seed, "poison-selection");
  std::vector<Index> picks = rng.sample_without_replacement<Index>(pool, count);
  PoisonResult result{train, {}};
  result.indices.reserve(picks.size());
  for (Index p : picks) result.indices.push_back(candidates[static_cast<std::size_t>(p)]);
  std::sort(result.indices.begin(), result.indices.end());

  const Shape sample = train.sample_shape();
  const Index stride = train.sample_size();
  auto& images = result.poisoned.images.values();
  for (Index i : result.indices) {
    TensorF image(sample, images.segment(i * stride, stride));
    images.segment(i * stride, stride) = apply_trigger(image, plan.trigger).values();
    if (plan.strategy == PoisonStrategy::all_to_one) {
      (*result.poisoned.labels)[static_cast<std::size_t>(i)] = plan.target_label;
    }
  }
  result.poisoned.name = train.name + "+poison(" + trigger_name(plan.trigger) + ")";
  return result;
}

Dataset build_asr_set(const Dataset& test, const PoisonPlan& plan) {
  const auto& labels = test.require_labels("build_asr_set");
  std::vector<Index> keep;
  for (Index i = 0; i < test.size(); ++i) {
    if (labels[static_cast<std::size_t>(i)] != plan.target_label) keep.push_back(i);
  }
  Dataset out = test.subset(keep);
  apply_trigger_all(out, plan.trigger);
  std::fill(out.labels->begin(), out.labels->end(), plan.target_label);
  out.name = test.name + "/asr(" + trigger_name(plan.trigger) + ")";
  return out;
}

Network<float> train_backdoor_model(const Architecture& arch, const PoisonResult& poisoned, const PoisonPlan& plan,
                                    const TrainConfig& cfg, TrainHistory* history) {
  if (arch.num_classes != poisoned.poisoned.num_classes) {
    throw ConfigError("architecture has " + std::to_string(arch.num_classes) + " classes, dataset " +
                      std::to_string(poisoned.poisoned.num_classes));
  }
  Network<float> net = make_initialized(arch, cfg.seed);
  TrainHistory h = train_supervised(net, poisoned.poisoned, cfg, "train-backdoor");
  net.metadata()["provenance"] = {{"kind", "backdoor"},
                                  {"plan", to_json(plan)},
                                  {"plan_hash", plan.hash()},
                                  {"poisoned_count", poisoned.indices.size()},
                                  {"seed", cfg.seed},
                                  {"epoch_loss", h.epoch_loss}};
  if (history) *history = std::move(h);
  return net;
}

}  // namespace bcu
