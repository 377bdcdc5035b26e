// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bcu/attacks.hpp"
#include "bcu/data.hpp"
#include "bcu/defense.hpp"
#include "bcu/gradcheck.hpp"
#include "bcu/train.hpp"

namespace bcu {

enum class AblationAxis { init_strategy, label_mode, defense_set_size, temperature };

std::string to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(const std::string& text);

struct AblationSpec {
  AblationAxis axis = AblationAxis::init_strategy;
  nlohmann::json values = nlohmann::json::array();
  std::vector<std::uint64_t> seeds;  // defense seeds; empty means the root seed
};

/// Everything a command needs, merged from the config file and flags.
/// Relative paths are resolved against the config file's directory.
struct RunConfig {
  std::filesystem::path dataset;  // dataset manifest
  std::string architecture = "small_cnn";
  std::uint64_t seed = 0;
  std::filesystem::path out;
  TrainConfig train;
  std::optional<PoisonPlan> poison;
  SplitSpec split{2500, 0};
  CleanseOptions cleanse;
  std::filesystem::path teacher;
  std::string unlabeled = "in_distribution";  // or a dataset manifest path
  std::optional<Index> unlabeled_size;        // defaults to split.defense_size
  std::optional<AblationSpec> ablate;
  std::filesystem::path model;
  std::string features_data = "test";  // test | defense | dataset manifest path
  GradcheckOptions gradcheck;

  bool ood() const { return unlabeled != "in_distribution"; }
};

/// Validates `j` against the config schema. Errors name the offending field,
/// e.g. "config.defense.temperature: expected a number".
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);

/// Effective config as JSON; parse_run_config(to_json(c), any) == c.
nlohmann::json to_json(const RunConfig& config);

/// Reads a config file. A run manifest (an object with a "config" key) is
/// accepted in its place.
nlohmann::json read_config_json(const std::filesystem::path& path);

}  // namespace bcu
