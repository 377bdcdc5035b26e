// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>

#include "bcu/data.hpp"
#include "bcu/network.hpp"

namespace bcu {

/// hits / total, or not-applicable when total is zero.
struct Tally {
  Index hits = 0;
  Index total = 0;

  std::optional<double> rate() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(hits) / static_cast<double>(total);
  }
};

/// Samples whose argmax (lowest index on ties) equals the label.
Tally accuracy_tally(const Network<float>& model, const Dataset& labeled);
std::optional<double> accuracy(const Network<float>& model, const Dataset& labeled);

/// Fraction of an ASR set (see build_asr_set) predicted as its target label.
std::optional<double> attack_success_rate(const Network<float>& model, const Dataset& asr_set);

struct Metrics {
  std::optional<double> acc;
  std::optional<double> asr;
  Tally acc_counts;
  Tally asr_counts;
  std::string model_id;
  std::string test_set_id;
  std::string asr_set_id;  // empty when there is no ASR set
  nlohmann::json provenance = nlohmann::json::object();

  nlohmann::json to_json() const;
  static Metrics from_json(const nlohmann::json& j);
};

/// ACC on `test` and, when given, ASR on `asr_set`.
Metrics evaluate(const Network<float>& model, const Dataset& test, const Dataset* asr_set = nullptr);

/// Activations entering the final Dense layer, one row per image (N x F).
/// `inputs` is the network input batch, already normalized.
TensorF penultimate_features(const Network<float>& model, const TensorF& inputs);
/// Batched over a dataset, normalizing with the dataset's statistics.
TensorF penultimate_features(const Network<float>& model, const Dataset& data, Index batch_size = 256);

/// Feature file: "BCUF", u32 header length, JSON header {N, F, model_hash},
/// then N*F little-endian f32 values, row-major.
struct FeatureFile {
  TensorF features;
  std::string model_hash;
};

void write_features(const std::filesystem::path& path, const TensorF& features, const std::string& model_hash);
FeatureFile read_features(const std::filesystem::path& path);

struct Report {
  nlohmann::json json;
  std::string text;
};

/// Before/after comparison with ACC and ASR drops (before - after).
/// Throws ReportError when the two metrics were computed on different test or ASR sets.
Report make_report(const Metrics& before, const Metrics& after, const nlohmann::json& tags = nlohmann::json::object());

}  // namespace bcu
