// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bcu/tensor.hpp"

namespace bcu {

/// Back-propagation vs. central finite differences, both in double precision.
struct GradcheckOptions {
  double tolerance = 1e-3;  // max relative error
  double step = 1e-3;       // finite-difference h
  Index samples = 120;      // sampled coordinates per case (parameters + inputs)
  std::uint64_t seed = 7;
  /// Negate the analytic gradient of this weight-layer slot (0-based) in every
  /// case; simulates a sign error in that layer's backward.
  std::optional<std::size_t> inject_sign_error;
};

struct GradcheckEntry {
  std::string name;        // "<case> <layer>"
  Index checked = 0;
  /// Coordinates whose +-h probes changed a ReLU/max-pool decision and whose
  /// finite difference disagreed; they are excused and replaced.
  Index skipped_kinks = 0;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradcheckReport {
  double tolerance = 0.0;
  std::vector<GradcheckEntry> entries;

  bool pass() const;
  std::vector<std::string> failures() const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

/// Runs one case per layer kind (dense, conv2d, relu, maxpool2d, flatten) plus
/// the full small_cnn with a cross-entropy and a distillation objective.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace bcu
