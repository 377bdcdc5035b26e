// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "bcu/tensor.hpp"

namespace bcu {

template <typename Scalar>
struct LossResult {
  double loss = 0.0;
  Tensor<Scalar> grad;  // d loss / d logits, same shape as the logits
};

namespace detail {

template <typename Scalar>
void require_logits(const Tensor<Scalar>& logits, const char* what) {
  if (logits.rank() != 2 || logits.dim(0) < 1 || logits.dim(1) < 1) {
    throw InputError(std::string(what) + ": logits must be shaped B x K, got " + shape_string(logits.shape()));
  }
}

inline void require_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be a positive finite number, got " + std::to_string(temperature));
  }
}

/// Row-wise log-softmax of logits / T, evaluated in double with max subtraction.
template <typename Scalar>
Eigen::MatrixXd log_softmax_rows(const Tensor<Scalar>& logits, double temperature) {
  const Index rows = logits.dim(0), cols = logits.dim(1);
  Eigen::MatrixXd z = logits.matrix(rows).template cast<double>() / temperature;
  for (Index r = 0; r < rows; ++r) {
    const double m = z.row(r).maxCoeff();
    const double lse = m + std::log((z.row(r).array() - m).exp().sum());
    z.row(r).array() -= lse;
  }
  (void)cols;
  return z;
}

}  // namespace detail

/// p_T[k] = exp(z_k / T) / sum_j exp(z_j / T), row by row.
template <typename Scalar>
Tensor<Scalar> softmax_temperature(const Tensor<Scalar>& logits, double temperature) {
  detail::require_temperature(temperature);
  detail::require_logits(logits, "softmax_temperature");
  const Eigen::MatrixXd logp = detail::log_softmax_rows(logits, temperature);
  Tensor<Scalar> out(logits.shape());
  out.matrix(logits.dim(0)) = logp.array().exp().matrix().template cast<Scalar>();
  return out;
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename Scalar>
LossResult<Scalar> cross_entropy_loss(const Tensor<Scalar>& logits, std::span<const int> labels) {
  detail::require_logits(logits, "cross_entropy_loss");
  const Index rows = logits.dim(0), classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != rows) {
    throw InputError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw InputError("cross_entropy_loss: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  const Eigen::MatrixXd logp = detail::log_softmax_rows(logits, 1.0);
  Eigen::MatrixXd grad = logp.array().exp();
  double total = 0.0;
  for (Index r = 0; r < rows; ++r) {
    const auto y = static_cast<Index>(labels[static_cast<std::size_t>(r)]);
    total -= logp(r, y);
    grad(r, y) -= 1.0;
  }
  LossResult<Scalar> out{total / static_cast<double>(rows), Tensor<Scalar>(logits.shape())};
  out.grad.matrix(rows) = (grad / static_cast<double>(rows)).template cast<Scalar>();
  return out;
}

struct DistillLossOptions {
  /// Multiply loss and gradient by T^2 (Hinton-style gradient compensation).
  /// Off by default: the objective is the plain batch-mean KL divergence.
  bool t_squared_scaling = false;
};

/// Batch mean of KL(p^t_T || p^s_T). The teacher logits are constants; the
/// gradient is taken with respect to the student logits only:
/// d/dz^s = (p^s_T - p^t_T) / (T * B).
template <typename Scalar>
LossResult<Scalar> kl_distill_loss(const Tensor<Scalar>& teacher_logits, const Tensor<Scalar>& student_logits,
                                   double temperature, DistillLossOptions options = {}) {
  detail::require_temperature(temperature);
  detail::require_logits(student_logits, "kl_distill_loss");
  if (teacher_logits.shape() != student_logits.shape()) {
    throw InputError("kl_distill_loss: teacher logits " + shape_string(teacher_logits.shape()) +
                     " vs student logits " + shape_string(student_logits.shape()));
  }
  const Index rows = student_logits.dim(0);
  const Eigen::MatrixXd logt = detail::log_softmax_rows(teacher_logits, temperature);
  const Eigen::MatrixXd logs = detail::log_softmax_rows(student_logits, temperature);
  const Eigen::ArrayXXd pt = logt.array().exp();
  const Eigen::ArrayXXd ps = logs.array().exp();

  double total = 0.0;
  for (Index r = 0; r < rows; ++r) {
    for (Index k = 0; k < pt.cols(); ++k) {
      if (pt(r, k) > 0.0) total += pt(r, k) * (logt(r, k) - logs(r, k));
    }
  }
  const double scale = options.t_squared_scaling ? temperature * temperature : 1.0;
  LossResult<Scalar> out{scale * total / static_cast<double>(rows), Tensor<Scalar>(student_logits.shape())};
  out.grad.matrix(rows) =
      ((ps - pt) * (scale / (temperature * static_cast<double>(rows)))).matrix().template cast<Scalar>();
  return out;
}

/// Row-wise argmax; ties resolve to the lowest class index.
template <typename Scalar>
std::vector<int> argmax_rows(const Tensor<Scalar>& logits) {
  const Index rows = logits.dim(0), cols = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(rows));
  for (Index r = 0; r < rows; ++r) {
    const Scalar* row = logits.data() + r * cols;
    Index best = 0;
    for (Index k = 1; k < cols; ++k) {
      if (row[k] > row[best]) best = k;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace bcu
