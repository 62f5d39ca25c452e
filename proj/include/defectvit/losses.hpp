#pragma once

// Background-skipping classification and regression losses.

#include <cstddef>

#include "defectvit/tensor.hpp"

namespace defectvit {

inline constexpr double kLogFloor = 1e-7;

// y_true and y_pred share shape [..., classes]; the last class is
// background. Sum over rows whose true argmax is not background of
// -sum_m y_true * log(max(y_pred, 1e-7)). With normalize the sum is divided
// by the number of such rows (left at 0 when there are none). Rows are
// accumulated in storage order. Throws ContractError on shape mismatch.
Tensor modified_cce(const Tensor& y_true, const Tensor& y_pred, bool normalize = false);

// y_true and y_pred share shape [..., 4]. Sum of squared errors over rows
// whose true values do not sum to 0, divided by the count of such rows.
// With no such rows the loss is 0 and *empty (when given) is set.
Tensor modified_mse(const Tensor& y_true, const Tensor& y_pred, bool* empty = nullptr);

// Rows of y_true [..., classes] whose argmax is not the last class.
std::size_t count_foreground(const Tensor& y_true);

struct LossConfig {
  double lambda = 1.0;
  bool normalize_cce = false;
};

struct LossReport {
  double cce = 0.0;
  double mse = 0.0;
  double total = 0.0;
  std::size_t matched_anchor_count = 0;
  bool mse_empty = false;
};

struct DetectionLoss {
  Tensor total;  // differentiable
  LossReport report;
};

DetectionLoss detection_loss(const Tensor& true_classes, const Tensor& true_offsets, const Tensor& class_probs,
                             const Tensor& offsets, const LossConfig& cfg);

}  // namespace defectvit
