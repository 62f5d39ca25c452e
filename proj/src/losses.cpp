#include "defectvit/losses.hpp"

#include <algorithm>
#include <cmath>

#include "defectvit/errors.hpp"
#include "defectvit/ops.hpp"

namespace defectvit {

namespace {

void require_same(const Tensor& t, const Tensor& p, const char* op) {
  if (t.shape() != p.shape() || t.rank() == 0) {
    throw ContractError(std::string(op) + ": y_true " + shape_str(t.shape()) + " and y_pred " + shape_str(p.shape()) +
                        " differ");
  }
}

bool foreground_row(const Scalar* row, std::size_t k) {
  return static_cast<std::size_t>(std::max_element(row, row + k) - row) != k - 1;
}

}  // namespace

std::size_t count_foreground(const Tensor& y_true) {
  const std::size_t k = y_true.shape().back();
  const std::size_t rows = y_true.numel() / k;
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows; ++r) n += foreground_row(y_true.data().data() + r * k, k) ? 1 : 0;
  return n;
}

Tensor modified_cce(const Tensor& y_true, const Tensor& y_pred, bool normalize) {
  require_same(y_true, y_pred, "modified_cce");
  const std::size_t k = y_true.shape().back();
  if (k < 2) throw ContractError("modified_cce: need at least one class plus background");
  const std::size_t rows = y_true.numel() / k;
  const Scalar* t = y_true.data().data();
  const Scalar* p = y_pred.data().data();

  double loss = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* tr = t + r * k;
    if (!foreground_row(tr, k)) continue;
    ++count;
    double row = 0.0;
    for (std::size_t m = 0; m < k; ++m) {
      if (tr[m] != 0.0) row -= tr[m] * std::log(std::max<double>(p[r * k + m], kLogFloor));
    }
    loss += row;
  }
  const double divisor = normalize && count > 0 ? static_cast<double>(count) : 1.0;
  Tensor y = Tensor::scalar(loss / divisor);

  if (Tape* tape = detail::tape_for({&y_pred})) {
    y.set_requires_grad(true);
    auto tn = y_true.node(), pn = y_pred.node();
    tape->record(y, [tn, pn, rows, k, divisor](const TensorNode& o) {
      const double go = o.grad[0] / divisor;
      Scalar* g = pn->grad_buffer();
      const Scalar* t = tn->data.data();
      const Scalar* p = pn->data.data();
      for (std::size_t r = 0; r < rows; ++r) {
        if (!foreground_row(t + r * k, k)) continue;
        for (std::size_t m = 0; m < k; ++m) {
          const std::size_t i = r * k + m;
          if (t[i] != 0.0 && p[i] > kLogFloor) g[i] -= go * t[i] / p[i];
        }
      }
    });
  }
  return y;
}

Tensor modified_mse(const Tensor& y_true, const Tensor& y_pred, bool* empty) {
  require_same(y_true, y_pred, "modified_mse");
  const std::size_t k = y_true.shape().back();
  const std::size_t rows = y_true.numel() / k;
  const Scalar* t = y_true.data().data();
  const Scalar* p = y_pred.data().data();

  std::vector<unsigned char> active(rows, 0);
  double loss = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t m = 0; m < k; ++m) s += t[r * k + m];
    if (s == 0.0) continue;
    active[r] = 1;
    ++count;
    for (std::size_t m = 0; m < k; ++m) {
      const double d = p[r * k + m] - t[r * k + m];
      loss += d * d;
    }
  }
  if (empty != nullptr) *empty = count == 0;
  const double divisor = count > 0 ? static_cast<double>(count) : 1.0;
  Tensor y = Tensor::scalar(count > 0 ? loss / divisor : 0.0);

  if (Tape* tape = detail::tape_for({&y_pred})) {
    y.set_requires_grad(true);
    auto tn = y_true.node(), pn = y_pred.node();
    tape->record(y, [tn, pn, k, divisor, active = std::move(active)](const TensorNode& o) {
      const double go = 2.0 * o.grad[0] / divisor;
      Scalar* g = pn->grad_buffer();
      for (std::size_t r = 0; r < active.size(); ++r) {
        if (!active[r]) continue;
        for (std::size_t m = 0; m < k; ++m) {
          const std::size_t i = r * k + m;
          g[i] += go * (pn->data[i] - tn->data[i]);
        }
      }
    });
  }
  return y;
}

DetectionLoss detection_loss(const Tensor& true_classes, const Tensor& true_offsets, const Tensor& class_probs,
                             const Tensor& offsets, const LossConfig& cfg) {
  DetectionLoss out;
  Tensor cce = modified_cce(true_classes, class_probs, cfg.normalize_cce);
  Tensor mse = modified_mse(true_offsets, offsets, &out.report.mse_empty);
  out.total = ops::add(cce, ops::scale(mse, cfg.lambda));
  out.report.cce = cce.item();
  out.report.mse = mse.item();
  out.report.total = out.total.item();
  out.report.matched_anchor_count = count_foreground(true_classes);
  return out;
}

}  // namespace defectvit
