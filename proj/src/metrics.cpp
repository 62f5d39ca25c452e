#include "defectvit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "defectvit/errors.hpp"

namespace defectvit {

namespace {

std::size_t argmax(const Scalar* row, std::size_t k) {
  return static_cast<std::size_t>(std::max_element(row, row + k) - row);
}

double abs_error(const BoxPair& p) {
  return std::fabs(p.pred.x1 - p.truth.x1) + std::fabs(p.pred.y1 - p.truth.y1) +
         std::fabs(p.pred.width() - p.truth.width()) + std::fabs(p.pred.height() - p.truth.height());
}

Metric ratio(double num, std::size_t den) {
  if (den == 0) return {};
  return {num / static_cast<double>(den), true};
}

}  // namespace

Metric AccuracyCounts::metric() const { return ratio(static_cast<double>(correct), total); }

AccuracyCounts accuracy_counts(const Tensor& y_true, const Tensor& y_pred) {
  if (y_true.shape() != y_pred.shape() || y_true.rank() == 0) {
    throw ContractError("modified_accuracy: y_true " + shape_str(y_true.shape()) + " and y_pred " +
                        shape_str(y_pred.shape()) + " differ");
  }
  const std::size_t k = y_true.shape().back();
  const std::size_t rows = y_true.numel() / k;
  AccuracyCounts c;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = argmax(y_true.data().data() + r * k, k);
    if (t == k - 1) continue;
    ++c.total;
    if (argmax(y_pred.data().data() + r * k, k) == t) ++c.correct;
  }
  return c;
}

Metric modified_accuracy(const Tensor& y_true, const Tensor& y_pred) { return accuracy_counts(y_true, y_pred).metric(); }

Metric modified_mae(std::span<const BoxPair> pairs) {
  double s = 0.0;
  for (const auto& p : pairs) s += abs_error(p);
  return ratio(s, pairs.size());
}

Metric mean_iou(std::span<const BoxPair> pairs) {
  double s = 0.0;
  for (const auto& p : pairs) s += iou(p.truth, p.pred);
  return ratio(s, pairs.size());
}

MatchResult match_boxes(std::span<const BBox> truths, std::span<const BBox> preds, double min_iou) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
  for (std::size_t p = 0; p < preds.size(); ++p)
    for (std::size_t t = 0; t < truths.size(); ++t) {
      const double v = iou(truths[t], preds[p]);
      if (v >= min_iou && v > 0.0) cand.emplace_back(v, p, t);
    }
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<bool> used_p(preds.size(), false), used_t(truths.size(), false);
  MatchResult m;
  for (const auto& [v, p, t] : cand) {
    if (used_p[p] || used_t[t]) continue;
    used_p[p] = used_t[t] = true;
    m.pairs.push_back({truths[t], preds[p]});
    m.pred_index.push_back(p);
    m.truth_index.push_back(t);
  }
  m.unmatched_predictions = preds.size() - m.pairs.size();
  m.unmatched_truths = truths.size() - m.pairs.size();
  return m;
}

Metric EvalReport::mae() const { return ratio(abs_error_sum, pairs); }
Metric EvalReport::mean_iou() const { return ratio(iou_sum, pairs); }

void EvalReport::add_anchors(const Tensor& y_true, const Tensor& y_pred) {
  const AccuracyCounts c = accuracy_counts(y_true, y_pred);
  anchors.correct += c.correct;
  anchors.total += c.total;
  const std::size_t k = y_true.shape().back();
  const std::size_t rows = y_true.numel() / k;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = argmax(y_true.data().data() + r * k, k);
    if (t == k - 1) continue;
    auto& pc = per_class[static_cast<int>(t)];
    ++pc.anchors_total;
    if (argmax(y_pred.data().data() + r * k, k) == t) ++pc.anchors_correct;
  }
}

void EvalReport::add_boxes(std::span<const BBox> truths, std::span<const BBox> preds, double min_iou) {
  const MatchResult m = match_boxes(truths, preds, min_iou);
  for (const auto& t : truths) ++per_class[t.class_id.value_or(-1)].truths;
  for (const auto& p : preds) ++per_class[p.class_id.value_or(-1)].predictions;
  for (std::size_t i = 0; i < m.pairs.size(); ++i) {
    ++per_class[m.pairs[i].truth.class_id.value_or(-1)].matched;
    abs_error_sum += abs_error(m.pairs[i]);
    iou_sum += iou(m.pairs[i].truth, m.pairs[i].pred);
  }
  pairs += m.pairs.size();
  unmatched_predictions += m.unmatched_predictions;
  unmatched_truths += m.unmatched_truths;
}

void EvalReport::merge(const EvalReport& o) {
  samples += o.samples;
  anchors.correct += o.anchors.correct;
  anchors.total += o.anchors.total;
  pairs += o.pairs;
  abs_error_sum += o.abs_error_sum;
  iou_sum += o.iou_sum;
  unmatched_predictions += o.unmatched_predictions;
  unmatched_truths += o.unmatched_truths;
  invalid_boxes += o.invalid_boxes;
  for (const auto& [cls, c] : o.per_class) {
    auto& mine = per_class[cls];
    mine.truths += c.truths;
    mine.predictions += c.predictions;
    mine.matched += c.matched;
    mine.anchors_total += c.anchors_total;
    mine.anchors_correct += c.anchors_correct;
  }
}

}  // namespace defectvit
