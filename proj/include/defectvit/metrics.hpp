#pragma once

// Evaluation metrics: background-skipping accuracy, box MAE in (x, y, w, h)
// pixels, mean IoU, greedy prediction/ground-truth matching and a mergeable
// report.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "defectvit/anchors.hpp"
#include "defectvit/tensor.hpp"

namespace defectvit {

// A metric that may be undefined (empty denominator).
struct Metric {
  double value = 0.0;
  bool defined = false;
};

struct AccuracyCounts {
  std::size_t correct = 0;
  std::size_t total = 0;  // non-background true rows
  Metric metric() const;
};

// Over rows whose true argmax is not the last class: fraction where the
// predicted argmax equals the true argmax. Shapes [..., classes] must match.
AccuracyCounts accuracy_counts(const Tensor& y_true, const Tensor& y_pred);
Metric modified_accuracy(const Tensor& y_true, const Tensor& y_pred);

struct BoxPair {
  BBox truth;
  BBox pred;
};

// Mean over pairs of |dx| + |dy| + |dw| + |dh| with (x, y) the top-left corner.
Metric modified_mae(std::span<const BoxPair> pairs);
Metric mean_iou(std::span<const BoxPair> pairs);

struct MatchResult {
  std::vector<BoxPair> pairs;
  std::vector<std::size_t> pred_index;  // per pair
  std::vector<std::size_t> truth_index;
  std::size_t unmatched_predictions = 0;
  std::size_t unmatched_truths = 0;
};

// Greedy one-to-one matching, highest IoU first (ties: lower prediction
// index, then lower truth index); pairs below min_iou are never formed.
// Class labels are ignored.
MatchResult match_boxes(std::span<const BBox> truths, std::span<const BBox> preds, double min_iou = 0.3);

struct ClassCounts {
  std::size_t truths = 0;
  std::size_t predictions = 0;
  std::size_t matched = 0;
  std::size_t anchors_total = 0;    // non-background true anchors
  std::size_t anchors_correct = 0;  // of those, argmax agrees
};

// Sums that merge exactly across shards.
struct EvalReport {
  std::size_t samples = 0;
  AccuracyCounts anchors;
  std::size_t pairs = 0;
  double abs_error_sum = 0.0;
  double iou_sum = 0.0;
  std::size_t unmatched_predictions = 0;
  std::size_t unmatched_truths = 0;
  std::size_t invalid_boxes = 0;
  std::map<int, ClassCounts> per_class;

  Metric accuracy() const { return anchors.metric(); }
  Metric mae() const;
  Metric mean_iou() const;

  void add_anchors(const Tensor& y_true, const Tensor& y_pred);
  void add_boxes(std::span<const BBox> truths, std::span<const BBox> preds, double min_iou = 0.3);
  void merge(const EvalReport& other);
};

}  // namespace defectvit
