#include "defectvit/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "defectvit/errors.hpp"

namespace defectvit {

BBox BBox::clipped(double width, double height) const {
  BBox b = *this;
  b.x1 = std::clamp(b.x1, 0.0, width);
  b.x2 = std::clamp(b.x2, 0.0, width);
  b.y1 = std::clamp(b.y1, 0.0, height);
  b.y2 = std::clamp(b.y2, 0.0, height);
  return b;
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::min(1.0, inter / uni) : 0.0;
}

AnchorGrid build_anchor_grid(const AnchorGridParams& p) {
  if (p.image_size <= 0 || p.stride <= 0 || p.image_size % p.stride != 0) {
    throw ParameterError("anchor grid: stride " + std::to_string(p.stride) + " must divide image size " +
                         std::to_string(p.image_size));
  }
  if (p.scales.empty() || p.aspect_ratios.empty()) throw ParameterError("anchor grid: scales and ratios must be non-empty");
  for (double s : p.scales)
    if (!(s > 0)) throw ParameterError("anchor grid: scales must be positive");
  for (double r : p.aspect_ratios)
    if (!(r > 0)) throw ParameterError("anchor grid: aspect ratios must be positive");

  AnchorGrid grid{p, {}};
  const int cells = p.image_size / p.stride;
  const double size = p.image_size;
  grid.anchors.reserve(static_cast<std::size_t>(cells * cells) * p.scales.size() * p.aspect_ratios.size());
  for (int row = 0; row < cells; ++row) {
    for (int col = 0; col < cells; ++col) {
      const double cx = (col + 0.5) * p.stride;
      const double cy = (row + 0.5) * p.stride;
      for (double s : p.scales) {
        for (double r : p.aspect_ratios) {
          const double w = s * std::sqrt(r);
          const double h = s / std::sqrt(r);
          BBox a{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, std::nullopt};
          a = a.clipped(size, size);
          if (!a.valid()) {
            throw ContractError("anchor grid: anchor at cell (" + std::to_string(row) + ", " + std::to_string(col) +
                                ") degenerates after clipping");
          }
          grid.anchors.push_back(a);
        }
      }
    }
  }
  return grid;
}

Offsets encode_offsets(const BBox& anchor, const BBox& gt) {
  const double aw = anchor.width(), ah = anchor.height();
  return {(gt.x1 - anchor.x1) / aw, (gt.y1 - anchor.y1) / ah, (gt.x2 - anchor.x2) / aw, (gt.y2 - anchor.y2) / ah};
}

BBox decode_offsets(const BBox& anchor, const Offsets& o) {
  const double aw = anchor.width(), ah = anchor.height();
  return {anchor.x1 + o[0] * aw, anchor.y1 + o[1] * ah, anchor.x2 + o[2] * aw, anchor.y2 + o[3] * ah, std::nullopt};
}

MinMaxScaler::MinMaxScaler(Offsets min, Offsets max) : min_(min), max_(max), fitted_(true) {
  for (int c = 0; c < 4; ++c) {
    if (!(max_[c] > min_[c])) throw ParameterError("scaler: channel " + std::to_string(c) + " has max <= min");
  }
}

MinMaxScaler MinMaxScaler::fit(std::span<const Offsets> offsets) {
  Offsets lo, hi;
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& o : offsets) {
    for (int c = 0; c < 4; ++c) {
      lo[c] = std::min(lo[c], o[c]);
      hi[c] = std::max(hi[c], o[c]);
    }
  }
  for (int c = 0; c < 4; ++c) {
    if (!(hi[c] > lo[c])) {
      throw ParameterError("scaler: offset channel " + std::to_string(c) + " needs at least two distinct values (got " +
                           std::to_string(offsets.size()) + " samples)");
    }
  }
  return MinMaxScaler(lo, hi);
}

Offsets MinMaxScaler::apply(const Offsets& raw) const {
  if (!fitted_) throw ContractError("scaler: apply before fit");
  Offsets out;
  for (int c = 0; c < 4; ++c) out[c] = std::clamp((raw[c] - min_[c]) / (max_[c] - min_[c]), 0.0, 1.0);
  return out;
}

Offsets MinMaxScaler::invert(const Offsets& scaled) const {
  if (!fitted_) throw ContractError("scaler: invert before fit");
  Offsets out;
  for (int c = 0; c < 4; ++c) out[c] = scaled[c] * (max_[c] - min_[c]) + min_[c];
  return out;
}

Assignment assign_anchors(const AnchorGrid& grid, std::span<const BBox> gts, const AssignParams& params) {
  if (!(params.lower >= 0.0 && params.lower < params.upper && params.upper <= 1.0)) {
    throw ParameterError("assign: thresholds must satisfy 0 <= lower < upper <= 1 (lower " +
                         std::to_string(params.lower) + ", upper " + std::to_string(params.upper) + ")");
  }
  const std::size_t n = grid.size();
  Assignment out;
  out.states.assign(n, AnchorState::background);
  out.gt_index.assign(n, -1);
  out.best_iou.assign(n, 0.0);
  if (gts.empty()) return out;

  std::vector<int> best_gt(n, -1);
  std::vector<double> gt_best_iou(gts.size(), 0.0);
  std::vector<std::size_t> gt_best_anchor(gts.size(), 0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(grid.anchors[a], gts[g]);
      if (best_gt[a] < 0 || v > out.best_iou[a]) {
        out.best_iou[a] = v;
        best_gt[a] = static_cast<int>(g);
      }
      if (v > gt_best_iou[g]) {
        gt_best_iou[g] = v;
        gt_best_anchor[g] = a;
      }
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    const double v = out.best_iou[a];
    if (v > params.upper) {
      out.states[a] = AnchorState::assigned;
      out.gt_index[a] = best_gt[a];
    } else if (v >= params.lower) {
      out.states[a] = AnchorState::discarded;
    }
  }
  if (params.force_match) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_best_iou[g] <= 0.0) continue;
      const std::size_t a = gt_best_anchor[g];
      out.states[a] = AnchorState::assigned;
      out.gt_index[a] = best_gt[a];
    }
  }
  return out;
}

std::size_t AnchorTargets::assigned_count() const {
  return static_cast<std::size_t>(std::count(states.begin(), states.end(), AnchorState::assigned));
}

AnchorTargets assign_targets(const AnchorGrid& grid, std::span<const BBox> gts, const AssignParams& params,
                             std::size_t num_classes, const MinMaxScaler& scaler) {
  if (num_classes < 2) throw ParameterError("assign: need at least one defect class plus background");
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const int c = gts[g].class_id.value_or(-1);
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes - 1) {
      throw ParameterError("assign: ground truth " + std::to_string(g) + " has class " + std::to_string(c) +
                           " outside [0, " + std::to_string(num_classes - 1) + ")");
    }
  }
  const Assignment as = assign_anchors(grid, gts, params);
  AnchorTargets t;
  t.num_anchors = grid.size();
  t.num_classes = num_classes;
  t.class_onehot.assign(t.num_anchors * num_classes, 0.0);
  t.offsets.assign(t.num_anchors * 4, 0.0);
  t.states = as.states;
  for (std::size_t a = 0; a < t.num_anchors; ++a) {
    if (as.states[a] != AnchorState::assigned) {
      t.class_onehot[a * num_classes + t.background_class()] = 1.0;
      continue;
    }
    const BBox& gt = gts[static_cast<std::size_t>(as.gt_index[a])];
    t.class_onehot[a * num_classes + static_cast<std::size_t>(*gt.class_id)] = 1.0;
    const Offsets scaled = scaler.apply(encode_offsets(grid.anchors[a], gt));
    std::copy(scaled.begin(), scaled.end(), t.offsets.begin() + static_cast<std::ptrdiff_t>(a * 4));
  }
  return t;
}

std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold, double score_threshold) {
  std::vector<Detection> pool;
  for (const auto& d : detections)
    if (d.score >= score_threshold) pool.push_back(d);
  auto by_rank = [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.anchor_index != b.anchor_index) return a.anchor_index < b.anchor_index;
    return a.class_id < b.class_id;
  };
  std::sort(pool.begin(), pool.end(), by_rank);

  std::vector<Detection> kept;
  std::vector<bool> suppressed(pool.size(), false);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(pool[i]);
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      if (!suppressed[j] && pool[j].class_id == pool[i].class_id && iou(pool[i].box, pool[j].box) > iou_threshold) {
        suppressed[j] = true;
      }
    }
  }
  return kept;
}

}  // namespace defectvit
