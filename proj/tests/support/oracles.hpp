#pragma once

// Independent reference implementations shared by the unit and acceptance
// tests: rasterized IoU, brute-force assignment and NMS, and row loops for
// the losses and metrics.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "defectvit/anchors.hpp"
#include "defectvit/metrics.hpp"
#include "defectvit/tensor.hpp"

namespace defectvit::testing {

inline BBox box(double x1, double y1, double x2, double y2, std::optional<int> cls = std::nullopt) {
  return BBox{x1, y1, x2, y2, cls};
}

// Pixel-counting IoU for integer-coordinate boxes: pixel (x, y) covers
// [x, x+1) x [y, y+1).
inline double raster_iou(const BBox& a, const BBox& b) {
  const int lo = static_cast<int>(std::min({a.x1, a.y1, b.x1, b.y1}));
  const int hi = static_cast<int>(std::max({a.x2, a.y2, b.x2, b.y2}));
  long inter = 0, uni = 0;
  for (int y = lo; y < hi; ++y) {
    for (int x = lo; x < hi; ++x) {
      const bool ia = x >= a.x1 && x < a.x2 && y >= a.y1 && y < a.y2;
      const bool ib = x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
      inter += ia && ib;
      uni += ia || ib;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline BBox random_int_box(std::mt19937_64& gen, int extent) {
  std::uniform_int_distribution<int> pos(0, extent - 2);
  int x1 = pos(gen), y1 = pos(gen);
  std::uniform_int_distribution<int> wx(1, extent - x1), wy(1, extent - y1);
  return box(x1, y1, x1 + wx(gen), y1 + wy(gen));
}

inline BBox random_box(std::mt19937_64& gen, double extent, double min_size = 2.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double w = min_size + u(gen) * (extent / 2);
  const double h = min_size + u(gen) * (extent / 2);
  const double x = u(gen) * (extent - w);
  const double y = u(gen) * (extent - h);
  return box(x, y, x + w, y + h);
}

// Independent overlap formula for the assignment oracle.
inline double oracle_iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return inter / uni;
}

// Exhaustive double-loop reference for dual-threshold assignment with the
// force-match extension.
inline std::vector<AnchorState> oracle_states(const std::vector<BBox>& anchors, const std::vector<BBox>& gts, double upper,
                                       double lower) {
  const std::size_t n = anchors.size(), m = gts.size();
  std::vector<std::vector<double>> table(n, std::vector<double>(m));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t g = 0; g < m; ++g) table[a][g] = oracle_iou(anchors[a], gts[g]);
  std::vector<AnchorState> states(n, AnchorState::background);
  for (std::size_t a = 0; a < n; ++a) {
    const double best = m ? *std::max_element(table[a].begin(), table[a].end()) : 0.0;
    if (best > upper) states[a] = AnchorState::assigned;
    else if (best >= lower) states[a] = AnchorState::discarded;
  }
  for (std::size_t g = 0; g < m; ++g) {
    double best = 0.0;
    std::size_t arg = n;
    for (std::size_t a = 0; a < n; ++a) {
      if (table[a][g] > best) {
        best = table[a][g];
        arg = a;
      }
    }
    if (arg < n) states[arg] = AnchorState::assigned;
  }
  return states;
}

// O(n^2) selection-loop NMS reference.
inline std::vector<Detection> oracle_nms(std::vector<Detection> d, double iou_thr, double score_thr) {
  std::erase_if(d, [&](const Detection& x) { return x.score < score_thr; });
  std::vector<Detection> out;
  while (!d.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.size(); ++i) {
      const auto& a = d[i];
      const auto& b = d[best];
      if (a.score > b.score || (a.score == b.score && (a.anchor_index < b.anchor_index ||
                                                       (a.anchor_index == b.anchor_index && a.class_id < b.class_id)))) {
        best = i;
      }
    }
    const Detection keep = d[best];
    out.push_back(keep);
    std::vector<Detection> rest;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (i == best) continue;
      if (d[i].class_id == keep.class_id && oracle_iou(d[i].box, keep.box) > iou_thr) continue;
      rest.push_back(d[i]);
    }
    d = std::move(rest);
  }
  return out;
}

inline std::vector<Detection> random_detections(std::mt19937_64& gen, std::size_t n) {
  std::vector<Detection> out;
  std::uniform_int_distribution<int> cls(0, 2);
  std::uniform_int_distribution<int> coarse(0, 9);
  for (std::size_t i = 0; i < n; ++i) {
    // Coarse scores force ties so the tie-break rule is exercised.
    out.push_back({random_int_box(gen, 32), cls(gen), coarse(gen) / 9.0, i});
  }
  std::shuffle(out.begin(), out.end(), gen);
  return out;
}

inline Tensor onehot(const std::vector<int>& labels, std::size_t k) {
  std::vector<Scalar> v(labels.size() * k, 0.0);
  for (std::size_t r = 0; r < labels.size(); ++r) v[r * k + static_cast<std::size_t>(labels[r])] = 1.0;
  return Tensor({labels.size(), k}, v);
}

inline std::vector<int> random_labels(std::size_t n, int k, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> d(0, k - 1);
  std::vector<int> out(n);
  for (auto& l : out) l = d(gen);
  return out;
}

inline Tensor random_distributions(std::size_t rows, std::size_t k, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> d(0.01, 1.0);
  std::vector<Scalar> v(rows * k);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t m = 0; m < k; ++m) s += (v[r * k + m] = d(gen));
    for (std::size_t m = 0; m < k; ++m) v[r * k + m] /= s;
  }
  return Tensor({rows, k}, v);
}

// Row-by-row references.
inline double cce_loop(const Tensor& t, const Tensor& p) {
  const std::size_t k = t.shape().back(), rows = t.numel() / k;
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < k; ++m)
      if (t.data()[r * k + m] > t.data()[r * k + best]) best = m;
    if (best == k - 1) continue;
    double row = 0.0;
    for (std::size_t m = 0; m < k; ++m)
      if (t.data()[r * k + m] != 0.0) row -= t.data()[r * k + m] * std::log(std::max(p.data()[r * k + m], 1e-7));
    loss += row;
  }
  return loss;
}

inline double mse_loop(const Tensor& t, const Tensor& p) {
  const std::size_t rows = t.numel() / 4;
  double loss = 0.0;
  int count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (int m = 0; m < 4; ++m) s += t.data()[r * 4 + m];
    if (s == 0.0) continue;
    ++count;
    for (int m = 0; m < 4; ++m) {
      const double d = p.data()[r * 4 + m] - t.data()[r * 4 + m];
      loss += d * d;
    }
  }
  return count ? loss / count : 0.0;
}

inline Tensor append_rows(const Tensor& a, const Tensor& extra) {
  std::vector<Scalar> v(a.data().begin(), a.data().end());
  v.insert(v.end(), extra.data().begin(), extra.data().end());
  return Tensor({a.dim(0) + extra.dim(0), a.dim(1)}, v);
}

// Modified accuracy over [rows x k] one-hot truths.
inline Metric accuracy_loop(const Tensor& t, const Tensor& p) {
  const std::size_t k = t.shape().back(), rows = t.numel() / k;
  int correct = 0, total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t label = 0, best = 0;
    for (std::size_t m = 1; m < k; ++m) {
      if (t.data()[r * k + m] > t.data()[r * k + label]) label = m;
      if (p.data()[r * k + m] > p.data()[r * k + best]) best = m;
    }
    if (label == k - 1) continue;
    ++total;
    correct += best == label;
  }
  if (total == 0) return {};
  return {static_cast<double>(correct) / total, true};
}

// Eq. 2 on (x, y, w, h) with (x, y) the top-left corner.
inline double mae_loop(const std::vector<BoxPair>& pairs) {
  double sum = 0;
  for (const auto& p : pairs) {
    sum += std::fabs(p.pred.x1 - p.truth.x1) + std::fabs(p.pred.y1 - p.truth.y1) +
           std::fabs((p.pred.x2 - p.pred.x1) - (p.truth.x2 - p.truth.x1)) +
           std::fabs((p.pred.y2 - p.pred.y1) - (p.truth.y2 - p.truth.y1));
  }
  return sum / static_cast<double>(pairs.size());
}

// Eqs. 3-4 with the overlap written out.
inline double mean_iou_loop(const std::vector<BoxPair>& pairs) {
  double sum = 0;
  for (const auto& p : pairs) sum += oracle_iou(p.truth, p.pred);
  return sum / static_cast<double>(pairs.size());
}

}  // namespace defectvit::testing
