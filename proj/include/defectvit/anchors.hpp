#pragma once

// Anchor grid, IoU, dual-threshold target assignment, corner-offset
// encoding, min-max offset scaling and class-wise NMS.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace defectvit {

// Axis-aligned box in corner form, pixels.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  std::optional<int> class_id;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return valid() ? width() * height() : 0.0; }
  bool valid() const { return x1 < x2 && y1 < y2; }
  BBox clipped(double width, double height) const;

  bool operator==(const BBox&) const = default;
};

double iou(const BBox& a, const BBox& b);

struct AnchorGridParams {
  int image_size = 64;
  int stride = 16;
  std::vector<double> scales{12, 24, 40};
  std::vector<double> aspect_ratios{0.5, 1.0, 2.0};  // width / height
};

struct AnchorGrid {
  AnchorGridParams params;
  std::vector<BBox> anchors;  // cell-major (row, then column), then scale, then ratio

  std::size_t size() const { return anchors.size(); }
};

// Anchors of area scale^2 and width/height = ratio, centred on cell centres
// and clipped to the image. Throws ParameterError on bad parameters and
// ContractError when an anchor degenerates after clipping.
AnchorGrid build_anchor_grid(const AnchorGridParams& params);

using Offsets = std::array<double, 4>;

// (dx1/aw, dy1/ah, dx2/aw, dy2/ah) with d = gt corner - anchor corner.
Offsets encode_offsets(const BBox& anchor, const BBox& gt);
// Exact inverse of encode_offsets. The result may be invalid (x1 >= x2);
// callers check BBox::valid().
BBox decode_offsets(const BBox& anchor, const Offsets& offsets);

class MinMaxScaler {
 public:
  MinMaxScaler() = default;
  MinMaxScaler(Offsets min, Offsets max);

  // Needs at least two distinct values per channel; throws ParameterError
  // naming the first constant channel otherwise.
  static MinMaxScaler fit(std::span<const Offsets> offsets);

  bool fitted() const { return fitted_; }
  const Offsets& min() const { return min_; }
  const Offsets& max() const { return max_; }

  // Maps into [0, 1], clamping values outside the fit range.
  Offsets apply(const Offsets& raw) const;
  // Affine inverse, no clamping.
  Offsets invert(const Offsets& scaled) const;

 private:
  Offsets min_{}, max_{};
  bool fitted_ = false;
};

enum class AnchorState : std::uint8_t { background, discarded, assigned };

struct Assignment {
  std::vector<AnchorState> states;
  std::vector<int> gt_index;  // -1 unless assigned
  std::vector<double> best_iou;
};

struct AssignParams {
  double upper = 0.6;
  double lower = 0.3;
  bool force_match = true;
};

// Dual-threshold assignment: best-IoU GT per anchor (ties to the lower GT
// index); IoU > upper assigns, IoU < lower is background, otherwise
// discarded. With force_match each GT's best anchor (ties to the lower
// anchor index, IoU > 0) is promoted to assigned against its own best GT.
Assignment assign_anchors(const AnchorGrid& grid, std::span<const BBox> gts, const AssignParams& params);

struct AnchorTargets {
  std::size_t num_anchors = 0;
  std::size_t num_classes = 0;      // background included, at index num_classes - 1
  std::vector<double> class_onehot;  // num_anchors x num_classes
  std::vector<double> offsets;       // num_anchors x 4, scaled
  std::vector<AnchorState> states;

  std::size_t background_class() const { return num_classes - 1; }
  std::size_t assigned_count() const;
};

// Every gt needs class_id in [0, num_classes - 1). Throws ParameterError on
// unordered thresholds or out-of-range classes.
AnchorTargets assign_targets(const AnchorGrid& grid, std::span<const BBox> gts, const AssignParams& params,
                             std::size_t num_classes, const MinMaxScaler& scaler);

struct Detection {
  BBox box;
  int class_id = 0;
  double score = 0.0;
  std::size_t anchor_index = 0;

  bool operator==(const Detection&) const = default;
};

// Drops detections below score_threshold, then per class greedily keeps the
// highest score (ties: lower anchor index) and suppresses same-class boxes
// with IoU > iou_threshold. Output sorted by descending score.
std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold, double score_threshold);

}  // namespace defectvit
