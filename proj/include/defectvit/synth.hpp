#pragma once

// Procedural metal-surface defect images with tight box annotations,
// preprocessing into model input, and box-consistent augmentation.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "defectvit/anchors.hpp"
#include "defectvit/image.hpp"
#include "defectvit/tensor.hpp"

namespace defectvit {

enum class DefectKind {
  scratch,
  welding_line,
  inclusion,
  water_spot,
  oil_spot,
  crescent_gap,
  texture_variation,
  color_variation,
};

// All renderable classes, in canonical order.
const std::vector<std::string>& defect_class_names();
DefectKind defect_kind(const std::string& name);  // throws ConfigError

struct GenConfig {
  int image_size = 64;
  std::vector<std::string> classes{"scratch", "welding_line", "inclusion"};
  int min_defects = 1;
  int max_defects = 4;
  bool overlap_allowed = true;
  double noise_level = 0.02;  // sensor noise std, intensity units
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct SampleRecord {
  std::string id;
  Image image;
  std::vector<BBox> boxes;  // class_id indexes GenConfig::classes
  std::uint64_t seed = 0;
  std::string split;

  bool operator==(const SampleRecord&) const = default;
};

// Intermediate layers of one rendering, for auditing.
struct RenderTrace {
  Image background;  // texture only
  Image clean;       // texture plus defects, before sensor noise
  std::vector<Image> alphas;  // per annotation, same order
};

// Deterministic in (cfg, sample_seed).
SampleRecord generate_sample(const GenConfig& cfg, std::uint64_t sample_seed, RenderTrace* trace = nullptr);

// Seeds of different splits come from disjoint ranges.
std::uint64_t split_seed(const std::string& split, std::size_t index);
std::vector<SampleRecord> generate_split(const GenConfig& cfg, const std::string& split, std::size_t count,
                                         int threads = 1);

// Bilinear resize (pixel-centre aligned), clip to [0, 1], standardize with
// fixed mean 0.5 and std 0.25. Returns [1 x size x size].
Tensor preprocess(const Image& image, int target_size);
Image resize_bilinear(const Image& image, int width, int height);
// Boxes rescaled by the same factors as preprocess.
std::vector<BBox> rescale_boxes(std::span<const BBox> boxes, int from_w, int from_h, int to_w, int to_h);

SampleRecord hflip(const SampleRecord& s);
SampleRecord vflip(const SampleRecord& s);
SampleRecord rotate90(const SampleRecord& s, int quarter_turns);  // clockwise, square images
// Zoom about the centre by `factor`, boxes clipped; the image keeps its size.
SampleRecord scale_jitter(const SampleRecord& s, double factor);

// Random flips, quarter turns and a zoom in [0.9, 1.1]. A draw that
// shrinks any box below 9 px^2 is discarded and redrawn; after 16 failed
// draws the sample is returned unchanged.
SampleRecord augment(const SampleRecord& s, std::mt19937_64& rng);

}  // namespace defectvit
