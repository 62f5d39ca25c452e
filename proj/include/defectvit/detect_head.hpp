#pragma once

// CNN trunk over the patch-embedding grid, shared by a classification MLP
// (per-anchor softmax) and a regression MLP (per-anchor sigmoid).

#include <random>
#include <span>
#include <vector>

#include "defectvit/anchors.hpp"
#include "defectvit/params.hpp"
#include "defectvit/tensor.hpp"
#include "defectvit/vit.hpp"

namespace defectvit {

struct HeadConfig {
  std::vector<int> cnn_channels{64, 32};
  int cnn_kernel = 3;
  std::vector<int> mlp_hidden{256};
  double dropout_rate = 0.1;
  int num_anchors = 144;
  int num_classes = 4;  // background included, last index

  void validate() const;  // throws ConfigError
};

// What feeds the trunk: the transformer encoder, or the raw flattened
// patches (ablation baseline).
enum class EncoderKind { vit, patch_passthrough };

struct ModelConfig {
  ViTConfig vit;
  HeadConfig head;
  EncoderKind encoder = EncoderKind::vit;

  void validate() const;
  // Channels of the grid the trunk sees.
  int trunk_in_channels() const;
  std::size_t flat_features() const;
};

struct DenseLayer {
  Tensor w;  // in x out
  Tensor b;  // out
};

struct HeadWeights {
  std::vector<Tensor> conv_kernels;  // [c_out x c_in x k x k]
  std::vector<Tensor> conv_biases;
  std::vector<DenseLayer> cls;  // hidden layers then the output layer
  std::vector<DenseLayer> reg;

  static HeadWeights init(const ModelConfig& cfg, std::mt19937_64& gen);
  void collect(NamedParams& out, const std::string& prefix = "head.") const;
  void check(const ModelConfig& cfg) const;  // throws ConfigError
};

// class_probs [batch x anchors x classes], offsets [batch x anchors x 4].
struct DetectionOutput {
  Tensor class_probs;
  Tensor offsets;
};

// [num_patches x channels] -> flat [channels_last * side * side].
Tensor trunk(const Tensor& embeddings, const HeadConfig& cfg, const HeadWeights& weights);

// shared [batch x features] -> per-anchor distributions and offsets.
DetectionOutput heads(const Tensor& shared, const HeadConfig& cfg, const HeadWeights& weights,
                      const ForwardContext& ctx);

class DetectorModel {
 public:
  DetectorModel() = default;
  DetectorModel(ModelConfig cfg, std::uint64_t seed);
  DetectorModel(ModelConfig cfg, ViTWeights vit, HeadWeights head);

  const ModelConfig& config() const { return cfg_; }
  const ViTWeights& vit_weights() const { return vit_; }
  const HeadWeights& head_weights() const { return head_; }

  // Stable names: "vit.*" (absent for passthrough) then "head.*".
  NamedParams named_params() const;
  std::vector<Tensor> parameters() const;

  // images: each [channels x size x size]. Sample i draws dropout masks
  // with sample index ctx.sample + i.
  DetectionOutput forward(std::span<const Tensor> images, const ForwardContext& ctx) const;
  Tensor features(const Tensor& image, const ForwardContext& ctx) const;

 private:
  ModelConfig cfg_;
  ViTWeights vit_;
  HeadWeights head_;
};

struct PredictParams {
  double confidence_threshold = 0.5;
  double nms_iou = 0.5;
};

struct PredictDiagnostics {
  std::size_t background = 0;
  std::size_t low_confidence = 0;
  std::size_t invalid_boxes = 0;
};

// Turns sample `index` of a head output into detections: background argmax
// and low-confidence anchors dropped, offsets unscaled and decoded, boxes
// clipped, then class-wise NMS.
std::vector<Detection> decode_predictions(const DetectionOutput& out, std::size_t index, const AnchorGrid& grid,
                                          const MinMaxScaler& scaler, const PredictParams& params,
                                          PredictDiagnostics* diagnostics = nullptr);

std::vector<Detection> predict(const DetectorModel& model, const Tensor& image, const AnchorGrid& grid,
                               const MinMaxScaler& scaler, const PredictParams& params,
                               PredictDiagnostics* diagnostics = nullptr);

}  // namespace defectvit
