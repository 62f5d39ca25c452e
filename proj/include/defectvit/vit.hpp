#pragma once

// Patch-based transformer encoder: patchify, linear patch embedding plus
// learnable positional embedding, pre-norm transformer blocks, final norm.
// No class token; every patch embedding is returned.

#include <random>
#include <vector>

#include "defectvit/params.hpp"
#include "defectvit/tensor.hpp"

namespace defectvit {

struct ViTConfig {
  int image_size = 64;
  int patch_size = 8;
  int channels = 1;
  int embed_dim = 32;
  int num_heads = 4;
  int num_layers = 2;
  double mlp_ratio = 2.0;
  double dropout_rate = 0.1;

  void validate() const;  // throws ConfigError
  int grid_side() const { return image_size / patch_size; }
  int num_patches() const { return grid_side() * grid_side(); }
  int patch_dim() const { return channels * patch_size * patch_size; }
  int mlp_hidden() const;
};

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderBlockWeights {
  Tensor norm1_gamma, norm1_beta;
  AttentionWeights attention;
  Tensor norm2_gamma, norm2_beta;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct ViTWeights {
  Tensor projection;       // patch_dim x embed_dim
  Tensor projection_bias;  // embed_dim
  Tensor positional;       // num_patches x embed_dim
  std::vector<EncoderBlockWeights> blocks;
  Tensor final_gamma, final_beta;

  // normal(0, 0.02) projections and positional table, zero biases, unit norms.
  static ViTWeights init(const ViTConfig& cfg, std::mt19937_64& gen);
  void collect(NamedParams& out, const std::string& prefix = "vit.") const;
  void check(const ViTConfig& cfg) const;  // throws ConfigError on shape mismatch
};

// [c x h x w] -> [num_patches x c*p*p]; patches row-major from the top-left,
// each flattened channel-major then row-major.
Tensor patchify(const Tensor& image, int patch_size);
Tensor unpatchify(const Tensor& patches, int channels, int image_size, int patch_size);

// Optional per-layer attention probabilities, [heads][n x n].
struct AttentionTrace {
  std::vector<std::vector<Tensor>> layers;
};

Tensor multi_head_self_attention(const Tensor& x, const AttentionWeights& w, int num_heads,
                                 std::vector<Tensor>* probabilities = nullptr);

Tensor encode(const Tensor& image, const ViTConfig& cfg, const ViTWeights& weights, const ForwardContext& ctx,
              AttentionTrace* trace = nullptr);

}  // namespace defectvit
