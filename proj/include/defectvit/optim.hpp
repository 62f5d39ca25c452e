#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "defectvit/tensor.hpp"

namespace defectvit {

struct AdamConfig {
  Scalar lr = 1e-3;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
  // Round weights and moments to the nearest f32 after every update so the
  // whole optimizer state survives an f32 checkpoint bit-exactly.
  bool f32_storage = false;
};

// First/second moment buffers, one per parameter, in parameter order.
struct AdamState {
  std::vector<std::vector<Scalar>> m;
  std::vector<std::vector<Scalar>> v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update in place, then zeroes the gradients.
// Throws ContractError when a parameter has no gradient.
void adam_step(std::span<Tensor> params, const AdamConfig& cfg, AdamState& state);

// Rounds every value to the nearest f32.
void round_to_f32(std::span<Tensor> params);

}  // namespace defectvit
