#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "defectvit/rng.hpp"
#include "defectvit/tensor.hpp"

namespace defectvit {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Per-forward context. Dropout masks are keyed on (seed, layer, step,
// sample) so reruns and resumed runs draw identical masks.
struct ForwardContext {
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t sample = 0;

  std::uint64_t dropout_key(std::uint64_t layer) const { return rng::derive({seed, layer, step, sample}); }
};

}  // namespace defectvit
