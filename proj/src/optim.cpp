#include "defectvit/optim.hpp"

#include <cmath>

#include "defectvit/errors.hpp"

namespace defectvit {

namespace {
Scalar f32(Scalar x) { return static_cast<Scalar>(static_cast<float>(x)); }
}  // namespace

void adam_step(std::span<Tensor> params, const AdamConfig& cfg, AdamState& state) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw ContractError("adam_step: parameter " + std::to_string(i) + " " + shape_str(params[i].shape()) +
                          " has no gradient");
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state built for a different parameter list");

  ++state.step;
  const double c1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].mutable_grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != w.size()) throw ContractError("adam_step: moment size mismatch for parameter " + std::to_string(i));
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= static_cast<Scalar>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      if (cfg.f32_storage) {
        w[j] = f32(w[j]);
        m[j] = f32(m[j]);
        v[j] = f32(v[j]);
      }
    }
    params[i].zero_grad();
  }
}

void round_to_f32(std::span<Tensor> params) {
  for (auto& p : params)
    for (auto& x : p.mutable_data()) x = f32(x);
}

}  // namespace defectvit
