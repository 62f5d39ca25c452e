#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "defectvit/tensor.hpp"

namespace defectvit::ops {

// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // 2-D only
Tensor reshape(const Tensor& a, Shape shape);

// Binary elementwise ops. `b` either matches `a` exactly or matches a
// trailing suffix of a's shape, in which case it is broadcast over the
// leading dimensions (bias rows, per-feature scales).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);

Tensor relu(const Tensor& x);  // d/dx at 0 is 0
Tensor gelu(const Tensor& x);  // erf form
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);  // throws DomainError on x <= 0
Tensor square(const Tensor& x);

Tensor softmax_lastdim(const Tensor& x);
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = 1e-5);

// Training mode keeps each element with probability 1 - rate and rescales
// survivors by 1/(1 - rate). The keep mask is a pure function of `seed`.
Tensor dropout(const Tensor& x, Scalar rate, bool training, std::uint64_t seed);

// Cross-correlation of x [c_in x h x w] with kernels [c_out x c_in x kh x kw].
Tensor conv2d(const Tensor& x, const Tensor& kernels, int stride, int padding);
// Same, plus a per-output-channel bias [c_out].
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, int stride, int padding);

// Columns [begin, end) of a 2-D tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);
// Stacks equally shaped tensors along a new leading dimension.
Tensor stack(std::span<const Tensor> parts);

Tensor sum(const Tensor& x);   // scalar, f64 accumulation
Tensor mean(const Tensor& x);  // scalar, f64 accumulation

namespace kernels {
// C[m x n] (+)= op(A) . op(B), row-major.
void gemm(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n,
          bool trans_a, bool trans_b, bool accumulate);
}  // namespace kernels

}  // namespace defectvit::ops
