#include "defectvit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "defectvit/errors.hpp"
#include "defectvit/rng.hpp"

namespace defectvit::ops {

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

// Number of leading repetitions of `b` inside `a`, or throws.
std::size_t broadcast_outer(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!ok) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
  }
  return b.numel() == 0 ? 0 : a.numel() / b.numel();
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, Forward f, Derivative df) {
  std::vector<Scalar> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  Tensor y(x.shape(), std::move(out));
  if (Tape* tape = detail::tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node();
    tape->record(y, [xn, df](const TensorNode& o) {
      if (!xn->requires_grad) return;
      Scalar* gx = xn->grad_buffer();
      for (std::size_t i = 0; i < o.data.size(); ++i) gx[i] += o.grad[i] * df(xn->data[i], o.data[i]);
    });
  }
  return y;
}

}  // namespace

namespace kernels {

void gemm(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n, bool trans_a,
          bool trans_b, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      Scalar* crow = c + i * n;
      const Scalar* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const Scalar av = arow[p];
        if (av == 0.0) continue;
        const Scalar* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (trans_a && !trans_b) {
    // a stored [k x m]
    for (std::size_t p = 0; p < k; ++p) {
      const Scalar* arow = a + p * m;
      const Scalar* brow = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const Scalar av = arow[i];
        if (av == 0.0) continue;
        Scalar* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // b stored [n x k]
    for (std::size_t i = 0; i < m; ++i) {
      const Scalar* arow = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const Scalar* brow = b + j * k;
        Scalar acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
        std::size_t p = 0;
        for (; p + 8 <= k; p += 8) {
          for (int l = 0; l < 8; ++l) acc[l] += arow[p + l] * brow[p + l];
        }
        Scalar s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
        for (; p < k; ++p) s += arow[p] * brow[p];
        c[i * n + j] += s;
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        Scalar s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
        c[i * n + j] += s;
      }
    }
  }
}

}  // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Scalar> out(m * n);
  kernels::gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false, false, false);
  Tensor y({m, n}, std::move(out));
  if (Tape* tape = detail::tape_for({&a, &b})) {
    y.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node();
    tape->record(y, [an, bn, m, k, n](const TensorNode& o) {
      if (an->requires_grad) kernels::gemm(o.grad.data(), bn->data.data(), an->grad_buffer(), m, n, k, false, true, true);
      if (bn->requires_grad) kernels::gemm(an->data.data(), o.grad.data(), bn->grad_buffer(), k, m, n, true, false, true);
    });
  }
  return y;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<Scalar> out(r * c);
  auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  Tensor y({c, r}, std::move(out));
  if (Tape* tape = detail::tape_for({&a})) {
    y.set_requires_grad(true);
    NodePtr an = a.node();
    tape->record(y, [an, r, c](const TensorNode& o) {
      Scalar* g = an->grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
    });
  }
  return y;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor y(std::move(shape), std::vector<Scalar>(a.data().begin(), a.data().end()));
  if (Tape* tape = detail::tape_for({&a})) {
    y.set_requires_grad(true);
    NodePtr an = a.node();
    tape->record(y, [an](const TensorNode& o) {
      Scalar* g = an->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    });
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "add");
  const std::size_t inner = b.numel();
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < inner; ++j) out[o * inner + j] += bd[j];
  Tensor y(a.shape(), std::move(out));
  if (Tape* tape = detail::tape_for({&a, &b})) {
    y.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node();
    tape->record(y, [an, bn, outer, inner](const TensorNode& o) {
      if (an->requires_grad) {
        Scalar* g = an->grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
      if (bn->requires_grad) {
        Scalar* g = bn->grad_buffer();
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t j = 0; j < inner; ++j) g[j] += o.grad[r * inner + j];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "sub");
  const std::size_t inner = b.numel();
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < inner; ++j) out[o * inner + j] -= bd[j];
  Tensor y(a.shape(), std::move(out));
  if (Tape* tape = detail::tape_for({&a, &b})) {
    y.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node();
    tape->record(y, [an, bn, outer, inner](const TensorNode& o) {
      if (an->requires_grad) {
        Scalar* g = an->grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
      if (bn->requires_grad) {
        Scalar* g = bn->grad_buffer();
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t j = 0; j < inner; ++j) g[j] -= o.grad[r * inner + j];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "mul");
  const std::size_t inner = b.numel();
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < inner; ++j) out[o * inner + j] *= bd[j];
  Tensor y(a.shape(), std::move(out));
  if (Tape* tape = detail::tape_for({&a, &b})) {
    y.set_requires_grad(true);
    NodePtr an = a.node(), bn = b.node();
    tape->record(y, [an, bn, outer, inner](const TensorNode& o) {
      if (an->requires_grad) {
        Scalar* g = an->grad_buffer();
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t j = 0; j < inner; ++j) g[r * inner + j] += o.grad[r * inner + j] * bn->data[j];
      }
      if (bn->requires_grad) {
        Scalar* g = bn->grad_buffer();
        for (std::size_t r = 0; r < outer; ++r)
          for (std::size_t j = 0; j < inner; ++j) g[j] += o.grad[r * inner + j] * an->data[r * inner + j];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, Scalar factor) {
  return unary(
      a, [factor](Scalar v) { return v * factor; }, [factor](Scalar, Scalar) { return factor; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](Scalar v) { return v > 0.0 ? v : 0.0; }, [](Scalar v, Scalar) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      x,
      [](Scalar v) {
        const double d = v;
        return static_cast<Scalar>(0.5 * d * (1.0 + std::erf(d * inv_sqrt2)));
      },
      [](Scalar v, Scalar) {
        const double d = v;
        const double cdf = 0.5 * (1.0 + std::erf(d * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * d * d);
        return static_cast<Scalar>(cdf + d * pdf);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](Scalar v) {
        const double d = v;
        return static_cast<Scalar>(d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d)));
      },
      [](Scalar, Scalar y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  for (Scalar v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(
      x, [](Scalar v) { return static_cast<Scalar>(std::log(static_cast<double>(v))); },
      [](Scalar v, Scalar) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](Scalar v) { return v * v; }, [](Scalar v, Scalar) { return 2.0 * v; });
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("softmax_lastdim: empty last dimension");
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.numel() / k;
  std::vector<Scalar> out(x.numel());
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = in.data() + r * k;
    const Scalar mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    for (std::size_t j = 0; j < k; ++j)
      out[r * k + j] = static_cast<Scalar>(std::exp(static_cast<double>(row[j]) - mx) / z);
  }
  Tensor y(x.shape(), std::move(out));
  if (Tape* tape = detail::tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node();
    tape->record(y, [xn, rows, k](const TensorNode& o) {
      Scalar* g = xn->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* yr = o.data.data() + r * k;
        const Scalar* gr = o.grad.data() + r * k;
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(gr[j]) * yr[j];
        for (std::size_t j = 0; j < k; ++j) g[r * k + j] += static_cast<Scalar>(yr[j] * (gr[j] - dot));
      }
    });
  }
  return y;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  if (x.rank() == 0) throw DimensionError("layernorm: scalar input");
  const std::size_t d = x.shape().back();
  if (d == 0 || gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layernorm: feature size " + std::to_string(d) + " vs gamma " + shape_str(gamma.shape()) +
                         ", beta " + shape_str(beta.shape()));
  }
  if (!(eps > 0.0)) throw ParameterError("layernorm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<Scalar> xhat(x.numel()), rstd(rows), out(x.numel());
  auto in = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = static_cast<Scalar>(rs);
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mu) * rs;
      xhat[r * d + j] = static_cast<Scalar>(xh);
      out[r * d + j] = static_cast<Scalar>(xh * gd[j] + bd[j]);
    }
  }
  Tensor y(x.shape(), std::move(out));
  if (Tape* tape = detail::tape_for({&x, &gamma, &beta})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
    tape->record(y, [xn, gn, bn, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](const TensorNode& o) {
      if (gn->requires_grad) {
        Scalar* g = gn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[r * d + j] * xhat[r * d + j];
      }
      if (bn->requires_grad) {
        Scalar* g = bn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[r * d + j];
      }
      if (xn->requires_grad) {
        Scalar* g = xn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = static_cast<double>(o.grad[r * d + j]) * gn->data[j];
            m1 += dxh;
            m2 += dxh * xhat[r * d + j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = static_cast<double>(o.grad[r * d + j]) * gn->data[j];
            g[r * d + j] += static_cast<Scalar>(rstd[r] * (dxh - m1 - xhat[r * d + j] * m2));
          }
        }
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& x, Scalar rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const Scalar keep_scale = 1.0 / (1.0 - rate);
  std::vector<Scalar> mask(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng::counter_uniform(seed, i) >= rate ? keep_scale : 0.0;
  }
  std::vector<Scalar> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
  Tensor y(x.shape(), std::move(out));
  if (Tape* tape = detail::tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node();
    tape->record(y, [xn, mask = std::move(mask)](const TensorNode& o) {
      Scalar* g = xn->grad_buffer();
      for (std::size_t i = 0; i < mask.size(); ++i) g[i] += o.grad[i] * mask[i];
    });
  }
  return y;
}

namespace {

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, kh, kw, h_out, w_out;
  int stride, pad;
  std::size_t patch() const { return c_in * kh * kw; }
  std::size_t positions() const { return h_out * w_out; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& k, int stride, int padding) {
  require_rank(x, 3, "conv2d input");
  require_rank(k, 4, "conv2d kernels");
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  if (padding < 0) throw ParameterError("conv2d: padding must be >= 0");
  if (k.dim(1) != x.dim(0)) {
    throw DimensionError("conv2d: kernels " + shape_str(k.shape()) + " expect " + std::to_string(k.dim(1)) +
                         " input channels, input is " + shape_str(x.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), k.dim(0), k.dim(2), k.dim(3), 0, 0, stride, padding};
  const std::size_t ph = g.h + 2 * static_cast<std::size_t>(padding);
  const std::size_t pw = g.w + 2 * static_cast<std::size_t>(padding);
  if (g.kh > ph || g.kw > pw || g.kh == 0 || g.kw == 0) {
    throw DimensionError("conv2d: kernel " + shape_str(k.shape()) + " larger than padded input " +
                         std::to_string(ph) + "x" + std::to_string(pw));
  }
  g.h_out = (ph - g.kh) / stride + 1;
  g.w_out = (pw - g.kw) / stride + 1;
  return g;
}

// cols[(c, i, j) x (oy, ox)]
void im2col(const ConvGeometry& g, const Scalar* x, Scalar* cols) {
  const std::size_t L = g.positions();
  for (std::size_t c = 0; c < g.c_in; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * L;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long y = static_cast<long>(oy) * g.stride + static_cast<long>(i) - g.pad;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long xx = static_cast<long>(ox) * g.stride + static_cast<long>(j) - g.pad;
            const bool inside = y >= 0 && xx >= 0 && y < static_cast<long>(g.h) && xx < static_cast<long>(g.w);
            row[oy * g.w_out + ox] = inside ? x[(c * g.h + y) * g.w + xx] : 0.0;
          }
        }
      }
}

void col2im_add(const ConvGeometry& g, const Scalar* cols, Scalar* dx) {
  const std::size_t L = g.positions();
  for (std::size_t c = 0; c < g.c_in; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * L;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const long y = static_cast<long>(oy) * g.stride + static_cast<long>(i) - g.pad;
          if (y < 0 || y >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const long xx = static_cast<long>(ox) * g.stride + static_cast<long>(j) - g.pad;
            if (xx < 0 || xx >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + y) * g.w + xx] += row[oy * g.w_out + ox];
          }
        }
      }
}

Tensor conv2d_impl(const Tensor& x, const Tensor& k, const Tensor* bias, int stride, int padding) {
  const ConvGeometry g = conv_geometry(x, k, stride, padding);
  if (bias != nullptr && bias->numel() != g.c_out) {
    throw DimensionError("conv2d: bias " + shape_str(bias->shape()) + " for " + std::to_string(g.c_out) + " channels");
  }
  const std::size_t P = g.patch(), L = g.positions();
  std::vector<Scalar> cols(P * L);
  im2col(g, x.data().data(), cols.data());
  std::vector<Scalar> out(g.c_out * L);
  kernels::gemm(k.data().data(), cols.data(), out.data(), g.c_out, P, L, false, false, false);
  if (bias != nullptr) {
    auto bd = bias->data();
    for (std::size_t o = 0; o < g.c_out; ++o)
      for (std::size_t l = 0; l < L; ++l) out[o * L + l] += bd[o];
  }
  Tensor y({g.c_out, g.h_out, g.w_out}, std::move(out));
  Tape* tape = bias != nullptr ? detail::tape_for({&x, &k, bias}) : detail::tape_for({&x, &k});
  if (tape != nullptr) {
    y.set_requires_grad(true);
    NodePtr xn = x.node(), kn = k.node();
    NodePtr bn = bias != nullptr ? bias->node() : nullptr;
    tape->record(y, [xn, kn, bn, g, cols = std::move(cols)](const TensorNode& o) {
      const std::size_t P = g.patch(), L = g.positions();
      if (kn->requires_grad) kernels::gemm(o.grad.data(), cols.data(), kn->grad_buffer(), g.c_out, L, P, false, true, true);
      if (bn && bn->requires_grad) {
        Scalar* gb = bn->grad_buffer();
        for (std::size_t c = 0; c < g.c_out; ++c) {
          double s = 0.0;
          for (std::size_t l = 0; l < L; ++l) s += o.grad[c * L + l];
          gb[c] += static_cast<Scalar>(s);
        }
      }
      if (xn->requires_grad) {
        std::vector<Scalar> dcols(P * L);
        kernels::gemm(kn->data.data(), o.grad.data(), dcols.data(), P, g.c_out, L, true, false, false);
        col2im_add(g, dcols.data(), xn->grad_buffer());
      }
    });
  }
  return y;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernels, int stride, int padding) {
  return conv2d_impl(x, kernels, nullptr, stride, padding);
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, int stride, int padding) {
  return conv2d_impl(x, kernels, &bias, stride, padding);
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin > end || end > cols) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<Scalar> out(rows * w);
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(in.data() + r * cols + begin, w, out.data() + r * w);
  Tensor y({rows, w}, std::move(out));
  if (Tape* tape = detail::tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node();
    tape->record(y, [xn, rows, cols, begin, w](const TensorNode& o) {
      Scalar* g = xn->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) g[r * cols + begin + j] += o.grad[r * w + j];
    });
  }
  return y;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
    total += p.dim(1);
  }
  std::vector<Scalar> out(rows * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(p.data().data() + r * w, w, out.data() + r * total + offset);
    offset += w;
  }
  Tensor y({rows, total}, std::move(out));
  Tape* tape = active_tape();
  bool any = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tape != nullptr && any) {
    y.set_requires_grad(true);
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    tape->record(y, [nodes, rows, total](const TensorNode& o) {
      std::size_t off = 0;
      for (const auto& n : nodes) {
        const std::size_t w = n->shape[1];
        if (n->requires_grad) {
          Scalar* g = n->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) g[r * w + j] += o.grad[r * total + off + j];
        }
        off += w;
      }
    });
  }
  return y;
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  const Shape inner = parts[0].shape();
  const std::size_t n = shape_numel(inner);
  for (const auto& p : parts) {
    if (p.shape() != inner) throw DimensionError("stack: " + shape_str(p.shape()) + " vs " + shape_str(inner));
  }
  std::vector<Scalar> out(parts.size() * n);
  for (std::size_t i = 0; i < parts.size(); ++i) std::copy_n(parts[i].data().data(), n, out.data() + i * n);
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  Tensor y(std::move(shape), std::move(out));
  Tape* tape = active_tape();
  bool any = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tape != nullptr && any) {
    y.set_requires_grad(true);
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    tape->record(y, [nodes, n](const TensorNode& o) {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!nodes[i]->requires_grad) continue;
        Scalar* g = nodes[i]->grad_buffer();
        for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
      }
    });
  }
  return y;
}

namespace {
Tensor reduce_sum(const Tensor& x, double factor) {
  double s = 0.0;
  for (Scalar v : x.data()) s += v;
  Tensor y = Tensor::scalar(static_cast<Scalar>(s * factor));
  if (Tape* tape = detail::tape_for({&x})) {
    y.set_requires_grad(true);
    NodePtr xn = x.node();
    tape->record(y, [xn, factor](const TensorNode& o) {
      Scalar* g = xn->grad_buffer();
      const Scalar gv = static_cast<Scalar>(o.grad[0] * factor);
      for (std::size_t i = 0; i < xn->data.size(); ++i) g[i] += gv;
    });
  }
  return y;
}
}  // namespace

Tensor sum(const Tensor& x) { return reduce_sum(x, 1.0); }

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return reduce_sum(x, 1.0 / static_cast<double>(x.numel()));
}

}  // namespace defectvit::ops
