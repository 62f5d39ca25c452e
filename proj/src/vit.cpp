#include "defectvit/vit.hpp"

#include <algorithm>
#include <cmath>

#include "defectvit/errors.hpp"
#include "defectvit/ops.hpp"

namespace defectvit {

namespace {

// Dropout layer ids inside the encoder.
constexpr std::uint64_t kEmbedDropout = 100;
constexpr std::uint64_t kAttnDropout = 101;
constexpr std::uint64_t kMlpDropout = 102;

Tensor normal(Shape shape, double stddev, std::mt19937_64& gen) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<Scalar> v(shape_numel(shape));
  for (auto& x : v) x = dist(gen);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

// Index map from patch-matrix position to image position.
std::vector<std::size_t> patch_index(std::size_t c, std::size_t side, std::size_t ps) {
  const std::size_t g = side / ps;
  const std::size_t pd = c * ps * ps;
  std::vector<std::size_t> idx(g * g * pd);
  for (std::size_t py = 0; py < g; ++py)
    for (std::size_t px = 0; px < g; ++px)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < ps; ++dy)
          for (std::size_t dx = 0; dx < ps; ++dx) {
            const std::size_t p = py * g + px;
            idx[p * pd + (ch * ps + dy) * ps + dx] = (ch * side + py * ps + dy) * side + px * ps + dx;
          }
  return idx;
}

void check_shape(const Tensor& t, const Shape& want, const std::string& name) {
  if (!t.defined() || t.shape() != want) {
    throw ConfigError("weight " + name + " has shape " + (t.defined() ? shape_str(t.shape()) : "<missing>") +
                      ", config expects " + shape_str(want));
  }
}

}  // namespace

void ViTConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
    throw ConfigError("vit: image_size " + std::to_string(image_size) + " is not a multiple of patch_size " +
                      std::to_string(patch_size));
  }
  if (channels <= 0 || embed_dim <= 0 || num_heads <= 0 || num_layers < 0) throw ConfigError("vit: dimensions must be positive");
  if (embed_dim % num_heads != 0) {
    throw ConfigError("vit: embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (!(mlp_ratio > 0)) throw ConfigError("vit: mlp_ratio must be positive");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError("vit: dropout_rate must lie in [0, 1)");
}

int ViTConfig::mlp_hidden() const { return std::max(1, static_cast<int>(std::lround(embed_dim * mlp_ratio))); }

ViTWeights ViTWeights::init(const ViTConfig& cfg, std::mt19937_64& gen) {
  cfg.validate();
  const std::size_t d = sz(cfg.embed_dim), h = sz(cfg.mlp_hidden());
  ViTWeights w;
  w.projection = normal({sz(cfg.patch_dim()), d}, 0.02, gen);
  w.projection_bias = zeros({d});
  w.positional = normal({sz(cfg.num_patches()), d}, 0.02, gen);
  for (int l = 0; l < cfg.num_layers; ++l) {
    EncoderBlockWeights b;
    b.norm1_gamma = ones({d});
    b.norm1_beta = zeros({d});
    b.attention.wq = normal({d, d}, 0.02, gen);
    b.attention.bq = zeros({d});
    b.attention.wk = normal({d, d}, 0.02, gen);
    b.attention.bk = zeros({d});
    b.attention.wv = normal({d, d}, 0.02, gen);
    b.attention.bv = zeros({d});
    b.attention.wo = normal({d, d}, 0.02, gen);
    b.attention.bo = zeros({d});
    b.norm2_gamma = ones({d});
    b.norm2_beta = zeros({d});
    b.mlp_w1 = normal({d, h}, 0.02, gen);
    b.mlp_b1 = zeros({h});
    b.mlp_w2 = normal({h, d}, 0.02, gen);
    b.mlp_b2 = zeros({d});
    w.blocks.push_back(std::move(b));
  }
  w.final_gamma = ones({d});
  w.final_beta = zeros({d});
  return w;
}

void ViTWeights::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + "projection", projection);
  out.emplace_back(prefix + "projection_bias", projection_bias);
  out.emplace_back(prefix + "positional", positional);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string p = prefix + "blocks." + std::to_string(l) + ".";
    out.emplace_back(p + "norm1.gamma", b.norm1_gamma);
    out.emplace_back(p + "norm1.beta", b.norm1_beta);
    out.emplace_back(p + "attn.wq", b.attention.wq);
    out.emplace_back(p + "attn.bq", b.attention.bq);
    out.emplace_back(p + "attn.wk", b.attention.wk);
    out.emplace_back(p + "attn.bk", b.attention.bk);
    out.emplace_back(p + "attn.wv", b.attention.wv);
    out.emplace_back(p + "attn.bv", b.attention.bv);
    out.emplace_back(p + "attn.wo", b.attention.wo);
    out.emplace_back(p + "attn.bo", b.attention.bo);
    out.emplace_back(p + "norm2.gamma", b.norm2_gamma);
    out.emplace_back(p + "norm2.beta", b.norm2_beta);
    out.emplace_back(p + "mlp.w1", b.mlp_w1);
    out.emplace_back(p + "mlp.b1", b.mlp_b1);
    out.emplace_back(p + "mlp.w2", b.mlp_w2);
    out.emplace_back(p + "mlp.b2", b.mlp_b2);
  }
  out.emplace_back(prefix + "final_norm.gamma", final_gamma);
  out.emplace_back(prefix + "final_norm.beta", final_beta);
}

void ViTWeights::check(const ViTConfig& cfg) const {
  cfg.validate();
  const std::size_t d = sz(cfg.embed_dim), h = sz(cfg.mlp_hidden());
  check_shape(projection, {sz(cfg.patch_dim()), d}, "vit.projection");
  check_shape(projection_bias, {d}, "vit.projection_bias");
  check_shape(positional, {sz(cfg.num_patches()), d}, "vit.positional");
  if (blocks.size() != sz(cfg.num_layers)) {
    throw ConfigError("vit: weights hold " + std::to_string(blocks.size()) + " blocks, config expects " +
                      std::to_string(cfg.num_layers));
  }
  for (const auto& b : blocks) {
    for (const Tensor* t : {&b.attention.wq, &b.attention.wk, &b.attention.wv, &b.attention.wo}) check_shape(*t, {d, d}, "vit.attn");
    for (const Tensor* t : {&b.attention.bq, &b.attention.bk, &b.attention.bv, &b.attention.bo, &b.norm1_gamma,
                            &b.norm1_beta, &b.norm2_gamma, &b.norm2_beta, &b.mlp_b2})
      check_shape(*t, {d}, "vit.block");
    check_shape(b.mlp_w1, {d, h}, "vit.mlp.w1");
    check_shape(b.mlp_b1, {h}, "vit.mlp.b1");
    check_shape(b.mlp_w2, {h, d}, "vit.mlp.w2");
  }
  check_shape(final_gamma, {d}, "vit.final_norm.gamma");
  check_shape(final_beta, {d}, "vit.final_norm.beta");
}

Tensor patchify(const Tensor& image, int patch_size) {
  if (image.rank() != 3) throw DimensionError("patchify: expected [c x h x w], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h != w) throw ConfigError("patchify: image must be square, got " + shape_str(image.shape()));
  if (patch_size <= 0 || h % sz(patch_size) != 0) {
    throw ConfigError("patchify: size " + std::to_string(h) + " is not a multiple of patch " + std::to_string(patch_size));
  }
  const std::size_t ps = sz(patch_size), g = h / ps, pd = c * ps * ps;
  auto idx = patch_index(c, h, ps);
  std::vector<Scalar> out(idx.size());
  auto in = image.data();
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = in[idx[i]];
  Tensor y({g * g, pd}, std::move(out));
  if (Tape* tape = detail::tape_for({&image})) {
    y.set_requires_grad(true);
    auto node = image.node();
    tape->record(y, [node, idx = std::move(idx)](const TensorNode& o) {
      Scalar* gx = node->grad_buffer();
      for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += o.grad[i];
    });
  }
  return y;
}

Tensor unpatchify(const Tensor& patches, int channels, int image_size, int patch_size) {
  const std::size_t c = sz(channels), side = sz(image_size), ps = sz(patch_size);
  if (patch_size <= 0 || side % ps != 0) throw ConfigError("unpatchify: size not a multiple of patch");
  auto idx = patch_index(c, side, ps);
  if (patches.numel() != idx.size()) {
    throw DimensionError("unpatchify: " + shape_str(patches.shape()) + " does not match a " + std::to_string(channels) +
                         "x" + std::to_string(image_size) + "^2 image");
  }
  std::vector<Scalar> out(idx.size());
  auto in = patches.data();
  for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] = in[i];
  return Tensor({c, side, side}, std::move(out));
}

Tensor multi_head_self_attention(const Tensor& x, const AttentionWeights& w, int num_heads,
                                 std::vector<Tensor>* probabilities) {
  if (x.rank() != 2) throw DimensionError("attention: expected [n x d], got " + shape_str(x.shape()));
  const std::size_t d = x.dim(1);
  if (num_heads <= 0 || d % sz(num_heads) != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " is not divisible by " + std::to_string(num_heads) +
                      " heads");
  }
  const std::size_t dh = d / sz(num_heads);
  const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(dh));
  const Tensor q = ops::add(ops::matmul(x, w.wq), w.bq);
  const Tensor k = ops::add(ops::matmul(x, w.wk), w.bk);
  const Tensor v = ops::add(ops::matmul(x, w.wv), w.bv);
  std::vector<Tensor> heads;
  heads.reserve(sz(num_heads));
  for (std::size_t h = 0; h < sz(num_heads); ++h) {
    const Tensor qh = ops::slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = ops::slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = ops::slice_cols(v, h * dh, (h + 1) * dh);
    const Tensor probs = ops::softmax_lastdim(ops::scale(ops::matmul(qh, ops::transpose(kh)), scale));
    if (probabilities != nullptr) probabilities->push_back(probs);
    heads.push_back(ops::matmul(probs, vh));
  }
  return ops::add(ops::matmul(ops::concat_cols(heads), w.wo), w.bo);
}

Tensor encode(const Tensor& image, const ViTConfig& cfg, const ViTWeights& weights, const ForwardContext& ctx,
              AttentionTrace* trace) {
  cfg.validate();
  if (image.rank() != 3 || image.dim(0) != sz(cfg.channels) || image.dim(1) != sz(cfg.image_size) ||
      image.dim(2) != sz(cfg.image_size)) {
    throw ConfigError("encode: image " + shape_str(image.shape()) + " does not match config " +
                      std::to_string(cfg.channels) + "x" + std::to_string(cfg.image_size) + "^2");
  }
  weights.check(cfg);
  const Scalar rate = cfg.dropout_rate;

  Tensor h = ops::add(ops::matmul(patchify(image, cfg.patch_size), weights.projection), weights.projection_bias);
  h = ops::add(h, weights.positional);
  h = ops::dropout(h, rate, ctx.training, ctx.dropout_key(kEmbedDropout));
  for (std::size_t l = 0; l < weights.blocks.size(); ++l) {
    const auto& b = weights.blocks[l];
    std::vector<Tensor>* probs = nullptr;
    if (trace != nullptr) probs = &trace->layers.emplace_back();
    Tensor a = ops::layernorm(h, b.norm1_gamma, b.norm1_beta);
    a = multi_head_self_attention(a, b.attention, cfg.num_heads, probs);
    a = ops::dropout(a, rate, ctx.training, ctx.dropout_key(kAttnDropout + 10 * l));
    h = ops::add(h, a);
    Tensor m = ops::layernorm(h, b.norm2_gamma, b.norm2_beta);
    m = ops::gelu(ops::add(ops::matmul(m, b.mlp_w1), b.mlp_b1));
    m = ops::add(ops::matmul(m, b.mlp_w2), b.mlp_b2);
    m = ops::dropout(m, rate, ctx.training, ctx.dropout_key(kMlpDropout + 10 * l));
    h = ops::add(h, m);
  }
  return ops::layernorm(h, weights.final_gamma, weights.final_beta);
}

}  // namespace defectvit
