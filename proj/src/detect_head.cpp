#include "defectvit/detect_head.hpp"

#include <algorithm>
#include <cmath>

#include "defectvit/errors.hpp"
#include "defectvit/ops.hpp"

namespace defectvit {

namespace {

constexpr std::uint64_t kClsDropout = 200;
constexpr std::uint64_t kRegDropout = 300;

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

Tensor normal(Shape shape, double stddev, std::mt19937_64& gen) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<Scalar> v(shape_numel(shape));
  for (auto& x : v) x = dist(gen);
  return Tensor(std::move(shape), std::move(v), true);
}

std::size_t perfect_root(std::size_t n) {
  auto r = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
  if (r * r != n) throw ConfigError("trunk: patch count " + std::to_string(n) + " is not a perfect square");
  return r;
}

std::vector<DenseLayer> init_mlp(std::size_t in, const std::vector<int>& hidden, std::size_t out,
                                 std::mt19937_64& gen) {
  std::vector<DenseLayer> layers;
  for (int h : hidden) {
    layers.push_back({normal({in, sz(h)}, std::sqrt(2.0 / static_cast<double>(in)), gen), Tensor::zeros({sz(h)}, true)});
    in = sz(h);
  }
  layers.push_back({normal({in, out}, std::sqrt(1.0 / static_cast<double>(in)), gen), Tensor::zeros({out}, true)});
  return layers;
}

Tensor run_mlp(Tensor x, const std::vector<DenseLayer>& layers, double rate, const ForwardContext& ctx,
               std::uint64_t layer_base) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = ops::add(ops::matmul(x, layers[i].w), layers[i].b);
    if (i + 1 < layers.size()) {
      x = ops::dropout(ops::relu(x), rate, ctx.training, ctx.dropout_key(layer_base + i));
    }
  }
  return x;
}

void check_shape(const Tensor& t, const Shape& want, const std::string& name) {
  if (!t.defined() || t.shape() != want) {
    throw ConfigError("weight " + name + " has shape " + (t.defined() ? shape_str(t.shape()) : "<missing>") +
                      ", config expects " + shape_str(want));
  }
}

void check_mlp(const std::vector<DenseLayer>& layers, std::size_t in, const std::vector<int>& hidden, std::size_t out,
               const std::string& name) {
  if (layers.size() != hidden.size() + 1) throw ConfigError("weight " + name + " has the wrong number of layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::size_t o = i < hidden.size() ? sz(hidden[i]) : out;
    check_shape(layers[i].w, {in, o}, name + "." + std::to_string(i) + ".w");
    check_shape(layers[i].b, {o}, name + "." + std::to_string(i) + ".b");
    in = o;
  }
}

}  // namespace

void HeadConfig::validate() const {
  if (cnn_channels.empty()) throw ConfigError("head: cnn_channels must not be empty");
  for (int c : cnn_channels)
    if (c <= 0) throw ConfigError("head: cnn_channels must be positive");
  if (cnn_kernel <= 0 || cnn_kernel % 2 == 0) throw ConfigError("head: cnn_kernel must be odd and positive");
  for (int h : mlp_hidden)
    if (h <= 0) throw ConfigError("head: mlp_hidden sizes must be positive");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError("head: dropout_rate must lie in [0, 1)");
  if (num_anchors <= 0) throw ConfigError("head: num_anchors must be positive");
  if (num_classes < 2) throw ConfigError("head: num_classes must include at least one defect class and background");
}

void ModelConfig::validate() const {
  vit.validate();
  head.validate();
  perfect_root(sz(vit.num_patches()));
}

int ModelConfig::trunk_in_channels() const {
  return encoder == EncoderKind::vit ? vit.embed_dim : vit.patch_dim();
}

std::size_t ModelConfig::flat_features() const {
  return sz(head.cnn_channels.back()) * sz(vit.num_patches());
}

HeadWeights HeadWeights::init(const ModelConfig& cfg, std::mt19937_64& gen) {
  cfg.validate();
  const auto& h = cfg.head;
  HeadWeights w;
  std::size_t in = sz(cfg.trunk_in_channels());
  const std::size_t k = sz(h.cnn_kernel);
  for (int c : h.cnn_channels) {
    w.conv_kernels.push_back(normal({sz(c), in, k, k}, std::sqrt(2.0 / static_cast<double>(in * k * k)), gen));
    w.conv_biases.push_back(Tensor::zeros({sz(c)}, true));
    in = sz(c);
  }
  const std::size_t flat = cfg.flat_features();
  w.cls = init_mlp(flat, h.mlp_hidden, sz(h.num_anchors) * sz(h.num_classes), gen);
  w.reg = init_mlp(flat, h.mlp_hidden, sz(h.num_anchors) * 4, gen);
  return w;
}

void HeadWeights::collect(NamedParams& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
    out.emplace_back(prefix + "conv." + std::to_string(i) + ".kernel", conv_kernels[i]);
    out.emplace_back(prefix + "conv." + std::to_string(i) + ".bias", conv_biases[i]);
  }
  for (std::size_t i = 0; i < cls.size(); ++i) {
    out.emplace_back(prefix + "cls." + std::to_string(i) + ".w", cls[i].w);
    out.emplace_back(prefix + "cls." + std::to_string(i) + ".b", cls[i].b);
  }
  for (std::size_t i = 0; i < reg.size(); ++i) {
    out.emplace_back(prefix + "reg." + std::to_string(i) + ".w", reg[i].w);
    out.emplace_back(prefix + "reg." + std::to_string(i) + ".b", reg[i].b);
  }
}

void HeadWeights::check(const ModelConfig& cfg) const {
  cfg.validate();
  const auto& h = cfg.head;
  if (conv_kernels.size() != h.cnn_channels.size() || conv_biases.size() != h.cnn_channels.size()) {
    throw ConfigError("head: weights hold " + std::to_string(conv_kernels.size()) + " conv stages, config expects " +
                      std::to_string(h.cnn_channels.size()));
  }
  std::size_t in = sz(cfg.trunk_in_channels());
  const std::size_t k = sz(h.cnn_kernel);
  for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
    const std::size_t c = sz(h.cnn_channels[i]);
    check_shape(conv_kernels[i], {c, in, k, k}, "head.conv." + std::to_string(i) + ".kernel");
    check_shape(conv_biases[i], {c}, "head.conv." + std::to_string(i) + ".bias");
    in = c;
  }
  check_mlp(cls, cfg.flat_features(), h.mlp_hidden, sz(h.num_anchors) * sz(h.num_classes), "head.cls");
  check_mlp(reg, cfg.flat_features(), h.mlp_hidden, sz(h.num_anchors) * 4, "head.reg");
}

Tensor trunk(const Tensor& embeddings, const HeadConfig& cfg, const HeadWeights& weights) {
  if (embeddings.rank() != 2) throw DimensionError("trunk: expected [patches x channels], got " + shape_str(embeddings.shape()));
  const std::size_t side = perfect_root(embeddings.dim(0));
  const std::size_t channels = embeddings.dim(1);
  if (weights.conv_kernels.size() != cfg.cnn_channels.size()) throw ConfigError("trunk: conv stage count mismatch");
  Tensor x = ops::reshape(ops::transpose(embeddings), {channels, side, side});
  for (std::size_t i = 0; i < weights.conv_kernels.size(); ++i) {
    x = ops::relu(ops::conv2d(x, weights.conv_kernels[i], weights.conv_biases[i], 1, cfg.cnn_kernel / 2));
  }
  return ops::reshape(x, {x.numel()});
}

DetectionOutput heads(const Tensor& shared, const HeadConfig& cfg, const HeadWeights& weights,
                      const ForwardContext& ctx) {
  if (shared.rank() != 2) throw DimensionError("heads: expected [batch x features], got " + shape_str(shared.shape()));
  const std::size_t batch = shared.dim(0), a = sz(cfg.num_anchors), c = sz(cfg.num_classes);
  Tensor logits = run_mlp(shared, weights.cls, cfg.dropout_rate, ctx, kClsDropout);
  Tensor raw = run_mlp(shared, weights.reg, cfg.dropout_rate, ctx, kRegDropout);
  if (logits.dim(1) != a * c || raw.dim(1) != a * 4) throw ConfigError("heads: output width does not match anchors x classes");
  return {ops::softmax_lastdim(ops::reshape(logits, {batch, a, c})), ops::sigmoid(ops::reshape(raw, {batch, a, 4}))};
}

DetectorModel::DetectorModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 gen(seed);
  if (cfg_.encoder == EncoderKind::vit) vit_ = ViTWeights::init(cfg_.vit, gen);
  head_ = HeadWeights::init(cfg_, gen);
}

DetectorModel::DetectorModel(ModelConfig cfg, ViTWeights vit, HeadWeights head)
    : cfg_(std::move(cfg)), vit_(std::move(vit)), head_(std::move(head)) {
  if (cfg_.encoder == EncoderKind::vit) vit_.check(cfg_.vit);
  head_.check(cfg_);
}

NamedParams DetectorModel::named_params() const {
  NamedParams out;
  if (cfg_.encoder == EncoderKind::vit) vit_.collect(out);
  head_.collect(out);
  return out;
}

std::vector<Tensor> DetectorModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

Tensor DetectorModel::features(const Tensor& image, const ForwardContext& ctx) const {
  Tensor tokens = cfg_.encoder == EncoderKind::vit ? encode(image, cfg_.vit, vit_, ctx)
                                                   : patchify(image, cfg_.vit.patch_size);
  return trunk(tokens, cfg_.head, head_);
}

DetectionOutput DetectorModel::forward(std::span<const Tensor> images, const ForwardContext& ctx) const {
  if (images.empty()) throw ContractError("forward: empty batch");
  std::vector<Tensor> flats;
  flats.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    ForwardContext sample_ctx = ctx;
    sample_ctx.sample = ctx.sample + i;
    flats.push_back(features(images[i], sample_ctx));
  }
  return heads(ops::stack(flats), cfg_.head, head_, ctx);
}

std::vector<Detection> decode_predictions(const DetectionOutput& out, std::size_t index, const AnchorGrid& grid,
                                          const MinMaxScaler& scaler, const PredictParams& params,
                                          PredictDiagnostics* diagnostics) {
  const std::size_t a = out.class_probs.dim(1), c = out.class_probs.dim(2);
  if (a != grid.size()) {
    throw ConfigError("predict: model emits " + std::to_string(a) + " anchors, grid has " + std::to_string(grid.size()));
  }
  if (index >= out.class_probs.dim(0)) throw ContractError("predict: sample index out of range");
  const Scalar* probs = out.class_probs.data().data() + index * a * c;
  const Scalar* offs = out.offsets.data().data() + index * a * 4;
  const double size = grid.params.image_size;
  PredictDiagnostics diag;
  std::vector<Detection> candidates;
  for (std::size_t i = 0; i < a; ++i) {
    const Scalar* row = probs + i * c;
    const auto best = static_cast<std::size_t>(std::max_element(row, row + c) - row);
    if (best == c - 1) {
      ++diag.background;
      continue;
    }
    if (row[best] < params.confidence_threshold) {
      ++diag.low_confidence;
      continue;
    }
    const Offsets scaled{offs[i * 4], offs[i * 4 + 1], offs[i * 4 + 2], offs[i * 4 + 3]};
    BBox box = decode_offsets(grid.anchors[i], scaler.invert(scaled)).clipped(size, size);
    if (!box.valid()) {
      ++diag.invalid_boxes;
      continue;
    }
    box.class_id = static_cast<int>(best);
    candidates.push_back({box, static_cast<int>(best), row[best], i});
  }
  if (diagnostics != nullptr) {
    diagnostics->background += diag.background;
    diagnostics->low_confidence += diag.low_confidence;
    diagnostics->invalid_boxes += diag.invalid_boxes;
  }
  return nms(candidates, params.nms_iou, params.confidence_threshold);
}

std::vector<Detection> predict(const DetectorModel& model, const Tensor& image, const AnchorGrid& grid,
                               const MinMaxScaler& scaler, const PredictParams& params,
                               PredictDiagnostics* diagnostics) {
  const Tensor batch[1] = {image};
  return decode_predictions(model.forward(batch, {}), 0, grid, scaler, params, diagnostics);
}

}  // namespace defectvit
