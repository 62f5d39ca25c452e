#include <doctest.h>

#include <cmath>
#include <random>

#include "defectvit/detect_head.hpp"
#include "defectvit/errors.hpp"
#include "defectvit/losses.hpp"
#include "defectvit/ops.hpp"
#include "defectvit/optim.hpp"
#include "gradcheck.hpp"

using namespace defectvit;
using defectvit::testing::random_tensor;

namespace {

// 32 px images, 16 patches, 36 anchors.
ModelConfig tiny_config(EncoderKind kind = EncoderKind::vit) {
  ModelConfig cfg;
  cfg.vit.image_size = 32;
  cfg.vit.patch_size = 8;
  cfg.vit.embed_dim = 16;
  cfg.vit.num_heads = 2;
  cfg.vit.num_layers = 1;
  cfg.vit.dropout_rate = 0.0;
  cfg.head.cnn_channels = {8, 4};
  cfg.head.mlp_hidden = {32};
  cfg.head.dropout_rate = 0.0;
  cfg.head.num_anchors = 36;
  cfg.head.num_classes = 3;
  cfg.encoder = kind;
  return cfg;
}

AnchorGrid tiny_grid() {
  AnchorGridParams p;
  p.image_size = 32;
  p.stride = 16;
  p.scales = {8, 12, 20};
  return build_anchor_grid(p);
}

bool all_have_grad(const NamedParams& params, const std::string& prefix) {
  for (const auto& [name, t] : params)
    if (name.rfind(prefix, 0) == 0 && !t.has_grad()) return false;
  return true;
}

void clear_grads(const NamedParams& params) {
  for (auto [name, t] : params) t.clear_grad();
}

}  // namespace

TEST_CASE("trunk shape and determinism") {
  auto cfg = tiny_config();
  DetectorModel model(cfg, 1);
  std::mt19937_64 gen(2);
  auto emb = random_tensor({16, 16}, gen, -1, 1, false);
  auto flat = trunk(emb, cfg.head, model.head_weights());
  CHECK(flat.shape() == Shape{4 * 16});
  auto again = trunk(emb, cfg.head, model.head_weights());
  CHECK(std::equal(flat.data().begin(), flat.data().end(), again.data().begin()));
  CHECK_THROWS_AS(trunk(random_tensor({15, 16}, gen, -1, 1, false), cfg.head, model.head_weights()), ConfigError);

  ModelConfig desk;
  CHECK(desk.flat_features() == 32u * 64u);
}

TEST_CASE("head output laws") {
  auto cfg = tiny_config();
  DetectorModel model(cfg, 3);
  std::mt19937_64 gen(4);
  std::vector<Tensor> images{random_tensor({1, 32, 32}, gen, -2, 2, false), random_tensor({1, 32, 32}, gen, -2, 2, false)};
  auto out = model.forward(images, {});
  REQUIRE(out.class_probs.shape() == Shape{2, 36, 3});
  REQUIRE(out.offsets.shape() == Shape{2, 36, 4});
  for (std::size_t r = 0; r < 72; ++r) {
    double s = 0;
    for (int m = 0; m < 3; ++m) s += out.class_probs.data()[r * 3 + m];
    CHECK(std::fabs(s - 1.0) <= 1e-6);
  }
  for (auto v : out.offsets.data()) CHECK((v > 0.0 && v < 1.0));

  SUBCASE("saturated logits") {
    HeadWeights w = model.head_weights();
    auto& last = w.cls.back();
    for (auto& v : last.w.mutable_data()) v = 0.0;
    auto b = last.b.mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
    b[0] = 10.0;
    b[1] = -10.0;
    b[2] = -10.0;
    auto shared = random_tensor({1, cfg.flat_features()}, gen, 0, 1, false);
    auto o = heads(shared, cfg.head, w, {});
    CHECK(std::fabs(o.class_probs.data()[0] - 1.0) <= 1e-3);
    CHECK(o.class_probs.data()[1] <= 1e-3);
    CHECK(o.class_probs.data()[2] <= 1e-3);
  }
}

TEST_CASE("shared trunk receives gradient from each head alone") {
  auto cfg = tiny_config();
  DetectorModel model(cfg, 5);
  std::mt19937_64 gen(6);
  std::vector<Tensor> images{random_tensor({1, 32, 32}, gen, -2, 2, false)};
  const auto params = model.named_params();

  std::vector<Scalar> onehot(36 * 3, 0.0), offs(36 * 4, 0.0);
  for (std::size_t a = 0; a < 36; ++a) onehot[a * 3 + (a % 3)] = 1.0;
  for (auto& v : offs) v = 0.5;
  Tensor t_cls({1, 36, 3}, onehot), t_off({1, 36, 4}, offs);

  for (int which = 0; which < 2; ++which) {
    clear_grads(params);
    Tape tape;
    TapeScope scope(tape);
    auto out = model.forward(images, {});
    Tensor loss = which == 0 ? modified_cce(t_cls, out.class_probs) : modified_mse(t_off, out.offsets);
    backward(loss);
    CHECK(all_have_grad(params, "vit."));
    CHECK(all_have_grad(params, "head.conv."));
    CHECK(all_have_grad(params, which == 0 ? "head.cls." : "head.reg."));
    // the other head is detached from this loss
    for (const auto& [name, t] : params)
      if (name.rfind(which == 0 ? "head.reg." : "head.cls.", 0) == 0) CHECK_FALSE(t.has_grad());
  }
}

TEST_CASE("passthrough encoder") {
  auto cfg = tiny_config(EncoderKind::patch_passthrough);
  DetectorModel model(cfg, 7);
  for (const auto& [name, t] : model.named_params()) CHECK(name.rfind("head.", 0) == 0);
  CHECK(model.head_weights().conv_kernels[0].dim(1) == 64);
  std::mt19937_64 gen(8);
  std::vector<Tensor> images{random_tensor({1, 32, 32}, gen, -2, 2, false)};
  auto out = model.forward(images, {});
  CHECK(out.class_probs.shape() == Shape{1, 36, 3});
}

TEST_CASE("weights validate against the config") {
  auto cfg = tiny_config();
  DetectorModel model(cfg, 9);
  auto other = cfg;
  other.head.mlp_hidden = {16};
  CHECK_THROWS_AS(DetectorModel(other, model.vit_weights(), model.head_weights()), ConfigError);
  other = cfg;
  other.head.num_anchors = 40;
  CHECK_THROWS_AS(DetectorModel(other, model.vit_weights(), model.head_weights()), ConfigError);
  CHECK_NOTHROW(DetectorModel(cfg, model.vit_weights(), model.head_weights()));
}

TEST_CASE("predict with random weights") {
  auto cfg = tiny_config();
  auto grid = tiny_grid();
  REQUIRE(grid.size() == 36);
  MinMaxScaler scaler({-1, -1, -1, -1}, {1, 1, 1, 1});
  std::mt19937_64 gen(10);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DetectorModel model(cfg, seed);
    auto img = random_tensor({1, 32, 32}, gen, -2, 2, false);
    PredictParams params;
    params.confidence_threshold = 0.0;
    PredictDiagnostics diag;
    auto dets = predict(model, img, grid, scaler, params, &diag);
    for (const auto& d : dets) {
      CHECK(d.box.valid());
      CHECK(d.box.x1 >= 0);
      CHECK(d.box.y1 >= 0);
      CHECK(d.box.x2 <= 32);
      CHECK(d.box.y2 <= 32);
      CHECK(d.class_id < 2);
    }
    CHECK(diag.background + diag.low_confidence + diag.invalid_boxes <= 36);
    CHECK(predict(model, img, grid, scaler, params) == dets);
  }
}

TEST_CASE("overfit one image with one box") {
  auto cfg = tiny_config();
  auto grid = tiny_grid();
  const BBox gt{9, 11, 21, 19, 1};
  std::vector<Offsets> raw;
  for (const auto& a : grid.anchors) raw.push_back(encode_offsets(a, gt));
  auto scaler = MinMaxScaler::fit(raw);
  const BBox gts[1] = {gt};
  auto targets = assign_targets(grid, gts, {}, 3, scaler);
  REQUIRE(targets.assigned_count() >= 1);

  std::vector<Scalar> pixels(32 * 32, -1.0);
  for (int y = 11; y < 19; ++y)
    for (int x = 9; x < 21; ++x) pixels[static_cast<std::size_t>(y * 32 + x)] = 1.5;
  Tensor img({1, 32, 32}, pixels);
  Tensor t_cls({1, 36, 3}, targets.class_onehot), t_off({1, 36, 4}, targets.offsets);

  DetectorModel model(cfg, 11);
  auto params = model.parameters();
  AdamState state;
  AdamConfig adam;
  adam.lr = 3e-3;
  const std::vector<Tensor> batch{img};
  double last = 0;
  for (int step = 0; step < 150; ++step) {
    Tape tape;
    TapeScope scope(tape);
    auto out = model.forward(batch, {true, 1, static_cast<std::uint64_t>(step), 0});
    auto loss = detection_loss(t_cls, t_off, out.class_probs, out.offsets, {});
    backward(loss.total);
    adam_step(params, adam, state);
    last = loss.report.total;
  }
  CHECK(last < 1e-2);
  auto dets = predict(model, img, grid, scaler, {});
  double best = 0;
  for (const auto& d : dets)
    if (d.class_id == 1) best = std::max(best, iou(d.box, gt));
  CHECK(best >= 0.8);
}
