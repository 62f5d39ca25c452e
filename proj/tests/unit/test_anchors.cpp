#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "defectvit/anchors.hpp"
#include "defectvit/errors.hpp"
#include "oracles.hpp"

using namespace defectvit;
using namespace defectvit::testing;

TEST_CASE("anchor grid layout") {
  AnchorGridParams p{64, 32, {16}, {1.0}};
  auto g = build_anchor_grid(p);
  REQUIRE(g.size() == 4);
  const double centers[4][2] = {{16, 16}, {48, 16}, {16, 48}, {48, 48}};
  for (int i = 0; i < 4; ++i) {
    const auto& a = g.anchors[i];
    CHECK((a.x1 + a.x2) / 2 == doctest::Approx(centers[i][0]));
    CHECK((a.y1 + a.y2) / 2 == doctest::Approx(centers[i][1]));
    CHECK(a.width() == doctest::Approx(16));
    CHECK(a.height() == doctest::Approx(16));
  }

  AnchorGridParams q{64, 8, {8, 16, 32}, {0.5, 1.0, 2.0}};
  auto big = build_anchor_grid(q);
  CHECK(big.size() == 8 * 8 * 9);
  for (const auto& a : big.anchors) {
    CHECK(a.valid());
    CHECK(a.x1 >= 0);
    CHECK(a.y2 <= 64);
  }
  CHECK(build_anchor_grid(AnchorGridParams{}).size() == 144);

  CHECK_THROWS_AS(build_anchor_grid(AnchorGridParams{64, 10, {8}, {1.0}}), ParameterError);
  CHECK_THROWS_AS(build_anchor_grid(AnchorGridParams{64, 16, {}, {1.0}}), ParameterError);
}

TEST_CASE("iou values") {
  auto a = box(0, 0, 2, 2), b = box(1, 1, 3, 3);
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, box(5, 5, 6, 6)) == 0.0);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(raster_iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("iou properties and rasterization oracle") {
  std::mt19937_64 gen(42);
  for (int t = 0; t < 2000; ++t) {
    auto a = random_int_box(gen, 24), b = random_int_box(gen, 24);
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(iou(a, a) == 1.0);
    CHECK(std::fabs(v - raster_iou(a, b)) <= 1e-6);
  }
}

TEST_CASE("offset encoding") {
  auto anchor = box(10, 10, 20, 20);
  auto o = encode_offsets(anchor, anchor);
  for (double v : o) CHECK(v == 0.0);
  o = encode_offsets(anchor, box(12, 12, 22, 18));
  CHECK(o[0] == doctest::Approx(0.2));
  CHECK(o[1] == doctest::Approx(0.2));
  CHECK(o[2] == doctest::Approx(0.2));
  CHECK(o[3] == doctest::Approx(-0.2));
  auto back = decode_offsets(anchor, {0.2, 0.2, 0.2, -0.2});
  CHECK(back.x1 == doctest::Approx(12));
  CHECK(back.y1 == doctest::Approx(12));
  CHECK(back.x2 == doctest::Approx(22));
  CHECK(back.y2 == doctest::Approx(18));
  auto same = decode_offsets(anchor, {0, 0, 0, 0});
  CHECK(same == anchor);

  auto shifted = encode_offsets(box(13, 7, 23, 17), box(15, 9, 25, 15));
  for (int c = 0; c < 4; ++c) CHECK(shifted[c] == doctest::Approx(o[c]));
}

TEST_CASE("encode/decode roundtrip") {
  std::mt19937_64 gen(7);
  double worst = 0.0;
  for (int t = 0; t < 10000; ++t) {
    auto a = random_box(gen, 64, 1.0), g = random_box(gen, 64, 1.0);
    auto r = decode_offsets(a, encode_offsets(a, g));
    worst = std::max({worst, std::fabs(r.x1 - g.x1), std::fabs(r.y1 - g.y1), std::fabs(r.x2 - g.x2),
                      std::fabs(r.y2 - g.y2)});
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("min-max scaler") {
  std::vector<Offsets> pop{{-1, -1, -1, -1}, {1, 1, 1, 1}};
  auto s = MinMaxScaler::fit(pop);
  CHECK(s.apply({-1, -1, -1, -1})[0] == 0.0);
  CHECK(s.apply({1, 1, 1, 1})[1] == 1.0);
  CHECK(s.apply({0, 0, 0, 0})[2] == 0.5);
  CHECK(s.apply({2, 2, 2, 2})[3] == 1.0);
  // no clamping on the way back
  CHECK(s.invert({1.5, 0, 0, 0})[0] == doctest::Approx(2.0));

  std::vector<Offsets> flat{{0, 1, 2, 3}, {1, 1, 3, 4}};
  try {
    MinMaxScaler::fit(flat);
    FAIL("expected ParameterError");
  } catch (const ParameterError& e) {
    CHECK(std::string(e.what()).find("channel 1") != std::string::npos);
  }
  CHECK_THROWS_AS(MinMaxScaler().apply({0, 0, 0, 0}), ContractError);

  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<Offsets> many(200);
  for (auto& o : many) o = {u(gen), u(gen), u(gen), u(gen)};
  auto fitted = MinMaxScaler::fit(many);
  for (const auto& o : many) {
    auto r = fitted.invert(fitted.apply(o));
    for (int c = 0; c < 4; ++c) CHECK(std::fabs(r[c] - o[c]) <= 1e-6);
  }
}

TEST_CASE("scaled pipeline roundtrip recovers the ground truth") {
  std::mt19937_64 gen(19);
  std::vector<std::pair<BBox, BBox>> pairs;
  std::vector<Offsets> raw;
  for (int t = 0; t < 500; ++t) {
    auto a = random_box(gen, 64, 4.0), g = random_box(gen, 64, 4.0);
    pairs.emplace_back(a, g);
    raw.push_back(encode_offsets(a, g));
  }
  auto s = MinMaxScaler::fit(raw);
  for (const auto& [a, g] : pairs) {
    auto r = decode_offsets(a, s.invert(s.apply(encode_offsets(a, g))));
    CHECK(std::fabs(r.x1 - g.x1) <= 1e-5);
    CHECK(std::fabs(r.y2 - g.y2) <= 1e-5);
  }
}

TEST_CASE("assign_targets contracts") {
  auto grid = build_anchor_grid(AnchorGridParams{});
  MinMaxScaler scaler({-1, -1, -1, -1}, {1, 1, 1, 1});
  const std::size_t C = 4;

  SUBCASE("no ground truth") {
    auto t = assign_targets(grid, {}, {}, C, scaler);
    CHECK(t.assigned_count() == 0);
    for (std::size_t a = 0; a < t.num_anchors; ++a) {
      CHECK(t.states[a] == AnchorState::background);
      CHECK(t.class_onehot[a * C + 3] == 1.0);
    }
    CHECK(std::all_of(t.offsets.begin(), t.offsets.end(), [](double v) { return v == 0.0; }));
  }

  SUBCASE("ground truth equal to an anchor") {
    BBox gt = grid.anchors[40];
    gt.class_id = 1;
    std::vector<BBox> gts{gt};
    AssignParams p;
    p.upper = 0.7;
    auto t = assign_targets(grid, gts, p, C, scaler);
    CHECK(t.states[40] == AnchorState::assigned);
    CHECK(t.class_onehot[40 * C + 1] == 1.0);
    auto zero = scaler.apply({0, 0, 0, 0});
    for (int c = 0; c < 4; ++c) CHECK(t.offsets[40 * 4 + c] == zero[c]);
    for (std::size_t a = 0; a < t.num_anchors; ++a) {
      if (iou(grid.anchors[a], gt) < p.lower) CHECK(t.states[a] == AnchorState::background);
    }
  }

  SUBCASE("errors") {
    std::vector<BBox> gts{box(1, 1, 10, 10, 0)};
    CHECK_THROWS_AS(assign_targets(grid, gts, AssignParams{0.3, 0.6, true}, C, scaler), ParameterError);
    std::vector<BBox> bad{box(1, 1, 10, 10, 3)};
    CHECK_THROWS_AS(assign_targets(grid, bad, {}, C, scaler), ParameterError);
  }
}

TEST_CASE("assign_targets invariants and brute-force oracle") {
  std::mt19937_64 gen(2024);
  MinMaxScaler scaler({-2, -2, -2, -2}, {2, 2, 2, 2});
  const std::size_t C = 4;
  std::uniform_int_distribution<int> cls(0, 2);
  for (int trial = 0; trial < 1000; ++trial) {
    AnchorGrid grid;
    for (int i = 0; i < 50; ++i) grid.anchors.push_back(random_box(gen, 64, 4.0));
    std::vector<BBox> gts;
    for (int i = 0; i < 5; ++i) {
      auto g = random_box(gen, 64, 4.0);
      g.class_id = cls(gen);
      gts.push_back(g);
    }
    auto t = assign_targets(grid, gts, AssignParams{0.6, 0.3, true}, C, scaler);
    auto expected = oracle_states(grid.anchors, gts, 0.6, 0.3);
    CHECK(t.states == expected);
    for (std::size_t a = 0; a < grid.size(); ++a) {
      double row = 0.0;
      for (std::size_t c = 0; c < C; ++c) row += t.class_onehot[a * C + c];
      CHECK(row == 1.0);
      const bool zero = std::all_of(t.offsets.begin() + a * 4, t.offsets.begin() + a * 4 + 4,
                                    [](double v) { return v == 0.0; });
      if (t.states[a] == AnchorState::assigned) {
        CHECK(t.class_onehot[a * C + 3] == 0.0);
      } else {
        CHECK(zero);
      }
    }
  }
}

TEST_CASE("assignment ties go to the lower ground-truth index") {
  AnchorGrid grid;
  grid.anchors.push_back(box(0, 0, 10, 10));
  std::vector<BBox> gts{box(0, 0, 10, 20, 2), box(0, -10, 10, 10, 1)};  // both IoU 0.5
  auto as = assign_anchors(grid, gts, AssignParams{0.4, 0.1, false});
  CHECK(as.gt_index[0] == 0);
}

TEST_CASE("nms hand trace") {
  SUBCASE("single box") {
    std::vector<Detection> d{{box(0, 0, 5, 5), 0, 0.9, 0}};
    CHECK(nms(d, 0.5, 0.5).size() == 1);
  }
  SUBCASE("greedy suppression") {
    // A and B overlap with IoU 0.6; C is disjoint.
    auto A = box(0, 0, 10, 10);
    auto B = box(0, 0, 10, 6);
    REQUIRE(iou(A, B) == doctest::Approx(0.6));
    std::vector<Detection> d{{B, 0, 0.8, 1}, {box(30, 30, 40, 40), 0, 0.7, 2}, {A, 0, 0.9, 0}};
    auto kept = nms(d, 0.5, 0.0);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].anchor_index == 0);
    CHECK(kept[1].anchor_index == 2);
  }
  SUBCASE("classes never suppress each other") {
    std::vector<Detection> d{{box(0, 0, 5, 5), 0, 0.9, 0}, {box(0, 0, 5, 5), 1, 0.9, 1}};
    CHECK(nms(d, 0.5, 0.0).size() == 2);
  }
  SUBCASE("score threshold applied first") {
    std::vector<Detection> d{{box(0, 0, 5, 5), 0, 0.2, 0}, {box(0, 0, 5, 5), 0, 0.6, 1}};
    auto kept = nms(d, 0.5, 0.5);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].anchor_index == 1);
  }
}

TEST_CASE("nms matches the O(n^2) reference and is idempotent") {
  std::mt19937_64 gen(77);
  std::uniform_int_distribution<std::size_t> count(0, 64);
  for (int trial = 0; trial < 1000; ++trial) {
    auto d = random_detections(gen, count(gen));
    auto got = nms(d, 0.45, 0.3);
    CHECK(got == oracle_nms(d, 0.45, 0.3));
    CHECK(nms(got, 0.45, 0.3) == got);
    for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i - 1].score >= got[i].score);
  }
}
