#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "defectvit/dataset.hpp"
#include "defectvit/errors.hpp"
#include "defectvit/synth.hpp"
#include "temp_dir.hpp"

using namespace defectvit;
namespace fs = std::filesystem;

namespace {

std::multiset<int> class_multiset(const SampleRecord& s) {
  std::multiset<int> out;
  for (const auto& b : s.boxes) out.insert(*b.class_id);
  return out;
}

}  // namespace

TEST_CASE("generator contracts") {
  GenConfig cfg;
  cfg.min_defects = cfg.max_defects = 1;
  cfg.classes = {"scratch"};
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto r = generate_sample(cfg, s);
    CHECK(r.boxes.size() == 1);
    CHECK(r.boxes[0].class_id == 0);
  }

  GenConfig full;
  full.classes = defect_class_names();
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto r = generate_sample(full, s);
    REQUIRE(r.image.width == 64);
    CHECK(r.boxes.size() >= 1);
    CHECK(r.boxes.size() <= 4);
    for (const auto& b : r.boxes) {
      CHECK(b.valid());
      CHECK(b.area() >= 9.0);
      CHECK(b.x1 >= 0);
      CHECK(b.y1 >= 0);
      CHECK(b.x2 <= 64);
      CHECK(b.y2 <= 64);
      CHECK(*b.class_id < 8);
    }
    for (float v : r.image.pixels) CHECK((v >= 0.0f && v <= 1.0f));
  }

  auto a = generate_sample(full, 42), b = generate_sample(full, 42);
  CHECK(a == b);
  CHECK_FALSE(generate_sample(full, 43) == a);

  GenConfig bad;
  bad.classes = {"dent"};
  CHECK_THROWS_AS(generate_sample(bad, 0), ConfigError);
  bad = GenConfig{};
  bad.max_defects = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("non-overlapping placement") {
  GenConfig cfg;
  cfg.overlap_allowed = false;
  cfg.min_defects = cfg.max_defects = 3;
  for (std::uint64_t s = 0; s < 30; ++s) {
    auto r = generate_sample(cfg, s);
    for (std::size_t i = 0; i < r.boxes.size(); ++i)
      for (std::size_t j = i + 1; j < r.boxes.size(); ++j) CHECK(iou(r.boxes[i], r.boxes[j]) == 0.0);
  }
}

TEST_CASE("scratch boxes cover the visibly deviating pixels") {
  GenConfig cfg;
  cfg.classes = {"scratch"};
  cfg.min_defects = cfg.max_defects = 1;
  const double sigma = cfg.noise_level;
  for (std::uint64_t s = 0; s < 100; ++s) {
    RenderTrace trace;
    auto r = generate_sample(cfg, 1000 + s, &trace);
    const BBox& box = r.boxes[0];
    int inside = 0, total = 0;
    int sx1 = 64, sy1 = 64, sx2 = -1, sy2 = -1;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        if (std::fabs(trace.clean.at(x, y) - trace.background.at(x, y)) > 3 * sigma) {
          ++total;
          inside += (x >= box.x1 && x + 1 <= box.x2 && y >= box.y1 && y + 1 <= box.y2) ? 1 : 0;
        }
        if (trace.alphas[0].at(x, y) > 0.0f) {
          sx1 = std::min(sx1, x);
          sy1 = std::min(sy1, y);
          sx2 = std::max(sx2, x + 1);
          sy2 = std::max(sy2, y + 1);
        }
      }
    REQUIRE(total > 0);
    CHECK(static_cast<double>(inside) / total >= 0.95);
    // tight to the renderer's support within 2 px per side
    CHECK(box.x1 - sx1 <= 2);
    CHECK(box.y1 - sy1 <= 2);
    CHECK(sx2 - box.x2 <= 2);
    CHECK(sy2 - box.y2 <= 2);
  }
}

TEST_CASE("split seeds are disjoint") {
  std::set<std::uint64_t> seen;
  for (const char* split : {"train", "val", "test"})
    for (std::size_t i = 0; i < 1000; ++i) CHECK(seen.insert(split_seed(split, i)).second);
  CHECK_THROWS_AS(split_seed("holdout", 0), ConfigError);
  GenConfig cfg;
  auto serial = generate_split(cfg, "val", 12, 1);
  auto parallel = generate_split(cfg, "val", 12, 3);
  CHECK(serial == parallel);
  CHECK(serial[3].id == "00003_1000000003");
  CHECK(serial[3].seed == 1000000003ULL);
}

TEST_CASE("preprocess") {
  GenConfig cfg;
  auto r = generate_sample(cfg, 7);
  auto same = rescale_boxes(r.boxes, 64, 64, 64, 64);
  CHECK(same == r.boxes);
  auto t = preprocess(r.image, 64);
  REQUIRE(t.shape() == Shape{1, 64, 64});
  CHECK(t.data()[5] == (static_cast<double>(r.image.pixels[5]) - 0.5) / 0.25);

  std::vector<BBox> big{{10, 20, 50, 90, 1}};
  auto half = rescale_boxes(big, 128, 128, 64, 64);
  CHECK(half[0] == BBox{5, 10, 25, 45, 1});

  Image blocks(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) blocks.at(x, y) = static_cast<float>((y / 2) * 2 + (x / 2)) / 4.0f;
  auto small = resize_bilinear(blocks, 2, 2);
  CHECK(small.at(0, 0) == 0.0f);
  CHECK(small.at(1, 0) == 0.25f);
  CHECK(small.at(0, 1) == 0.5f);
  CHECK(small.at(1, 1) == 0.75f);

  Image flat(128, 128, 0.3f);
  auto c = preprocess(flat, 64);
  for (auto v : c.data()) {
    CHECK(std::isfinite(v));
    CHECK(v == c.data()[0]);
  }
  CHECK_THROWS_AS(preprocess(Image{}, 64), ContractError);
}

TEST_CASE("augmentation geometry") {
  GenConfig cfg;
  cfg.classes = defect_class_names();
  auto s = generate_sample(cfg, 11);

  CHECK(hflip(hflip(s)) == s);
  CHECK(vflip(vflip(s)) == s);
  CHECK(rotate90(s, 4) == s);
  CHECK(rotate90(rotate90(s, 1), 3) == s);

  SampleRecord one;
  one.image = Image(64, 64);
  one.image.at(10, 3) = 1.0f;
  one.boxes = {BBox{10, 3, 11, 4, 0}};
  auto f = hflip(one);
  CHECK(f.boxes[0] == BBox{53, 3, 54, 4, 0});
  CHECK(f.image.at(53, 3) == 1.0f);
  for (int k = 1; k < 4; ++k) {
    auto r = rotate90(one, k);
    const auto& b = r.boxes[0];
    CHECK(r.image.at(static_cast<int>(b.x1), static_cast<int>(b.y1)) == 1.0f);
  }
  auto z = scale_jitter(one, 1.0);
  CHECK(z.boxes[0] == one.boxes[0]);

  std::mt19937_64 rng(5);
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto base = generate_sample(cfg, 500 + i);
    auto a = augment(base, rng);
    CHECK(a.boxes.size() == base.boxes.size());
    CHECK(class_multiset(a) == class_multiset(base));
    for (const auto& b : a.boxes) {
      CHECK(b.valid());
      CHECK(b.area() >= 9.0);
      CHECK(b.x1 >= 0);
      CHECK(b.x2 <= 64);
      CHECK(b.y1 >= 0);
      CHECK(b.y2 <= 64);
    }
  }
}

TEST_CASE("dataset roundtrip") {
  TempDir tmp("ds");
  GenConfig cfg;
  cfg.classes = defect_class_names();
  auto recs = generate_split(cfg, "train", 50);
  std::mt19937_64 rng(3);
  for (std::size_t i = 0; i < recs.size(); i += 2) {
    auto aug = augment(recs[i], rng);  // non-integer box corners
    aug.id = recs[i].id;
    quantize_8bit(aug.image);
    recs[i] = aug;
  }
  write_split(tmp.path, "train", cfg.classes, recs);
  auto back = load_split(tmp.path, "train", cfg.classes);
  CHECK(back.classes == cfg.classes);
  REQUIRE(back.records.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(back.records[i] == recs[i]);

  std::ifstream a(tmp.path / "train" / "annotations.json");
  std::string first((std::istreambuf_iterator<char>(a)), {});
  write_split(tmp.path, "train", cfg.classes, recs);
  std::ifstream b(tmp.path / "train" / "annotations.json");
  std::string second((std::istreambuf_iterator<char>(b)), {});
  CHECK(first == second);

  CHECK(available_splits(tmp.path) == std::vector<std::string>{"train"});
  CHECK(load_split(tmp.path, "val").records.empty());
  CHECK_THROWS_AS(load_split(tmp.path, "train", {"scratch"}), ValidationError);
}

TEST_CASE("dataset schema errors") {
  TempDir tmp("bad");
  GenConfig cfg;
  auto recs = generate_split(cfg, "test", 2);
  write_split(tmp.path, "test", cfg.classes, recs);
  const fs::path ann = tmp.path / "test" / "annotations.json";

  auto write = [&](const std::string& text) { std::ofstream(ann) << text; };
  write(R"({"classes": ["scratch"], "samples": [{"id": ")" + recs[0].id +
        R"(", "width": 64, "height": 64, "boxes": [{"x1": 1, "y1": 1, "x2": 9, "y2": 9, "class": 3}]}]})");
  CHECK_THROWS_AS(load_split(tmp.path, "test"), ValidationError);

  write("{\n  \"classes\": [\"scratch\"],\n  \"samples\": [\n    {\"id\": 1,,}\n  ]\n}");
  try {
    load_split(tmp.path, "test");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("annotations.json:4") != std::string::npos);
  }

  write(R"({"classes": ["scratch"], "samples": [{"id": "x", "width": 64, "height": 64, "boxes": [{"x1": 1, "y1": 1, "x2": 9, "class": 0}]}]})");
  try {
    load_split(tmp.path, "test");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("$.samples[0].boxes[0].y2") != std::string::npos);
  }

  CHECK_THROWS_AS(write_split(tmp.path, "val", {}, recs), ValidationError);
  CHECK_THROWS_AS(read_png(tmp.path / "missing.png"), IoError);
}

TEST_CASE("png roundtrip is exact for 8-bit values") {
  TempDir tmp("png");
  Image img(7, 5);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i * 7 % 256) / 255.0f;
  write_png(tmp.path / "a.png", img);
  CHECK(read_png(tmp.path / "a.png") == img);
}
