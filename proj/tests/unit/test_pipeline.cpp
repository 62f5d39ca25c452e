#include <doctest.h>

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "defectvit/commands.hpp"
#include "defectvit/errors.hpp"
#include "temp_dir.hpp"

using namespace defectvit;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(const fs::path& dir, int epochs = 3) {
  std::ostringstream t;
  t << "seed = 5\noutput_dir = \"" << (dir / "run").string() << "\"\n"
    << "[data]\nroot = \"" << (dir / "data").string() << "\"\nimage_size = 32\ntrain_count = 8\nval_count = 4\n"
    << "test_count = 3\ndefects_per_image = [1, 2]\n"
    << "[model]\npatch_size = 8\nembed_dim = 16\nnum_heads = 2\nnum_layers = 1\ncnn_channels = [8, 4]\n"
    << "mlp_hidden = [32]\n"
    << "[anchors]\nstride = 16\nscales = [8.0, 14.0]\naspect_ratios = [0.5, 1.0, 2.0]\n"
    << "[optimizer]\nlr = 0.003\nbatch_size = 4\nepochs = " << epochs << "\n";
  return parse_config_toml(t.str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_report(const EvalReport& a, const EvalReport& b) {
  if (a.samples != b.samples || a.anchors.correct != b.anchors.correct || a.anchors.total != b.anchors.total ||
      a.pairs != b.pairs || a.abs_error_sum != b.abs_error_sum || a.iou_sum != b.iou_sum ||
      a.unmatched_predictions != b.unmatched_predictions || a.unmatched_truths != b.unmatched_truths ||
      a.invalid_boxes != b.invalid_boxes || a.per_class.size() != b.per_class.size()) {
    return false;
  }
  for (const auto& [k, c] : a.per_class) {
    const auto it = b.per_class.find(k);
    if (it == b.per_class.end()) return false;
    const auto& d = it->second;
    if (c.truths != d.truths || c.predictions != d.predictions || c.matched != d.matched ||
        c.anchors_total != d.anchors_total || c.anchors_correct != d.anchors_correct) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("train writes checkpoints, metrics and plots") {
  TempDir dir("train");
  const RunConfig cfg = tiny_config(dir.path, 1);
  const auto g = run_generate(cfg, false, 2);
  CHECK(g.train == 8);
  CHECK(g.val == 4);
  CHECK(g.test == 3);
  const auto s = run_train(cfg, std::nullopt, 1);
  CHECK(s.state.epoch == 1);
  CHECK(s.state.step == 2);
  CHECK(s.state.best_epoch == 1);
  for (const char* f : {"final.ckpt", "best.ckpt", "metrics.csv", "loss.svg", "accuracy.svg", "mae.svg", "mean_iou.svg"}) {
    CHECK_MESSAGE(fs::exists(dir.path / "run" / f), f);
  }
  const std::string csv = slurp(dir.path / "run" / "metrics.csv");
  CHECK(csv.rfind("epoch,train_loss,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("generate refuses a non-empty root unless forced") {
  TempDir dir("gen");
  const RunConfig cfg = tiny_config(dir.path);
  run_generate(cfg, false, 1);
  const std::string first = slurp(dir.path / "data" / "train" / "annotations.json");
  CHECK_THROWS_AS(run_generate(cfg, false, 1), RefusalError);
  run_generate(cfg, true, 3);
  CHECK(slurp(dir.path / "data" / "train" / "annotations.json") == first);
}

TEST_CASE("checkpoint roundtrip preserves state and evaluation exactly") {
  TempDir dir("ckpt");
  const RunConfig cfg = tiny_config(dir.path, 2);
  run_generate(cfg, false, 1);
  const auto s = run_train(cfg, std::nullopt, 1);
  const Checkpoint ck = load_checkpoint(dir.path / "run" / "final.ckpt");

  CHECK(config_to_json(ck.config) == config_to_json(cfg));
  CHECK(ck.state.epoch == s.state.epoch);
  CHECK(ck.state.step == s.state.step);
  CHECK(ck.state.best_epoch == s.state.best_epoch);
  CHECK(ck.state.history == s.state.history);
  CHECK(ck.state.scaler.min() == s.state.scaler.min());
  CHECK(ck.state.scaler.max() == s.state.scaler.max());
  CHECK(ck.state.adam.step == s.state.adam.step);
  CHECK(ck.state.adam.m == s.state.adam.m);
  CHECK(ck.state.adam.v == s.state.adam.v);
  const auto a = s.state.model.named_params(), b = ck.state.model.named_params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(std::equal(a[i].second.data().begin(), a[i].second.data().end(), b[i].second.data().begin()));
  }

  const AnchorGrid grid = build_anchor_grid(cfg.grid);
  for (const char* split : {"train", "val", "test"}) {
    const auto ds = load_dataset_split(cfg, split);
    const auto samples = prepare_samples(cfg, grid, s.state.scaler, ds.records, 1);
    const auto before = evaluate(cfg, s.state.model, grid, s.state.scaler, samples, 1);
    const auto after = evaluate(ck.config, ck.state.model, grid, ck.state.scaler, samples, 2);
    CHECK(same_report(before.report, after.report));
    CHECK(before.loss == after.loss);
  }
}

TEST_CASE("checkpoint validation") {
  TempDir dir("ckbad");
  const RunConfig cfg = tiny_config(dir.path, 1);
  run_generate(cfg, false, 1);
  run_train(cfg, std::nullopt, 1);
  const fs::path good = dir.path / "run" / "final.ckpt";
  std::string bytes = slurp(good);

  auto write = [&](const std::string& b) {
    const fs::path p = dir.path / "bad.ckpt";
    std::ofstream(p, std::ios::binary) << b;
    return p;
  };
  CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.ckpt"), IoError);
  CHECK_THROWS_AS(load_checkpoint(write("NOTACKPT" + bytes.substr(8))), IoError);
  CHECK_THROWS_AS(load_checkpoint(write(bytes.substr(0, bytes.size() - 3))), IoError);

  // Metadata claiming a wider embedding than the stored weights.
  const std::size_t len_at = 12, meta_at = 20;
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[len_at + i])) << (8 * i);
  auto meta = nlohmann::json::parse(bytes.substr(meta_at, len));
  meta["config"]["model"]["embed_dim"] = 32;
  const std::string text = meta.dump();
  std::string patched = bytes.substr(0, len_at);
  for (int i = 0; i < 8; ++i) patched += static_cast<char>((text.size() >> (8 * i)) & 0xff);
  patched += text + bytes.substr(meta_at + len);
  try {
    load_checkpoint(write(patched));
    FAIL("expected a shape mismatch");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("shape") != std::string::npos);
  }
}

TEST_CASE("resume reproduces the uninterrupted run") {
  TempDir dir("resume");
  RunConfig cfg = tiny_config(dir.path, 3);
  run_generate(cfg, false, 1);
  const auto full = run_train(cfg, std::nullopt, 1);

  RunConfig first = cfg;
  first.output_dir = (dir.path / "part").string();
  run_train(first, std::nullopt, 1, nullptr, 2);
  RunConfig rest = cfg;
  rest.output_dir = (dir.path / "rest").string();
  const auto resumed = run_train(rest, dir.path / "part" / "final.ckpt", 1);

  REQUIRE(resumed.state.history.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    const auto& x = full.state.history[e];
    const auto& y = resumed.state.history[e];
    CHECK(std::fabs(x.train_loss - y.train_loss) <= 1e-5);
    CHECK(std::fabs(x.val_loss - y.val_loss) <= 1e-5);
    CHECK(x.train_accuracy.value == doctest::Approx(y.train_accuracy.value).epsilon(1e-5));
  }
  CHECK(full.state.history == resumed.state.history);

  RunConfig other = cfg;
  other.model.vit.embed_dim = 32;
  other.finalize();
  CHECK_THROWS_AS(run_train(other, dir.path / "part" / "final.ckpt", 1), ConfigError);
}

TEST_CASE("identical config and seed give identical histories") {
  TempDir dir("det");
  RunConfig cfg = tiny_config(dir.path, 2);
  run_generate(cfg, false, 1);
  const auto a = run_train(cfg, std::nullopt, 1);
  const std::string csv_a = slurp(dir.path / "run" / "metrics.csv");
  cfg.output_dir = (dir.path / "run2").string();
  const auto b = run_train(cfg, std::nullopt, 3);
  CHECK(slurp(dir.path / "run2" / "metrics.csv") == csv_a);
  CHECK(a.state.history == b.state.history);
  cfg.seed = 6;
  cfg.output_dir = (dir.path / "run3").string();
  const auto c = run_train(cfg, std::nullopt, 1);
  CHECK(!(c.state.history == a.state.history));
}

TEST_CASE("training failures carry diagnostics") {
  TempDir dir("fail");
  RunConfig cfg = tiny_config(dir.path, 5);
  run_generate(cfg, false, 1);

  RunConfig wild = cfg;
  wild.adam.lr = 1e300;
  try {
    run_train(wild, std::nullopt, 1);
    FAIL("expected a non-finite loss");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("lr") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }

  RunConfig other = cfg;
  other.data.gen.classes = {"scratch", "oil_spot", "inclusion"};
  other.finalize();
  CHECK_THROWS_AS(run_train(other, std::nullopt, 1), ConfigError);
}

TEST_CASE("eval reports agree and handle missing and empty splits") {
  TempDir dir("eval");
  RunConfig cfg = tiny_config(dir.path, 1);
  cfg.data.test_count = 0;
  run_generate(cfg, false, 1);
  run_train(cfg, std::nullopt, 1);
  const Checkpoint ck = load_checkpoint(dir.path / "run" / "best.ckpt");

  const auto s = run_eval(ck, cfg.data.root, "val", dir.path / "ev", 2);
  const auto j = nlohmann::json::parse(slurp(dir.path / "ev" / "report.json"));
  std::map<std::string, std::string> csv;
  std::istringstream lines(slurp(dir.path / "ev" / "report.csv"));
  std::string line;
  while (std::getline(lines, line)) {
    const auto comma = line.find(',');
    csv[line.substr(0, comma)] = line.substr(comma + 1);
  }
  CHECK(j.at("samples").get<std::size_t>() == 4);
  for (const char* key : {"accuracy", "mae", "mean_iou"}) {
    if (j.at(key).is_null()) {
      CHECK(csv.at(key) == "undefined");
    } else {
      CHECK(std::stod(csv.at(key)) == j.at(key).get<double>());
    }
  }
  CHECK(j.at("accuracy").get<double>() == s.result.report.accuracy().value);
  for (const char* key : {"matched_pairs", "unmatched_predictions", "unmatched_truths", "anchors_total"}) {
    CHECK(std::to_string(j.at(key).get<std::size_t>()) == csv.at(key));
  }
  for (const auto& [name, counts] : j.at("per_class").items()) {
    CHECK(std::to_string(counts.at("truths").get<std::size_t>()) == csv.at("per_class." + name + ".truths"));
  }

  const auto empty = run_eval(ck, cfg.data.root, "test", dir.path / "ev_empty", 1);
  CHECK(!empty.result.report.accuracy().defined);
  const auto je = nlohmann::json::parse(slurp(dir.path / "ev_empty" / "report.json"));
  CHECK(je.at("accuracy").is_null());
  CHECK(je.at("undefined").size() == 3);

  try {
    run_eval(ck, cfg.data.root, "holdout", dir.path / "ev_missing", 1);
    FAIL("expected a missing split error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("holdout") != std::string::npos);
    CHECK(msg.find("train, val") != std::string::npos);
  }
}

TEST_CASE("predict writes json and svg deterministically") {
  TempDir dir("pred");
  const RunConfig cfg = tiny_config(dir.path, 1);
  run_generate(cfg, false, 1);
  run_train(cfg, std::nullopt, 1);
  const Checkpoint ck = load_checkpoint(dir.path / "run" / "final.ckpt");
  const auto ds = load_dataset_split(cfg, "val");
  const fs::path image = dir.path / "data" / "val" / "images" / (ds.records[0].id + ".png");
  const auto a = run_predict(ck, image, dir.path / "p1.json");
  const auto b = run_predict(ck, image, dir.path / "p2.json");
  CHECK(a.detections == b.detections);
  CHECK(slurp(a.json_path) == slurp(b.json_path));
  CHECK(a.svg_path == dir.path / "p1.svg");
  CHECK(slurp(a.svg_path).find("<svg") == 0);
  const auto j = nlohmann::json::parse(slurp(a.json_path));
  for (const auto& box : j.at("boxes")) {
    for (const char* k : {"x1", "y1", "x2", "y2"}) CHECK(box.at(k).is_number());
    CHECK(box.at("class").is_number_integer());
    CHECK(box.at("x1").get<double>() < box.at("x2").get<double>());
  }
  CHECK_THROWS_AS(run_predict(ck, dir.path / "nope.png", dir.path / "p3.json"), IoError);
}
