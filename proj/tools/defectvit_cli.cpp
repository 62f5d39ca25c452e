// defectvit generate|train|eval|predict

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>

#include "defectvit/commands.hpp"
#include "defectvit/errors.hpp"

namespace fs = std::filesystem;
using namespace defectvit;

namespace {

struct Options {
  std::string config;
  bool force = false;
  std::string checkpoint;
  std::string split = "test";
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string image;
};

int run(CLI::App& app, const Options& o) {
  const int threads = thread_count();
  if (app.got_subcommand("generate")) {
    RunConfig cfg = load_config(o.config);
    if (o.seed) cfg.data.gen.seed = *o.seed;
    if (!o.out.empty()) cfg.data.root = o.out;
    const auto s = run_generate(cfg, o.force, threads, &std::cout);
    std::cout << "wrote " << s.train << "/" << s.val << "/" << s.test << " samples to " << s.root.string() << "\n";
    return 0;
  }
  if (app.got_subcommand("train")) {
    RunConfig cfg = load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.out.empty()) cfg.output_dir = o.out;
    std::optional<fs::path> resume;
    if (!o.checkpoint.empty()) resume = o.checkpoint;
    const auto s = run_train(cfg, resume, threads, &std::cout);
    std::cout << "checkpoints and metrics in " << s.out_dir.string() << " (best epoch " << s.state.best_epoch << ")\n";
    return 0;
  }
  if (app.got_subcommand("eval")) {
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    fs::path root = ck.config.data.root;
    if (!o.config.empty()) root = load_config(o.config).data.root;
    const fs::path out = o.out.empty() ? fs::path(ck.config.output_dir) / ("eval_" + o.split) : fs::path(o.out);
    const auto s = run_eval(ck, root, o.split, out, threads);
    const auto& r = s.result.report;
    std::cout << "split " << s.split << ": " << r.samples << " samples, accuracy " << format_metric(r.accuracy())
              << ", mae " << format_metric(r.mae()) << ", mean IoU " << format_metric(r.mean_iou()) << "\n";
    std::cout << "report written to " << (out / "report.json").string() << " and " << (out / "report.csv").string()
              << "\n";
    return 0;
  }
  if (app.got_subcommand("predict")) {
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    const fs::path out = o.out.empty() ? fs::path(fs::path(o.image).stem().string() + ".predictions.json") : fs::path(o.out);
    const auto s = run_predict(ck, o.image, out);
    for (const auto& d : s.detections) {
      std::printf("%-18s %.3f  [%.1f, %.1f, %.1f, %.1f]\n", ck.config.data.gen.classes.at(d.class_id).c_str(), d.score,
                  d.box.x1, d.box.y1, d.box.x2, d.box.y2);
    }
    std::cout << s.detections.size() << " detections written to " << s.json_path.string() << " and "
              << s.svg_path.string() << "\n";
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer-based surface defect detection on synthetic steel images"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("generate", "Render the synthetic train/val/test dataset");
  gen->add_option("--config", o.config, "Run configuration (TOML)")->required();
  gen->add_flag("--force", o.force, "Replace an existing dataset");
  gen->add_option("--seed", seed, "Override data.seed");
  gen->add_option("--out", o.out, "Override data.root");

  auto* tr = app.add_subcommand("train", "Train a detector");
  tr->add_option("--config", o.config, "Run configuration (TOML)")->required();
  tr->add_option("--checkpoint", o.checkpoint, "Resume from this checkpoint");
  tr->add_option("--seed", seed, "Override the training seed");
  tr->add_option("--out", o.out, "Override output_dir");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ev->add_option("--config", o.config, "Take the dataset root from this configuration");
  ev->add_option("--split", o.split, "Split name (default test)");
  ev->add_option("--out", o.out, "Report directory");

  auto* pr = app.add_subcommand("predict", "Detect defects in one image");
  pr->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  pr->add_option("image", o.image, "Grayscale PNG")->required();
  pr->add_option("--out", o.out, "Predictions JSON path; the SVG overlay goes next to it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  for (auto* sub : {gen, tr}) {
    if (sub->parsed() && sub->count("--seed") > 0) o.seed = seed;
  }

  try {
    return run(app, o);
  } catch (const RefusalError& e) {
    std::cerr << "refused: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
