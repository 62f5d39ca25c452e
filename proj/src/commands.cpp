#include "defectvit/commands.hpp"

#include <cstdio>
#include <nlohmann/json.hpp>

#include "defectvit/errors.hpp"

namespace defectvit {

namespace fs = std::filesystem;

namespace {

const char* kSplits[] = {"train", "val", "test"};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string metric_text(const Metric& m, const char* pattern = "%.4f") {
  return m.defined ? fmt(pattern, m.value) : "undefined";
}

}  // namespace

GenerateSummary run_generate(const RunConfig& cfg, bool force, int threads, std::ostream* log) {
  const fs::path root = cfg.data.root;
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) throw RefusalError("output directory " + root.string() + " is not empty; pass --force to overwrite");
    for (const char* s : kSplits) fs::remove_all(root / s);
  }
  GenerateSummary out;
  out.root = root;
  const std::size_t counts[3] = {cfg.data.train_count, cfg.data.val_count, cfg.data.test_count};
  std::size_t* targets[3] = {&out.train, &out.val, &out.test};
  for (int i = 0; i < 3; ++i) {
    const auto records = generate_split(cfg.data.gen, kSplits[i], counts[i], threads);
    write_split(root, kSplits[i], cfg.data.gen.classes, records);
    *targets[i] = records.size();
    if (log) *log << kSplits[i] << ": " << records.size() << " samples\n";
  }
  return out;
}

TrainSummary run_train(const RunConfig& cfg, const std::optional<fs::path>& resume_from, int threads,
                       std::ostream* log, int stop_after_epoch) {
  const DatasetSplit train_split = load_dataset_split(cfg, "train");
  const DatasetSplit val_split =
      cfg.data.val_split == "train" ? DatasetSplit{} : load_dataset_split(cfg, cfg.data.val_split);
  if (train_split.records.empty()) throw ValidationError("training split under " + cfg.data.root + " is empty");
  const AnchorGrid grid = build_anchor_grid(cfg.grid);

  TrainSummary out;
  out.out_dir = cfg.output_dir;
  if (resume_from) {
    Checkpoint ck = load_checkpoint(*resume_from);
    const auto mine = config_to_json(cfg), theirs = config_to_json(ck.config);
    for (const char* section : {"model", "anchors"}) {
      if (mine.at(section) != theirs.at(section)) {
        throw ConfigError(std::string("cannot resume: [") + section + "] differs from the checkpoint " +
                          resume_from->string());
      }
    }
    if (mine.at("data").at("classes") != theirs.at("data").at("classes")) {
      throw ConfigError("cannot resume: data.classes differs from the checkpoint " + resume_from->string());
    }
    out.state = std::move(ck.state);
    if (log) *log << "resuming from " << resume_from->string() << " after epoch " << out.state.epoch << "\n";
  } else {
    out.state = init_state(cfg, fit_scaler(cfg, grid, train_split.records));
  }

  TrainOptions opts;
  opts.out_dir = cfg.output_dir;
  opts.threads = threads;
  opts.stop_after_epoch = stop_after_epoch;
  if (log) {
    opts.on_epoch = [&](const EpochRecord& r) {
      *log << "epoch " << r.epoch << "/" << cfg.train.epochs << "  loss " << fmt("%.5f", r.train_loss) << "  acc "
           << metric_text(r.train_accuracy) << "  iou " << metric_text(r.train_mean_iou) << "  mae "
           << metric_text(r.train_mae, "%.2f") << "  | val loss " << fmt("%.5f", r.val_loss) << "  acc "
           << metric_text(r.val_accuracy) << "  iou " << metric_text(r.val_mean_iou) << "  mae "
           << metric_text(r.val_mae, "%.2f") << std::endl;
    };
  }
  train(cfg, out.state, train_split.records, val_split.records, opts);
  return out;
}

EvalSummary run_eval(const Checkpoint& ck, const fs::path& data_root, const std::string& split, const fs::path& out_dir,
                     int threads) {
  RunConfig cfg = ck.config;
  cfg.data.root = data_root.string();
  const DatasetSplit ds = load_dataset_split(cfg, split);
  const AnchorGrid grid = build_anchor_grid(cfg.grid);
  const auto samples = prepare_samples(cfg, grid, ck.state.scaler, ds.records, threads);
  EvalSummary out;
  out.result = evaluate(cfg, ck.state.model, grid, ck.state.scaler, samples, threads);
  out.classes = ds.classes;
  out.split = split;
  out.out_dir = out_dir;
  write_eval_report(out_dir, out.result.report, out.classes, split);
  return out;
}

PredictSummary run_predict(const Checkpoint& ck, const fs::path& image_path, const fs::path& json_out) {
  const Image image = read_png(image_path);
  const AnchorGrid grid = build_anchor_grid(ck.config.grid);
  PredictSummary out;
  out.detections = predict_image(ck.config, ck.state.model, grid, ck.state.scaler, image);
  out.json_path = json_out;
  out.svg_path = fs::path(json_out).replace_extension(".svg");
  const auto& classes = ck.config.data.gen.classes;
  write_text(out.json_path,
             predictions_json(image_path.filename().string(), image.width, image.height, out.detections, classes)
                     .dump(2) +
                 "\n");
  write_text(out.svg_path, predictions_svg(image, out.detections, classes));
  return out;
}

}  // namespace defectvit
