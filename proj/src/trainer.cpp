#include "defectvit/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "defectvit/checkpoint.hpp"
#include "defectvit/errors.hpp"
#include "defectvit/ops.hpp"

namespace defectvit {

namespace fs = std::filesystem;

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers and rethrows the
// first failure.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<BBox> model_boxes(const RunConfig& cfg, const SampleRecord& r) {
  const int s = cfg.model.vit.image_size;
  return rescale_boxes(r.boxes, r.image.width, r.image.height, s, s);
}

Tensor stack_rows(const std::vector<const Tensor*>& parts) {
  const Shape& first = parts.front()->shape();
  Shape shape = first;
  shape[0] = 0;
  std::vector<Scalar> data;
  for (const Tensor* t : parts) {
    shape[0] += t->dim(0);
    data.insert(data.end(), t->data().begin(), t->data().end());
  }
  return Tensor(shape, std::move(data));
}

// Deterministic Fisher-Yates keyed on (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const std::uint64_t key = rng::derive({seed, 0x5348554646ULL, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng::counter_uniform(key, i) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  return order;
}

bool better(const EpochRecord& candidate, const EpochRecord& best) {
  const double a = candidate.val_accuracy.defined ? candidate.val_accuracy.value : -1.0;
  const double b = best.val_accuracy.defined ? best.val_accuracy.value : -1.0;
  if (a != b) return a > b;
  return candidate.val_loss < best.val_loss;
}

}  // namespace

int thread_count() {
  if (const char* env = std::getenv("DEFECTVIT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(std::min<long>(v, 1024));
  }
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

DatasetSplit load_dataset_split(const RunConfig& cfg, const std::string& split) {
  const fs::path root = cfg.data.root;
  if (!fs::exists(root / split / "annotations.json")) {
    std::string present;
    for (const auto& s : available_splits(root)) present += (present.empty() ? "" : ", ") + s;
    throw ValidationError("split '" + split + "' not found under " + root.string() +
                          " (available: " + (present.empty() ? "none" : present) + ")");
  }
  DatasetSplit ds = load_split(root, split);
  if (ds.classes != cfg.data.gen.classes) {
    std::string have, want;
    for (const auto& c : ds.classes) have += (have.empty() ? "" : ",") + c;
    for (const auto& c : cfg.data.gen.classes) want += (want.empty() ? "" : ",") + c;
    throw ConfigError("dataset " + (root / split).string() + " has classes [" + have + "] but the config declares [" +
                      want + "]");
  }
  return ds;
}

MinMaxScaler fit_scaler(const RunConfig& cfg, const AnchorGrid& grid, const std::vector<SampleRecord>& records) {
  std::vector<Offsets> raw;
  for (const auto& r : records) {
    const auto boxes = model_boxes(cfg, r);
    const Assignment as = assign_anchors(grid, boxes, cfg.assign);
    for (std::size_t a = 0; a < grid.size(); ++a) {
      if (as.states[a] != AnchorState::assigned) continue;
      raw.push_back(encode_offsets(grid.anchors[a], boxes[static_cast<std::size_t>(as.gt_index[a])]));
    }
  }
  return MinMaxScaler::fit(raw);
}

PreparedSample prepare_sample(const RunConfig& cfg, const AnchorGrid& grid, const MinMaxScaler& scaler,
                              const SampleRecord& record) {
  const int s = cfg.model.vit.image_size;
  PreparedSample p;
  p.image = preprocess(record.image, s);
  const auto boxes = model_boxes(cfg, record);
  const AnchorTargets t = assign_targets(grid, boxes, cfg.assign, cfg.num_classes(), scaler);
  p.classes = Tensor({1, t.num_anchors, t.num_classes}, t.class_onehot);
  p.offsets = Tensor({1, t.num_anchors, 4}, t.offsets);
  p.boxes = record.boxes;
  p.width = record.image.width;
  p.height = record.image.height;
  return p;
}

std::vector<PreparedSample> prepare_samples(const RunConfig& cfg, const AnchorGrid& grid, const MinMaxScaler& scaler,
                                            const std::vector<SampleRecord>& records, int threads) {
  std::vector<PreparedSample> out(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) { out[i] = prepare_sample(cfg, grid, scaler, records[i]); });
  return out;
}

TrainState init_state(const RunConfig& cfg, const MinMaxScaler& scaler) {
  TrainState st;
  st.model = DetectorModel(cfg.model, rng::derive({cfg.seed, 0x4d4f44454cULL}));
  auto params = st.model.parameters();
  round_to_f32(params);
  st.scaler = scaler;
  return st;
}

namespace {

std::vector<Detection> to_image_space(std::vector<Detection> dets, int model_size, int width, int height) {
  for (auto& d : dets) {
    const BBox b[1] = {d.box};
    d.box = rescale_boxes(b, model_size, model_size, width, height).front();
  }
  return dets;
}

}  // namespace

std::vector<Detection> predict_image(const RunConfig& cfg, const DetectorModel& model, const AnchorGrid& grid,
                                     const MinMaxScaler& scaler, const Image& image, PredictDiagnostics* diagnostics) {
  const int s = cfg.model.vit.image_size;
  auto dets = predict(model, preprocess(image, s), grid, scaler, cfg.eval.predict, diagnostics);
  return to_image_space(std::move(dets), s, image.width, image.height);
}

EvalResult evaluate(const RunConfig& cfg, const DetectorModel& model, const AnchorGrid& grid,
                    const MinMaxScaler& scaler, const std::vector<PreparedSample>& samples, int threads) {
  struct Item {
    EvalReport report;
    LossReport loss;
  };
  std::vector<Item> items(samples.size());
  const int s = cfg.model.vit.image_size;
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const PreparedSample& p = samples[i];
    const Tensor batch[1] = {p.image};
    const DetectionOutput out = model.forward(batch, ForwardContext{});
    Item& it = items[i];
    it.loss = detection_loss(p.classes, p.offsets, out.class_probs, out.offsets, cfg.loss).report;
    it.report.samples = 1;
    it.report.add_anchors(p.classes, out.class_probs);
    PredictDiagnostics diag;
    const auto dets =
        to_image_space(decode_predictions(out, 0, grid, scaler, cfg.eval.predict, &diag), s, p.width, p.height);
    std::vector<BBox> preds;
    for (const auto& d : dets) {
      BBox b = d.box;
      b.class_id = d.class_id;
      preds.push_back(b);
    }
    it.report.add_boxes(p.boxes, preds, cfg.eval.match_iou);
    it.report.invalid_boxes += diag.invalid_boxes;
  });
  EvalResult r;
  for (const auto& it : items) {
    r.report.merge(it.report);
    r.loss += it.loss.total;
    r.cce += it.loss.cce;
    r.mse += it.loss.mse;
  }
  if (!items.empty()) {
    const double n = static_cast<double>(items.size());
    r.loss /= n;
    r.cce /= n;
    r.mse /= n;
  }
  return r;
}

void train(const RunConfig& cfg, TrainState& state, const std::vector<SampleRecord>& train_records,
           const std::vector<SampleRecord>& val_records, const TrainOptions& options) {
  if (train_records.empty()) throw ValidationError("training split is empty");
  const AnchorGrid grid = build_anchor_grid(cfg.grid);
  const int threads = std::max(options.threads, 1);
  const bool val_is_train = cfg.data.val_split == "train";
  const std::vector<PreparedSample> train_set = prepare_samples(cfg, grid, state.scaler, train_records, threads);
  const std::vector<PreparedSample> val_set =
      val_is_train ? std::vector<PreparedSample>{} : prepare_samples(cfg, grid, state.scaler, val_records, threads);
  auto params = state.model.parameters();
  const std::size_t n = train_set.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.train.batch_size);

  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);

  while (state.epoch < cfg.train.epochs) {
    const int epoch = state.epoch + 1;
    const auto order = epoch_order(n, cfg.seed, epoch);
    for (std::size_t start = 0, batch = 0; start < n; start += bs, ++batch) {
      const std::size_t end = std::min(n, start + bs);
      std::vector<Tensor> images;
      std::vector<PreparedSample> augmented;
      std::vector<const Tensor*> cls, off;
      if (cfg.data.augment) {
        for (std::size_t k = start; k < end; ++k) {
          std::mt19937_64 gen(rng::derive({cfg.seed, 0x415547ULL, static_cast<std::uint64_t>(epoch), order[k]}));
          augmented.push_back(prepare_sample(cfg, grid, state.scaler, augment(train_records[order[k]], gen)));
        }
        for (const auto& p : augmented) {
          images.push_back(p.image);
          cls.push_back(&p.classes);
          off.push_back(&p.offsets);
        }
      } else {
        for (std::size_t k = start; k < end; ++k) {
          const PreparedSample& p = train_set[order[k]];
          images.push_back(p.image);
          cls.push_back(&p.classes);
          off.push_back(&p.offsets);
        }
      }
      const Tensor t_cls = stack_rows(cls), t_off = stack_rows(off);
      Tape tape;
      TapeScope scope(tape);
      const ForwardContext ctx{true, cfg.seed, state.step, 0};
      const DetectionOutput out = state.model.forward(images, ctx);
      const DetectionLoss loss = detection_loss(t_cls, t_off, out.class_probs, out.offsets, cfg.loss);
      if (!std::isfinite(loss.report.total)) {
        std::ostringstream msg;
        msg << "non-finite loss (cce " << loss.report.cce << ", mse " << loss.report.mse << ") at epoch " << epoch
            << ", batch " << batch << ", step " << state.step << ", lr " << cfg.adam.lr;
        throw TrainingError(msg.str());
      }
      backward(loss.total);
      adam_step(params, cfg.adam, state.adam);
      ++state.step;
    }

    const EvalResult tr = evaluate(cfg, state.model, grid, state.scaler, train_set, threads);
    const EvalResult va = val_is_train ? tr : evaluate(cfg, state.model, grid, state.scaler, val_set, threads);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = tr.loss;
    rec.train_cce = tr.cce;
    rec.train_mse = tr.mse;
    rec.train_accuracy = tr.report.accuracy();
    rec.train_mae = tr.report.mae();
    rec.train_mean_iou = tr.report.mean_iou();
    rec.val_loss = va.loss;
    rec.val_accuracy = va.report.accuracy();
    rec.val_mae = va.report.mae();
    rec.val_mean_iou = va.report.mean_iou();
    state.history.push_back(rec);
    state.epoch = epoch;

    const bool improved =
        state.best_epoch == 0 || better(rec, state.history[static_cast<std::size_t>(state.best_epoch - 1)]);
    if (improved) state.best_epoch = epoch;
    if (!options.out_dir.empty()) {
      write_history_csv(options.out_dir / "metrics.csv", state.history);
      write_history_plots(options.out_dir, state.history);
      save_checkpoint(options.out_dir / "final.ckpt", cfg, state);
      if (improved) save_checkpoint(options.out_dir / "best.ckpt", cfg, state);
    }
    if (options.on_epoch) options.on_epoch(rec);
    if (options.stop_after_epoch > 0 && epoch >= options.stop_after_epoch) break;
  }
}

}  // namespace defectvit
