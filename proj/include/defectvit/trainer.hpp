#pragma once

// Training loop, evaluation and dataset preparation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "defectvit/config.hpp"
#include "defectvit/dataset.hpp"
#include "defectvit/report.hpp"

namespace defectvit {

// Worker count from DEFECTVIT_THREADS, else hardware concurrency; at least 1.
int thread_count();

// One sample in model space plus its original-resolution boxes.
struct PreparedSample {
  Tensor image;    // [1 x size x size], normalized
  Tensor classes;  // [1 x A x C] one-hot, background last
  Tensor offsets;  // [1 x A x 4] scaled, zero rows where unassigned
  std::vector<BBox> boxes;  // original image coordinates
  int width = 0;
  int height = 0;
};

struct TrainState {
  DetectorModel model;
  MinMaxScaler scaler;
  AdamState adam;
  int epoch = 0;            // completed epochs
  std::uint64_t step = 0;   // completed optimizer steps
  std::vector<EpochRecord> history;
  int best_epoch = 0;       // 0 until a best checkpoint exists
};

// Loads a split and checks its class list against the config. A class
// mismatch is a ConfigError; a missing split is a ValidationError listing
// the splits present.
DatasetSplit load_dataset_split(const RunConfig& cfg, const std::string& split);

// Fit on the raw offsets of every assigned anchor in the training split.
MinMaxScaler fit_scaler(const RunConfig& cfg, const AnchorGrid& grid, const std::vector<SampleRecord>& records);

PreparedSample prepare_sample(const RunConfig& cfg, const AnchorGrid& grid, const MinMaxScaler& scaler,
                              const SampleRecord& record);
std::vector<PreparedSample> prepare_samples(const RunConfig& cfg, const AnchorGrid& grid, const MinMaxScaler& scaler,
                                            const std::vector<SampleRecord>& records, int threads);

// Fresh model (seeded from cfg.seed, weights rounded to f32) and optimizer.
TrainState init_state(const RunConfig& cfg, const MinMaxScaler& scaler);

struct EvalResult {
  EvalReport report;
  double loss = 0.0;  // mean per-sample combined loss
  double cce = 0.0;
  double mse = 0.0;
};

// Eval-mode forward and predict on every sample. Per-sample reports merge
// in sample order, so the result does not depend on `threads`.
EvalResult evaluate(const RunConfig& cfg, const DetectorModel& model, const AnchorGrid& grid,
                    const MinMaxScaler& scaler, const std::vector<PreparedSample>& samples, int threads);

// Detections in the coordinates of an image of the given size.
std::vector<Detection> predict_image(const RunConfig& cfg, const DetectorModel& model, const AnchorGrid& grid,
                                     const MinMaxScaler& scaler, const Image& image,
                                     PredictDiagnostics* diagnostics = nullptr);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  int threads = 1;
  int stop_after_epoch = 0;       // > 0: return once this epoch completes
  std::function<void(const EpochRecord&)> on_epoch;
};

// Runs epochs state.epoch + 1 .. cfg.train.epochs. Writes metrics.csv,
// history plots, final.ckpt every epoch and best.ckpt when validation
// accuracy improves (ties: lower validation loss). Throws TrainingError on a
// non-finite loss.
void train(const RunConfig& cfg, TrainState& state, const std::vector<SampleRecord>& train_records,
           const std::vector<SampleRecord>& val_records, const TrainOptions& options);

}  // namespace defectvit
