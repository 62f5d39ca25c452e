#pragma once

// The four pipeline commands behind the CLI and the Python module.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "defectvit/checkpoint.hpp"
#include "defectvit/config.hpp"

namespace defectvit {

// Refusal to act on existing output (exit code 2 at the CLI).
struct RefusalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerateSummary {
  std::filesystem::path root;
  std::size_t train = 0, val = 0, test = 0;
};

// Writes train/val/test under cfg.data.root. A non-empty root is refused
// unless force is set, in which case the three split directories are
// replaced.
GenerateSummary run_generate(const RunConfig& cfg, bool force, int threads, std::ostream* log = nullptr);

struct TrainSummary {
  std::filesystem::path out_dir;
  TrainState state;
};

// Trains from scratch, or continues `resume_from` when given. Resuming
// needs the same model and anchor settings as the checkpoint.
TrainSummary run_train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume_from, int threads,
                       std::ostream* log = nullptr, int stop_after_epoch = 0);

struct EvalSummary {
  EvalResult result;
  std::vector<std::string> classes;
  std::string split;
  std::filesystem::path out_dir;
};

// Evaluates a checkpoint on one split of `data_root`. An empty split gives
// undefined metrics.
EvalSummary run_eval(const Checkpoint& ck, const std::filesystem::path& data_root, const std::string& split,
                     const std::filesystem::path& out_dir, int threads);

struct PredictSummary {
  std::vector<Detection> detections;
  std::filesystem::path json_path;
  std::filesystem::path svg_path;
};

// Writes <out>.json-style predictions and an SVG overlay next to it.
PredictSummary run_predict(const Checkpoint& ck, const std::filesystem::path& image_path,
                           const std::filesystem::path& json_out);

}  // namespace defectvit
