#pragma once

// Run configuration: one TOML file drives generate, train and eval.

#include <cstdint>
#include <filesystem>
#include <nlohmann/json_fwd.hpp>
#include <string>

#include "defectvit/anchors.hpp"
#include "defectvit/detect_head.hpp"
#include "defectvit/losses.hpp"
#include "defectvit/optim.hpp"
#include "defectvit/synth.hpp"

namespace defectvit {

struct DataConfig {
  GenConfig gen;
  std::string root = "data/default";
  std::size_t train_count = 600;
  std::size_t val_count = 100;
  std::size_t test_count = 100;
  std::string val_split = "val";  // "train" for overfit runs
  bool augment = false;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
};

struct EvalConfig {
  PredictParams predict;
  double match_iou = 0.3;
};

struct RunConfig {
  ModelConfig model;
  AnchorGridParams grid;
  AssignParams assign;
  LossConfig loss;
  AdamConfig adam;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  // Sets the head's anchor and class counts from the grid and class list
  // and checks every cross-section invariant. Throws ConfigError.
  void finalize();
  std::size_t num_classes() const { return data.gen.classes.size() + 1; }
};

// Unknown keys and wrongly typed values are ConfigErrors naming the key.
// Relative data.root / output_dir stay relative to the working directory.
RunConfig parse_config_toml(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j, const std::string& origin = "<json>");

}  // namespace defectvit
