#pragma once

// Binary checkpoint: "MDETCKPT", u32 version, u64 metadata length, JSON
// metadata, u32 tensor count, then per tensor: u32 name length, name, u32
// rank, u64 dims, little-endian f32 values. Tensors are the model weights
// followed by the Adam moments as "adam.m.<name>" and "adam.v.<name>".

#include <filesystem>

#include "defectvit/config.hpp"
#include "defectvit/trainer.hpp"

namespace defectvit {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  TrainState state;
};

void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const TrainState& state);

// Rebuilds the model from the stored config and checks every weight name
// and shape against it. Throws IoError or ValidationError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace defectvit
