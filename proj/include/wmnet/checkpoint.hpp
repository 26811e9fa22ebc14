#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "WMCK"  u32 version  u32 header_bytes  header (JSON text)
//   u32 tensor_count
//   per tensor: u32 name_bytes, name, u32 rank, rank x u32 dims, float32 data
//
// Tensors are the model parameters (including batch-norm running
// statistics) followed by the Adam moments as "adam.m.<name>" and
// "adam.v.<name>".

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "wmnet/training.hpp"

namespace wmnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMetadata {
  TrainingConfig config;
  std::optional<EpochRecord> metrics;
};

struct Checkpoint {
  TrainState state;
  CheckpointMetadata metadata;
};

/// The JSON header written in front of the tensor section.
std::string checkpoint_header(const TrainState& state, const CheckpointMetadata& metadata);

void save_checkpoint(const TrainState& state, const CheckpointMetadata& metadata,
                     const std::filesystem::path& path);

/// Throws BadMagic, BadVersion or Truncated for the matching defects, Io for
/// anything else that is malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace wmnet
