#pragma once

#include <cstdint>
#include <string>

#include "bvq/model.hpp"

namespace bvq {

/// Provenance carried inside a checkpoint.
struct CheckpointInfo {
  std::string model_name;
  std::uint64_t config_hash = 0;
  std::uint32_t epochs = 0;
};

/// Binary container, magic "BVQ1", little-endian lengths, one section per
/// parameter layer (scale as a 64-bit real, codes as signed bytes, biases
/// as 64-bit reals). Codes survive save/load bit-exactly.
void save_checkpoint(const std::string& path, const Model& model,
                     const CheckpointInfo& info);

struct LoadedCheckpoint {
  Model model;
  CheckpointInfo info;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

/// FNV-1a over a byte string; used to stamp configs into checkpoints.
std::uint64_t fnv1a_hash(const std::string& text);

}  // namespace bvq
