#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "spinet/model.hpp"

namespace spinet {

// Progress counters stored next to the weights so training can resume.
struct TrainingState {
  std::int64_t step = 0;
  std::int64_t optimizer_steps = 0;
  double best_mcc = -2.0;
  std::int64_t best_step = -1;

  bool operator==(const TrainingState&) const = default;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

// In-memory image of a checkpoint file.
//
// File layout (all integers little-endian):
//   "SPINETCK" | u32 version | u32 blob length | JSON blob |
//   u32 entry count | entries { u16 name length, name, u8 rank, u32 dims[rank], u64 byte offset } |
//   f32 payload
// The JSON blob is {"model": <config>, "training": <counters>} with sorted keys.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  SPInetConfig config;
  TrainingState training;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

// Snapshot of parameters, normalization statistics and (optionally) Adam
// moments, stored as f32.
Checkpoint capture(const SPInet& model, const TrainingState& training = {}, bool include_optimizer = true);

// Copies a snapshot into `model`. Throws FormatError(config_mismatch) when the
// configurations differ and FormatError(shape_mismatch) for any entry whose
// shape disagrees with the model.
void restore(SPInet& model, const Checkpoint& checkpoint);

std::unique_ptr<SPInet> instantiate(const Checkpoint& checkpoint, DType dtype = DType::f32);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
// Reads and validates a checkpoint: every entry must match the shapes implied
// by the embedded config.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// As above, and additionally requires the embedded config to equal `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const SPInetConfig& expected);

}  // namespace spinet
