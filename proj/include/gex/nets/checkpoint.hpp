#pragma once

// Binary checkpoint (.gckpt). Layout, all integers little-endian:
//
//   "GIRMCKPT"             8-byte magic
//   u32 version            currently 1
//   str profile
//   i64 frames             global frame counter
//   u8  girm_trained, i64 girm_phases
//   f64 ema, f64 emv, i64 normalizer_steps
//   u32 count, then count x { str name, str state }        random streams
//   u32 count, then count x { str store, u32 entries, entries x entry }
//
//   entry = str name, u8 trainable, i64 step, u32 rank, rank x i64 dim,
//           then value, m, v as numel(dims) x f32 each
//   str   = u32 length + bytes

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gex/graph/param_store.hpp"

namespace gex::nets {

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'G', 'I', 'R', 'M', 'C', 'K', 'P', 'T'};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointHeaderError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  std::string profile;
  int64_t frames = 0;
  bool girm_trained = false;
  int64_t girm_phases = 0;
  double ema = 0.0;
  double emv = 0.0;
  int64_t normalizer_steps = 0;
  std::vector<std::pair<std::string, std::string>> rng_states;
  std::vector<std::pair<std::string, graph::ParamStore<float>>> stores;

  bool operator==(const Checkpoint&) const = default;
};

std::vector<char> serialize(const Checkpoint& c);
Checkpoint deserialize(const std::vector<char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gex::nets
