#pragma once

// Checkpoint container, little-endian throughout:
//
//   magic      8 bytes  "SOFTCLU\0"
//   version    u32      kCheckpointVersion
//   meta_len   u64      length of the metadata JSON that follows
//   meta       bytes    {"format_version", "config_hash", "epoch", "step",
//                        "encoder": {...,"J"}, "solver": {...}}
//   count      u32      number of tensors
//   per tensor:
//     name_len u32, name bytes, ndim u32, dims u64[ndim], values f64[prod(dims)]
//
// Tensors appear in EncoderParams::tensors() order. Nothing time-dependent is
// stored, so identical runs produce identical bytes.

#include "softclu/config.hpp"
#include "softclu/encoder.hpp"

#include <filesystem>
#include <string>

namespace softclu {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : Error {
  using Error::Error;
};

struct Checkpoint {
  EncoderParams<double> params;
  SolverConfig solver;
  std::string config_hash;
  int epoch = 0;
  long step = 0;
};

/// Writes to a temporary sibling and renames, so an interrupted save never
/// leaves a truncated file under `path`.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a digest of a file's bytes.
std::string file_digest(const std::filesystem::path& path);

}  // namespace softclu
