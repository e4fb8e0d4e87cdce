#pragma once

#include "softclu/encoder.hpp"
#include "softclu/ot.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace softclu {

struct TrainConfig {
  int epochs = 250;
  int batch_size = 32;
  double lr = 1e-3;
  double lr_decay = 0.7;
  int decay_every = 20;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double eta = 0.01;
  int num_points = 2048;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 keeps only the final one
  SolverConfig solver;
  EncoderConfig encoder;  // encoder.clusters mirrors solver.clusters

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const SolverConfig& solver);
nlohmann::json to_json(const EncoderConfig& encoder);

/// Parses a config object. Missing keys keep their defaults; unknown keys
/// and ill-typed values raise ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);
SolverConfig solver_config_from_json(const nlohmann::json& j);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

TrainConfig load_train_config(const std::filesystem::path& path);

/// 64-bit FNV-1a of the canonical (sorted-key) JSON dump, as 16 hex digits.
std::string config_hash(const TrainConfig& config);
std::string fnv1a_hex(std::string_view bytes);

}  // namespace softclu
