#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "hact/config.hpp"
#include "hact/hierarchy.hpp"
#include "hact/model.hpp"

namespace hact {

constexpr std::uint8_t kCheckpointVersion = 1;

// File layout, little-endian:
//   "HACT", version byte
//   config text, hierarchy text (empty when absent), rng state text  (u32 length + bytes each)
//   trained_epochs u64
//   u32 array count, then per array: name, u32 rank, u64 extents, f64 values
//   u32 mask count, then per prunable layer: name, u32 channels, one byte per channel
//   u64 FNV-1a checksum of all preceding bytes
struct Checkpoint {
  ExperimentConfig config;
  Model model;
  std::optional<Hierarchy> hierarchy;
  // Text form of the mt19937_64 stream a continued run would draw from.
  std::string rng_state;
};

std::string encode_checkpoint(Model& model, const ExperimentConfig& config, const Hierarchy* hierarchy,
                              const std::string& rng_state);
/// Throws LoadError naming the offset on truncation, corruption or a version mismatch.
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");

void save_checkpoint(const std::string& path, Model& model, const ExperimentConfig& config,
                     const Hierarchy* hierarchy = nullptr, const std::string& rng_state = "");
Checkpoint load_checkpoint(const std::string& path);

}  // namespace hact
