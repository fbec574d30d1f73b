#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "detectornet/data.hpp"
#include "detectornet/model.hpp"

namespace dnet {

/// Everything needed to rebuild a trained model bit-exactly.
///
/// Byte layout (all integers little-endian):
///
///   "DNET" | u32 version | u64 n | n bytes of UTF-8 JSON
///   | u64 parameter count
///   | per parameter: u64 name length | name | u64 rank | rank x u64 dims | f64 payload
///   | u64 FNV-1a hash of every preceding byte
///
/// The JSON block holds {"model": ModelConfig, "normalization": {mean, std},
/// "metadata": {...}}.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig config;
  Normalization norm;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> params;

  /// Snapshot (deep copy) of the model's current parameters.
  static Checkpoint capture(const DetectorNet& model, const Normalization& norm);
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws FormatError on bad magic, unknown version, truncation, trailing
/// bytes, shape/length inconsistencies or a hash mismatch.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint parameters into `model`. ConfigError when the model was
/// built from a different architecture (including different ablation flags).
void restore_parameters(DetectorNet& model, const Checkpoint& checkpoint);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

}  // namespace dnet
