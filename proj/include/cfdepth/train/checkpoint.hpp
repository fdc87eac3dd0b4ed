#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cfdepth/tensor.hpp"

CFDEPTH_BEGIN_NAMESPACE

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// First/second ADAM moments and step counter of one parameter.
struct OptimizerEntry {
  std::string name;
  std::uint64_t step = 0;
  Tensor m;
  Tensor v;
};

/// Versioned training snapshot.
///
/// Binary layout (little-endian):
///   "CFDM" | u32 version | u32 phase | u64 iteration | u32 len, config echo
///   | u32 count, { u32 len, name | u32 rank, u32 dims[rank] | f32 values }
///   | u32 count, { u32 len, name | u64 step | u32 rank, u32 dims[rank] | f32 m | f32 v }
///   | u64 FNV-1a checksum of all preceding bytes
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::uint32_t phase = 1;
  std::uint64_t iteration = 0;
  std::string config;
  std::vector<NamedTensor> tensors;
  std::vector<OptimizerEntry> optimizer;

  const NamedTensor* find(std::string_view name) const;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);

/// Throws ChecksumError, TruncatedError, CheckpointVersionError or
/// CheckpointFormatError.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

/// Written to a temporary sibling and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

CFDEPTH_END_NAMESPACE
