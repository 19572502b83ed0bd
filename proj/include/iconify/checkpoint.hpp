#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "iconify/tensor.hpp"
#include "iconify/training.hpp"

namespace iconify {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Raw checkpoint contents.
///
/// Layout (little-endian): "ICFY", u32 version, u32-length-prefixed kind tag,
/// u32 record count, records of (u32 name length, name, u32 rank, u32 dims...,
/// f32 values), u32 metadata count, (key, value) string pairs, then the 64-bit
/// FNV-1a hash of every preceding byte.
struct CheckpointData {
  std::string kind;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  std::map<std::string, std::string> meta;

  bool operator==(const CheckpointData&) const = default;
};

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Written to a temporary sibling and renamed, so an existing file is never half-overwritten.
void write_checkpoint_file(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint_file(const std::filesystem::path& path);

CheckpointData to_checkpoint(const AnyModel& model, const RunState& state);

struct LoadedCheckpoint {
  AnyModel model;
  RunState state;
};

LoadedCheckpoint from_checkpoint(const CheckpointData& data);

void save_checkpoint(const std::filesystem::path& path, const AnyModel& model, const RunState& state);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace iconify
