#pragma once

// Binary checkpoint container:
//   "SSLC" | u32 version | u32 len, config JSON | u32 count, tensors
//   | u32 count, u64 metadata | u64 FNV-1a-64 of everything before it
// A tensor is u32 name length, name, u32 rank, i32 dims, f64 values. All
// integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sslseg/autograd.hpp"

namespace sslseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_json;
  std::map<std::string, ag::Tensor> tensors;
  std::map<std::string, std::uint64_t> metadata;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on a bad magic, version, checksum or truncation.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Tensors under `prefix` with the prefix stripped.
std::map<std::string, ag::Tensor> tensors_with_prefix(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace sslseg
