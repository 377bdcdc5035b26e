// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bcu/network.hpp"

namespace bcu {

/// Model file layout (all integers little-endian):
///
///   "BCUM"  u32 version  u32 len + architecture descriptor bytes
///   u32 num_classes  u32 weight-layer count L
///   2L tensors, (weight, bias) per layer: u32 rank, u32 dims[rank], f32 values
///   u64 len + UTF-8 JSON metadata
inline constexpr char kModelMagic[4] = {'B', 'C', 'U', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

std::vector<std::uint8_t> serialize_model(const Network<float>& net);
Network<float> deserialize_model(const std::vector<std::uint8_t>& bytes);

void save_model(const Network<float>& net, const std::filesystem::path& path);
/// Throws FormatError (with byte offset and, inside tensor data, the layer name).
Network<float> load_model(const std::filesystem::path& path);

/// Stable 64-bit digest of architecture and weights, as 16 hex digits.
std::string model_hash(const Network<float>& net);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::string hex64(std::uint64_t value);

}  // namespace bcu
