#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedfa/model.hpp"

namespace fedfa {

// Flat little-endian encoding:
//   "FFA1" | version:u32
//   per tensor: name_len:u32 | name (UTF-8) | rank:u32 | dims:u64[rank] | payload:f64[numel]
inline constexpr char kCheckpointMagic[4] = {'F', 'F', 'A', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Bytes = std::vector<std::uint8_t>;

Bytes encode_params(const ModelParams& params);
ModelParams decode_params(std::span<const std::uint8_t> bytes);
// Decodes at most `max_tensors` records and reports the bytes consumed, for
// messages that carry trailing data after the parameters.
ModelParams decode_params_prefix(std::span<const std::uint8_t> bytes, std::size_t max_tensors, std::size_t& consumed);

// Size of encode_params(params) without building it.
std::size_t encoded_size(const ModelParams& params);

void save_params(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_params(const std::filesystem::path& path);

// Raw little-endian f64 values appended to messages.
void append_f64(Bytes& out, std::span<const double> values);
void append_u32(Bytes& out, std::uint32_t v);
void append_u64(Bytes& out, std::uint64_t v);

}  // namespace fedfa
