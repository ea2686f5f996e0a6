#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hass/tensor.hpp"

namespace hass {

// HASSPRM parameter container: magic "HASSPRM", format version u16,
// tensor count u32, then per tensor: name length u16 + UTF-8 name, rank u8,
// extents u32 each, float32 little-endian row-major payload. Values are
// narrowed f64 -> f32 on write and promoted back on read; a write/read/write
// cycle is byte-identical.
inline constexpr std::uint16_t kParamsFormatVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::vector<std::uint8_t> serialize_params(const NamedTensors& tensors);
NamedTensors deserialize_params(const std::vector<std::uint8_t>& bytes);

void write_params_file(const NamedTensors& tensors, const std::string& path);
NamedTensors read_params_file(const std::string& path);

}  // namespace hass
