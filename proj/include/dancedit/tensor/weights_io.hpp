#pragma once

// "DEWT" weight files: magic, version u32, count u32, then per tensor
// name length u32 + UTF-8 name, rank u32, extents u32[rank], f32 payload.
// All little-endian.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dancedit/tensor/nn.hpp"

namespace dancedit {

inline constexpr std::uint32_t kWeightsVersion = 1;

std::string encode_weights(std::span<const Parameter> tensors);
std::vector<Parameter> decode_weights(std::string_view bytes);

void save_weights(const std::filesystem::path& path, std::span<const Parameter> tensors);
std::vector<Parameter> load_weights(const std::filesystem::path& path);

// Loads every parameter of `params` whose name starts with `prefix` from
// `tensors`; missing names or shape mismatches throw.
void assign_weights(ParameterSet& params, std::span<const Parameter> tensors,
                    std::string_view prefix = "");

}  // namespace dancedit
