#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfr/autograd.hpp"

namespace rfr {

inline constexpr char kWeightsMagic[4] = {'R', 'F', 'R', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;

// Layout, little-endian throughout:
//   "RFRW" | u32 version | u32 count |
//   count x ( u16 name_len | name | u8 dtype (0 = f32) | u8 rank | rank x u32 dim | f32 data )
// Parameters and buffers share one namespace and are written in sorted-name order.

template <typename T>
std::vector<std::uint8_t> serialize_weights(const ParamStore<T>& store);

/// Overwrites every parameter and buffer of `store`. Every tensor in the store
/// must appear exactly once with a matching shape; throws FormatError naming
/// the offending field otherwise. On error `store` is left unchanged.
template <typename T>
void deserialize_weights(ParamStore<T>& store, const std::vector<std::uint8_t>& bytes);

template <typename T>
void save_weights(const ParamStore<T>& store, const std::string& path);
template <typename T>
void load_weights(ParamStore<T>& store, const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace rfr
