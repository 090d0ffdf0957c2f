#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfr/tensor.hpp"

namespace rfr {

// 8-bit binary PGM (P5, one channel) and PPM (P6, three channels). Samples map
// to v/255 on read; on write values are clamped to [0,1] and rounded to the
// nearest of the 256 levels, so read-then-write reproduces the file bytes.

/// Returns (1, c, h, w) with c = 1 for P5 and 3 for P6.
Tensor<float> decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");
/// `image` must be (1, 1|3, h, w).
std::vector<std::uint8_t> encode_pnm(const Tensor<float>& image);

Tensor<float> read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Tensor<float>& image);

/// Single-channel binary mask from a grayscale image: 1 where value >= 128/255.
Tensor<float> threshold_mask(const Tensor<float>& gray);

}  // namespace rfr
