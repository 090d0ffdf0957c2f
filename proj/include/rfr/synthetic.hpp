#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfr/tensor.hpp"

namespace rfr {

enum class MaskBand { k10to20, k30to40, k50to60 };

struct BandRange {
  double lo;
  double hi;
};

BandRange band_range(MaskBand band);
/// Accepts "10-20", "30-40", "50-60".
MaskBand parse_mask_band(const std::string& text);
std::string to_string(MaskBand band);

/// Hole-fraction slack allowed around a band.
inline constexpr double kBandSlack = 0.02;

/// (1,3,size,size) texture in [0,1]: a colour gradient, a blended checkerboard
/// and a few Gaussian blobs.
Tensor<float> generate_image(std::size_t size, std::uint64_t seed);

/// (1,1,size,size) binary mask (1 = valid) built from rectangles and
/// free-form strokes until the hole fraction reaches a target drawn inside
/// the band. The final fraction lies in [lo, hi + kBandSlack].
Tensor<float> generate_mask(std::size_t size, MaskBand band, std::uint64_t seed);

std::vector<Tensor<float>> generate_masks(MaskBand band, std::size_t count, std::uint64_t seed,
                                          std::size_t size = 32);

/// Fraction of zero entries.
double hole_fraction(const Tensor<float>& mask);

struct SyntheticSample {
  Tensor<float> gt;      // (1,3,h,w)
  Tensor<float> mask;    // (1,1,h,w)
  Tensor<float> masked;  // gt * mask, exactly 0 in holes
};

SyntheticSample make_sample(std::size_t size, MaskBand band, std::uint64_t seed);

struct Batch {
  Tensor<float> gt;
  Tensor<float> mask;
  Tensor<float> masked;
};

class SyntheticDataset {
 public:
  SyntheticDataset(std::size_t count, std::size_t size, MaskBand band, std::uint64_t seed);

  std::size_t size() const { return samples_.size(); }
  const SyntheticSample& operator[](std::size_t i) const { return samples_.at(i); }
  /// Stacks the listed samples along the batch axis.
  Batch batch(const std::vector<std::size_t>& indices) const;

 private:
  std::vector<SyntheticSample> samples_;
};

}  // namespace rfr
