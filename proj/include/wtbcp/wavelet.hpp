#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "wtbcp/volume.hpp"

namespace wtbcp {

enum class WaveletFamily { haar, db2 };

std::string_view to_string(WaveletFamily family);
WaveletFamily parse_wavelet_family(std::string_view name);

// Single-level separable decomposition.
//
// Band b is high-pass along spatial axis a iff bit a of b is set, so band 0 is
// LL (LLL in 3D). Band names spell one letter per spatial axis in axis order:
// in 2D, "HL" is high-pass along the row axis and low-pass along the column
// axis. Each band has shape (C, ceil(n_a / 2)...).
struct Subbands {
  std::vector<Volume> bands;
  WaveletFamily family = WaveletFamily::haar;
  Shape original_shape;

  int spatial_rank() const { return static_cast<int>(original_shape.size()) - 1; }
  const Volume& band(std::string_view name) const;
  Volume& band(std::string_view name);
  static std::string band_name(size_t index, int spatial_rank);
};

// Odd extents are first padded by one reflected sample; the filter bank is
// applied with periodic wrap over the (even) padded extent, which keeps the
// transform orthonormal for both families.
Subbands dwt(const Volume& image, WaveletFamily family = WaveletFamily::haar);

// Inverse transform, cropped back to original_shape.
Volume idwt(const Subbands& subbands);

// Full-resolution companions of an image: `low` reconstructs from LL alone,
// `high` from the detail bands alone, `main` is the input. low + high == main
// up to rounding.
struct FrequencyTriple {
  Volume low;
  Volume main;
  Volume high;
};

FrequencyTriple frequency_triple(const Volume& image, WaveletFamily family = WaveletFamily::haar);

}  // namespace wtbcp
