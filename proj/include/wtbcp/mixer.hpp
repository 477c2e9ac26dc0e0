#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "wtbcp/tensorio.hpp"
#include "wtbcp/volume.hpp"

namespace wtbcp {

// Binary copy-paste mask over the spatial axes. The single zero block
// [offset, offset + size) marks the pasted crop; everything else is 1.
struct MixMask {
  Shape spatial_shape;
  std::vector<uint8_t> values;
  double ratio = 2.0 / 3.0;
  Shape crop_offset;
  Shape crop_size;

  int64_t zero_count() const;
  bool is_zero_block(std::span<const int64_t> idx) const;
  // Mask with the roles of 0 and 1 exchanged (block region becomes 1).
  MixMask complement() const;
  // Every voxel 1 (no paste); a degenerate mask used for boundary checks.
  static MixMask ones(const Shape& spatial_shape);
  // Every voxel 0.
  static MixMask zeros(const Shape& spatial_shape);
};

// Block extent per axis: floor(ratio * dim).
Shape mask_block_size(std::span<const int64_t> spatial_shape, double ratio);

MixMask generate_mask(std::span<const int64_t> spatial_shape, double ratio, Rng& rng);

// out = foreground * M + background * (1 - M), voxelwise over every channel.
Volume mix(const Volume& foreground, const Volume& background, const MixMask& mask);

struct MixedImages {
  Volume inward;   // labeled_j where M = 1, unlabeled_p in the block
  Volume outward;  // unlabeled_q where M = 1, labeled_i in the block
};

// Bidirectional copy-paste of one labeled pair (i, j) and one unlabeled pair
// (p, q). Identity of the samples is checked by the caller's indices.
MixedImages mix_pair(const Volume& labeled_i, const Volume& labeled_j, const Volume& unlabeled_p,
                     const Volume& unlabeled_q, const MixMask& mask);

enum class MixDirection { inward, outward };

// inward:  Y = labels * M + pseudo * (1 - M)
// outward: Y = pseudo * M + labels * (1 - M)
// Both inputs must be hard label maps.
Volume mix_labels(const Volume& labels, const Volume& pseudo_labels, const MixMask& mask, MixDirection direction);

}  // namespace wtbcp
