#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "wtbcp/volume.hpp"

namespace wtbcp {

// A predicted and a reference binary region on the same grid.
struct BinaryRegionPair {
  Shape shape;                  // spatial extents
  std::vector<uint8_t> pred;    // 0/1, row-major
  std::vector<uint8_t> gt;      // 0/1, row-major
  std::vector<double> spacing;  // per-axis voxel size; empty means isotropic 1

  void validate() const;
};

// Extracts `cls` from two single-channel label volumes.
BinaryRegionPair region_pair(const Volume& pred_labels, const Volume& gt_labels, int cls);

// Overlap scores in percent. Both-empty regions score 100.
double dice(const BinaryRegionPair& pair);
double jaccard(const BinaryRegionPair& pair);

// Boundary voxels: region voxels with at least one face neighbour outside the
// region. Voxels on the array border count as boundary.
std::vector<uint8_t> boundary(std::span<const uint8_t> region, std::span<const int64_t> shape);

// Distances from every pred-boundary voxel to the nearest gt-boundary voxel,
// followed by the distances in the other direction. Throws
// UndefinedMetricError when either region is empty.
std::vector<double> pooled_surface_distances(const BinaryRegionPair& pair);

// 95th percentile (linear interpolation) of the pooled surface distances.
double hd95(const BinaryRegionPair& pair);
// Mean of the pooled surface distances.
double asd(const BinaryRegionPair& pair);
// Maximum of the pooled surface distances (Hausdorff distance).
double max_surface_distance(const BinaryRegionPair& pair);

// Linear-interpolation percentile of an unsorted sample, q in [0, 1].
double percentile(std::vector<double> values, double q);

}  // namespace wtbcp
