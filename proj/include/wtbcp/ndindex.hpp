#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace wtbcp {

// Visits every multi-index of `dims` in row-major order. The callback receives
// the index and its flat row-major position.
template <typename Fn>
void for_each_index(std::span<const int64_t> dims, Fn&& fn) {
  const size_t rank = dims.size();
  for (int64_t d : dims) {
    if (d <= 0) return;
  }
  std::vector<int64_t> idx(rank, 0);
  int64_t flat = 0;
  while (true) {
    fn(std::span<const int64_t>(idx), flat);
    ++flat;
    size_t axis = rank;
    while (axis > 0) {
      --axis;
      if (++idx[axis] < dims[axis]) break;
      idx[axis] = 0;
      if (axis == 0) return;
    }
    if (rank == 0) return;
  }
}

inline int64_t flat_offset(std::span<const int64_t> idx, std::span<const int64_t> strides) {
  int64_t off = 0;
  for (size_t i = 0; i < idx.size(); ++i) off += idx[i] * strides[i];
  return off;
}

}  // namespace wtbcp
