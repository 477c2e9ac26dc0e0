#include "wtbcp/volume.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "wtbcp/error.hpp"
#include "wtbcp/ndindex.hpp"

namespace wtbcp {

int64_t product(std::span<const int64_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), int64_t{1}, std::multiplies<>());
}

std::string shape_to_string(std::span<const int64_t> dims) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ", ";
    os << dims[i];
  }
  os << ')';
  return os.str();
}

Shape row_major_strides(std::span<const int64_t> dims) {
  Shape strides(dims.size(), 1);
  for (size_t i = dims.size(); i-- > 1;) strides[i - 1] = strides[i] * dims[i];
  return strides;
}

std::string_view to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::image: return "image";
    case VolumeKind::label: return "label";
    case VolumeKind::probability: return "probability";
  }
  return "image";
}

VolumeKind parse_volume_kind(std::string_view text) {
  if (text == "image") return VolumeKind::image;
  if (text == "label") return VolumeKind::label;
  if (text == "probability") return VolumeKind::probability;
  throw FormatError("unknown volume kind '" + std::string(text) + "'");
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.size() != 3 && shape.size() != 4) {
    throw ShapeError("volume shape must be (C, H, W) or (C, D, H, W), got " + shape_to_string(shape));
  }
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("volume shape has a non-positive extent: " + shape_to_string(shape));
  }
}

}  // namespace

Volume::Volume(Shape shape, VolumeKind kind) : shape_(std::move(shape)), kind_(kind) {
  check_shape(shape_);
  data_.assign(static_cast<size_t>(product(shape_)), 0.0f);
}

Volume::Volume(Shape shape, std::vector<float> data, VolumeKind kind)
    : shape_(std::move(shape)), data_(std::move(data)), kind_(kind) {
  check_shape(shape_);
  if (static_cast<int64_t>(data_.size()) != product(shape_)) {
    throw ShapeError("volume data has " + std::to_string(data_.size()) + " elements but shape " +
                     shape_to_string(shape_) + " needs " + std::to_string(product(shape_)));
  }
}

Volume Volume::zeros_like(const Volume& other) { return Volume(other.shape_, other.kind_); }

int64_t Volume::spatial_size() const {
  return shape_.empty() ? 0 : product(std::span<const int64_t>(shape_).subspan(1));
}

std::span<float> Volume::channel(int64_t c) {
  const auto n = static_cast<size_t>(spatial_size());
  return std::span<float>(data_).subspan(static_cast<size_t>(c) * n, n);
}

std::span<const float> Volume::channel(int64_t c) const {
  const auto n = static_cast<size_t>(spatial_size());
  return std::span<const float>(data_).subspan(static_cast<size_t>(c) * n, n);
}

void Volume::validate(int num_classes) const {
  check_shape(shape_);
  switch (kind_) {
    case VolumeKind::image:
      for (float v : data_) {
        if (!std::isfinite(v)) throw ValidationError("image volume contains a non-finite value");
      }
      break;
    case VolumeKind::label:
      if (channels() != 1) throw ValidationError("label volume must have exactly one channel");
      if (num_classes < 2) throw ValidationError("label validation needs num_classes >= 2");
      for (float v : data_) {
        if (v != std::floor(v) || v < 0.0f || v >= static_cast<float>(num_classes)) {
          throw ValidationError("label value " + std::to_string(v) + " outside [0, " +
                                std::to_string(num_classes - 1) + "]");
        }
      }
      break;
    case VolumeKind::probability: {
      if (num_classes > 0 && channels() != num_classes) {
        throw ValidationError("probability volume has " + std::to_string(channels()) +
                              " channels, expected " + std::to_string(num_classes));
      }
      const int64_t n = spatial_size();
      for (int64_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int64_t c = 0; c < channels(); ++c) {
          const float p = data_[static_cast<size_t>(c * n + i)];
          if (!(p >= 0.0f && p <= 1.0f)) throw ValidationError("probability outside [0, 1]");
          sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-5) {
          throw ValidationError("probabilities do not sum to 1 at voxel " + std::to_string(i));
        }
      }
      break;
    }
  }
}

Volume crop(const Volume& volume, std::span<const int64_t> offset, std::span<const int64_t> size) {
  const Shape spatial = volume.spatial_shape();
  if (offset.size() != spatial.size() || size.size() != spatial.size()) {
    throw ShapeError("crop rank does not match volume rank");
  }
  for (size_t a = 0; a < spatial.size(); ++a) {
    if (offset[a] < 0 || size[a] <= 0 || offset[a] + size[a] > spatial[a]) {
      throw ShapeError("crop block " + shape_to_string(size) + " at " + shape_to_string(offset) +
                       " exceeds spatial shape " + shape_to_string(spatial));
    }
  }
  Shape out_shape{volume.channels()};
  out_shape.insert(out_shape.end(), size.begin(), size.end());
  Volume out(out_shape, volume.kind());
  const Shape src_strides = row_major_strides(spatial);
  const int64_t src_n = volume.spatial_size();
  const int64_t dst_n = out.spatial_size();
  std::vector<int64_t> src_idx(spatial.size());
  for_each_index(size, [&](std::span<const int64_t> idx, int64_t flat) {
    for (size_t a = 0; a < idx.size(); ++a) src_idx[a] = idx[a] + offset[a];
    const int64_t src = flat_offset(src_idx, src_strides);
    for (int64_t c = 0; c < volume.channels(); ++c) out[c * dst_n + flat] = volume[c * src_n + src];
  });
  return out;
}

Volume pad_to(const Volume& volume, std::span<const int64_t> target) {
  const Shape spatial = volume.spatial_shape();
  if (target.size() != spatial.size()) throw ShapeError("pad target rank does not match volume rank");
  Shape out_shape{volume.channels()};
  for (size_t a = 0; a < spatial.size(); ++a) out_shape.push_back(std::max(spatial[a], target[a]));
  if (out_shape == volume.shape()) return volume;
  Volume out(out_shape, volume.kind());
  const Shape src_strides = row_major_strides(spatial);
  const Shape dst_spatial(out_shape.begin() + 1, out_shape.end());
  const int64_t src_n = volume.spatial_size();
  const int64_t dst_n = out.spatial_size();
  std::vector<int64_t> src_idx(spatial.size());
  for_each_index(dst_spatial, [&](std::span<const int64_t> idx, int64_t flat) {
    for (size_t a = 0; a < idx.size(); ++a) src_idx[a] = std::min(idx[a], spatial[a] - 1);
    const int64_t src = flat_offset(src_idx, src_strides);
    for (int64_t c = 0; c < volume.channels(); ++c) out[c * dst_n + flat] = volume[c * src_n + src];
  });
  return out;
}

void paste(Volume& volume, const Volume& patch, std::span<const int64_t> offset) {
  const Shape spatial = volume.spatial_shape();
  const Shape patch_spatial = patch.spatial_shape();
  if (patch.channels() != volume.channels() || patch_spatial.size() != spatial.size()) {
    throw ShapeError("paste: patch " + shape_to_string(patch.shape()) + " incompatible with " +
                     shape_to_string(volume.shape()));
  }
  const Shape dst_strides = row_major_strides(spatial);
  const int64_t src_n = patch.spatial_size();
  const int64_t dst_n = volume.spatial_size();
  std::vector<int64_t> dst_idx(spatial.size());
  for_each_index(patch_spatial, [&](std::span<const int64_t> idx, int64_t flat) {
    for (size_t a = 0; a < idx.size(); ++a) dst_idx[a] = idx[a] + offset[a];
    const int64_t dst = flat_offset(dst_idx, dst_strides);
    for (int64_t c = 0; c < volume.channels(); ++c) volume[c * dst_n + dst] = patch[c * src_n + flat];
  });
}

void normalize_min_max(Volume& volume) {
  for (int64_t c = 0; c < volume.channels(); ++c) {
    auto ch = volume.channel(c);
    const auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
    const float min = *lo;
    const float range = *hi - *lo;
    for (float& v : ch) v = range > 0.0f ? (v - min) / range : 0.0f;
  }
}

}  // namespace wtbcp
