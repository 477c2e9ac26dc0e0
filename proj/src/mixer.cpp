#include "wtbcp/mixer.hpp"

#include <algorithm>
#include <cmath>

#include "wtbcp/error.hpp"
#include "wtbcp/ndindex.hpp"

namespace wtbcp {

int64_t MixMask::zero_count() const { return std::count(values.begin(), values.end(), uint8_t{0}); }

bool MixMask::is_zero_block(std::span<const int64_t> idx) const {
  for (size_t a = 0; a < idx.size(); ++a) {
    if (idx[a] < crop_offset[a] || idx[a] >= crop_offset[a] + crop_size[a]) return false;
  }
  return true;
}

MixMask MixMask::complement() const {
  MixMask out = *this;
  for (auto& v : out.values) v = static_cast<uint8_t>(1 - v);
  return out;
}

MixMask MixMask::ones(const Shape& spatial_shape) {
  MixMask m;
  m.spatial_shape = spatial_shape;
  m.values.assign(static_cast<size_t>(product(spatial_shape)), 1);
  m.ratio = 0.0;
  m.crop_offset.assign(spatial_shape.size(), 0);
  m.crop_size.assign(spatial_shape.size(), 0);
  return m;
}

MixMask MixMask::zeros(const Shape& spatial_shape) {
  MixMask m;
  m.spatial_shape = spatial_shape;
  m.values.assign(static_cast<size_t>(product(spatial_shape)), 0);
  m.ratio = 1.0;
  m.crop_offset.assign(spatial_shape.size(), 0);
  m.crop_size = spatial_shape;
  return m;
}

Shape mask_block_size(std::span<const int64_t> spatial_shape, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("mask ratio must lie in (0, 1], got " + std::to_string(ratio));
  Shape size(spatial_shape.size());
  for (size_t a = 0; a < spatial_shape.size(); ++a) {
    // The epsilon keeps exact products such as (2/3) * 6 from flooring to 3.
    size[a] = static_cast<int64_t>(std::floor(ratio * static_cast<double>(spatial_shape[a]) + 1e-9));
    if (size[a] < 1) {
      throw ConfigError("mask ratio " + std::to_string(ratio) + " gives an empty block along axis " + std::to_string(a));
    }
  }
  return size;
}

MixMask generate_mask(std::span<const int64_t> spatial_shape, double ratio, Rng& rng) {
  MixMask m;
  m.spatial_shape.assign(spatial_shape.begin(), spatial_shape.end());
  m.ratio = ratio;
  m.crop_size = mask_block_size(spatial_shape, ratio);
  m.crop_offset.resize(spatial_shape.size());
  for (size_t a = 0; a < spatial_shape.size(); ++a) {
    m.crop_offset[a] = uniform_index(rng, spatial_shape[a] - m.crop_size[a] + 1);
  }
  m.values.assign(static_cast<size_t>(product(spatial_shape)), 1);
  for_each_index(spatial_shape, [&](std::span<const int64_t> idx, int64_t flat) {
    if (m.is_zero_block(idx)) m.values[static_cast<size_t>(flat)] = 0;
  });
  return m;
}

Volume mix(const Volume& foreground, const Volume& background, const MixMask& mask) {
  if (foreground.shape() != background.shape()) {
    throw ShapeError("mix: foreground " + shape_to_string(foreground.shape()) + " and background " +
                     shape_to_string(background.shape()) + " differ");
  }
  if (foreground.spatial_shape() != mask.spatial_shape) {
    throw ShapeError("mix: mask shape " + shape_to_string(mask.spatial_shape) + " does not match volume " +
                     shape_to_string(foreground.shape()));
  }
  Volume out = foreground;
  const int64_t n = foreground.spatial_size();
  for (int64_t c = 0; c < foreground.channels(); ++c) {
    for (int64_t i = 0; i < n; ++i) {
      if (mask.values[static_cast<size_t>(i)] == 0) out[c * n + i] = background[c * n + i];
    }
  }
  return out;
}

MixedImages mix_pair(const Volume& labeled_i, const Volume& labeled_j, const Volume& unlabeled_p,
                     const Volume& unlabeled_q, const MixMask& mask) {
  return MixedImages{mix(labeled_j, unlabeled_p, mask), mix(unlabeled_q, labeled_i, mask)};
}

Volume mix_labels(const Volume& labels, const Volume& pseudo_labels, const MixMask& mask, MixDirection direction) {
  for (const Volume* v : {&labels, &pseudo_labels}) {
    if (v->kind() != VolumeKind::label) {
      throw ValidationError("mix_labels expects hard label maps, got a " + std::string(to_string(v->kind())) + " volume");
    }
    if (v->channels() != 1) throw ValidationError("mix_labels expects single-channel label maps");
  }
  Volume out = direction == MixDirection::inward ? mix(labels, pseudo_labels, mask) : mix(pseudo_labels, labels, mask);
  out.set_kind(VolumeKind::label);
  return out;
}

}  // namespace wtbcp
