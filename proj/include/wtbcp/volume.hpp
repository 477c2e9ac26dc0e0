#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wtbcp {

using Shape = std::vector<int64_t>;

int64_t product(std::span<const int64_t> dims);
std::string shape_to_string(std::span<const int64_t> dims);

// Row-major strides for a shape.
Shape row_major_strides(std::span<const int64_t> dims);

enum class VolumeKind { image, label, probability };

std::string_view to_string(VolumeKind kind);
VolumeKind parse_volume_kind(std::string_view text);

// Dense float array with a leading channel axis followed by 2 or 3 spatial
// axes. Label maps store integral class ids as floats, one channel.
class Volume {
 public:
  Volume() = default;
  Volume(Shape shape, VolumeKind kind);
  Volume(Shape shape, std::vector<float> data, VolumeKind kind);

  static Volume zeros_like(const Volume& other);

  const Shape& shape() const { return shape_; }
  int64_t channels() const { return shape_.empty() ? 0 : shape_.front(); }
  Shape spatial_shape() const { return Shape(shape_.begin() + 1, shape_.end()); }
  int spatial_rank() const { return shape_.empty() ? 0 : static_cast<int>(shape_.size()) - 1; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t spatial_size() const;
  VolumeKind kind() const { return kind_; }
  void set_kind(VolumeKind kind) { kind_ = kind; }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::span<float> channel(int64_t c);
  std::span<const float> channel(int64_t c) const;

  float& operator[](int64_t flat) { return data_[static_cast<size_t>(flat)]; }
  float operator[](int64_t flat) const { return data_[static_cast<size_t>(flat)]; }

  // Checks the invariants of the volume kind. num_classes is required for
  // label volumes and for probability volumes (channel count).
  void validate(int num_classes = 0) const;

  friend bool operator==(const Volume& a, const Volume& b) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
  VolumeKind kind_ = VolumeKind::image;
};

// Extracts the axis-aligned block [offset, offset+size) over the spatial axes,
// keeping every channel.
Volume crop(const Volume& volume, std::span<const int64_t> offset, std::span<const int64_t> size);

// Pads the spatial axes at the high end up to `target`, replicating the edge.
Volume pad_to(const Volume& volume, std::span<const int64_t> target);

// Writes `patch` into `volume` at the spatial offset.
void paste(Volume& volume, const Volume& patch, std::span<const int64_t> offset);

// Scales each channel linearly to [0, 1]. Constant channels become 0.
void normalize_min_max(Volume& volume);

}  // namespace wtbcp
