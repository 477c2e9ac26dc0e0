#include "wtbcp/wavelet.hpp"

#include <array>
#include <cmath>
#include <span>

#include "wtbcp/error.hpp"
#include "wtbcp/ndindex.hpp"

namespace wtbcp {

std::string_view to_string(WaveletFamily family) {
  switch (family) {
    case WaveletFamily::haar: return "haar";
    case WaveletFamily::db2: return "db2";
  }
  return "haar";
}

WaveletFamily parse_wavelet_family(std::string_view name) {
  if (name == "haar" || name == "db1") return WaveletFamily::haar;
  if (name == "db2") return WaveletFamily::db2;
  throw ConfigError("unsupported wavelet family '" + std::string(name) + "' (expected haar or db2)");
}

std::string Subbands::band_name(size_t index, int spatial_rank) {
  std::string name;
  for (int a = 0; a < spatial_rank; ++a) name.push_back(((index >> a) & 1u) ? 'H' : 'L');
  return name;
}

const Volume& Subbands::band(std::string_view name) const {
  for (size_t b = 0; b < bands.size(); ++b) {
    if (band_name(b, spatial_rank()) == name) return bands[b];
  }
  throw ConfigError("no subband named '" + std::string(name) + "'");
}

Volume& Subbands::band(std::string_view name) {
  return const_cast<Volume&>(static_cast<const Subbands&>(*this).band(name));
}

namespace {

struct FilterBank {
  std::vector<double> lo;
  std::vector<double> hi;
};

FilterBank filter_bank(WaveletFamily family) {
  FilterBank fb;
  switch (family) {
    case WaveletFamily::haar: {
      const double s = 1.0 / std::sqrt(2.0);
      fb.lo = {s, s};
      break;
    }
    case WaveletFamily::db2: {
      const double r3 = std::sqrt(3.0);
      const double norm = 4.0 * std::sqrt(2.0);
      fb.lo = {(1.0 + r3) / norm, (3.0 + r3) / norm, (3.0 - r3) / norm, (1.0 - r3) / norm};
      break;
    }
  }
  // Quadrature mirror: hi[m] = (-1)^m lo[L-1-m].
  const size_t len = fb.lo.size();
  fb.hi.resize(len);
  for (size_t m = 0; m < len; ++m) fb.hi[m] = ((m % 2) ? -1.0 : 1.0) * fb.lo[len - 1 - m];
  return fb;
}

void analyze_line(std::span<const double> x, std::span<double> out, const FilterBank& fb) {
  const size_t n = x.size();
  const size_t half = n / 2;
  for (size_t k = 0; k < half; ++k) {
    double a = 0.0, d = 0.0;
    for (size_t m = 0; m < fb.lo.size(); ++m) {
      const double v = x[(2 * k + m) % n];
      a += fb.lo[m] * v;
      d += fb.hi[m] * v;
    }
    out[k] = a;
    out[half + k] = d;
  }
}

void synthesize_line(std::span<const double> coeffs, std::span<double> out, const FilterBank& fb) {
  const size_t n = coeffs.size();
  const size_t half = n / 2;
  std::fill(out.begin(), out.end(), 0.0);
  for (size_t k = 0; k < half; ++k) {
    const double a = coeffs[k];
    const double d = coeffs[half + k];
    for (size_t m = 0; m < fb.lo.size(); ++m) out[(2 * k + m) % n] += fb.lo[m] * a + fb.hi[m] * d;
  }
}

// Applies `fn` to every 1-D line along `axis` of a row-major array.
template <typename Fn>
void for_each_line(std::vector<double>& data, const Shape& dims, size_t axis, Fn&& fn) {
  const Shape strides = row_major_strides(dims);
  Shape outer = dims;
  outer[axis] = 1;
  const auto len = static_cast<size_t>(dims[axis]);
  const int64_t stride = strides[axis];
  std::vector<double> in(len), out(len);
  for_each_index(outer, [&](std::span<const int64_t> idx, int64_t) {
    const int64_t base = flat_offset(idx, strides);
    for (size_t i = 0; i < len; ++i) in[i] = data[static_cast<size_t>(base + static_cast<int64_t>(i) * stride)];
    fn(std::span<const double>(in), std::span<double>(out));
    for (size_t i = 0; i < len; ++i) data[static_cast<size_t>(base + static_cast<int64_t>(i) * stride)] = out[i];
  });
}

Shape padded_extent(const Shape& spatial) {
  Shape p = spatial;
  for (auto& d : p) d += d % 2;
  return p;
}

}  // namespace

Subbands dwt(const Volume& image, WaveletFamily family) {
  const int rank = image.spatial_rank();
  if (rank != 2 && rank != 3) throw ShapeError("dwt needs 2 or 3 spatial dims");
  const Shape spatial = image.spatial_shape();
  for (int64_t d : spatial) {
    if (d < 2) throw ShapeError("dwt needs every spatial extent >= 2, got " + shape_to_string(spatial));
  }
  const FilterBank fb = filter_bank(family);
  const Shape padded = padded_extent(spatial);
  Shape half = padded;
  for (auto& d : half) d /= 2;
  const size_t n_bands = size_t{1} << rank;

  Subbands out;
  out.family = family;
  out.original_shape = image.shape();
  Shape band_shape{image.channels()};
  band_shape.insert(band_shape.end(), half.begin(), half.end());
  out.bands.assign(n_bands, Volume(band_shape, image.kind() == VolumeKind::label ? VolumeKind::image : image.kind()));

  const Shape src_strides = row_major_strides(spatial);
  const Shape pad_strides = row_major_strides(padded);
  std::vector<double> work(static_cast<size_t>(product(padded)));
  std::vector<int64_t> src_idx(spatial.size()), pad_idx(spatial.size());
  for (int64_t c = 0; c < image.channels(); ++c) {
    const auto ch = image.channel(c);
    for_each_index(padded, [&](std::span<const int64_t> idx, int64_t flat) {
      for (size_t a = 0; a < idx.size(); ++a) src_idx[a] = idx[a] < spatial[a] ? idx[a] : 2 * spatial[a] - 1 - idx[a];
      work[static_cast<size_t>(flat)] = ch[static_cast<size_t>(flat_offset(src_idx, src_strides))];
    });
    for (size_t axis = 0; axis < padded.size(); ++axis) {
      for_each_line(work, padded, axis, [&](std::span<const double> in, std::span<double> o) { analyze_line(in, o, fb); });
    }
    for (size_t b = 0; b < n_bands; ++b) {
      auto dst = out.bands[b].channel(c);
      for_each_index(half, [&](std::span<const int64_t> idx, int64_t flat) {
        for (size_t a = 0; a < idx.size(); ++a) pad_idx[a] = idx[a] + (((b >> a) & 1u) ? half[a] : 0);
        dst[static_cast<size_t>(flat)] = static_cast<float>(work[static_cast<size_t>(flat_offset(pad_idx, pad_strides))]);
      });
    }
  }
  return out;
}

Volume idwt(const Subbands& subbands) {
  const int rank = subbands.spatial_rank();
  if (rank != 2 && rank != 3) throw ShapeError("idwt needs an original shape with 2 or 3 spatial dims");
  const size_t n_bands = size_t{1} << rank;
  if (subbands.bands.size() != n_bands) {
    throw ShapeError("idwt expects " + std::to_string(n_bands) + " bands, got " + std::to_string(subbands.bands.size()));
  }
  const Shape spatial(subbands.original_shape.begin() + 1, subbands.original_shape.end());
  const Shape padded = padded_extent(spatial);
  Shape band_shape{subbands.original_shape.front()};
  for (int64_t d : padded) band_shape.push_back(d / 2);
  for (const auto& band : subbands.bands) {
    if (band.shape() != band_shape) {
      throw ShapeError("subband shape " + shape_to_string(band.shape()) + " inconsistent with expected " +
                       shape_to_string(band_shape));
    }
  }
  const Shape half(band_shape.begin() + 1, band_shape.end());
  const FilterBank fb = filter_bank(subbands.family);
  const Shape pad_strides = row_major_strides(padded);

  Volume out(subbands.original_shape, subbands.bands.front().kind());
  std::vector<double> work(static_cast<size_t>(product(padded)));
  std::vector<int64_t> pad_idx(spatial.size());
  for (int64_t c = 0; c < out.channels(); ++c) {
    for (size_t b = 0; b < n_bands; ++b) {
      const auto src = subbands.bands[b].channel(c);
      for_each_index(half, [&](std::span<const int64_t> idx, int64_t flat) {
        for (size_t a = 0; a < idx.size(); ++a) pad_idx[a] = idx[a] + (((b >> a) & 1u) ? half[a] : 0);
        work[static_cast<size_t>(flat_offset(pad_idx, pad_strides))] = src[static_cast<size_t>(flat)];
      });
    }
    for (size_t axis = padded.size(); axis-- > 0;) {
      for_each_line(work, padded, axis, [&](std::span<const double> in, std::span<double> o) { synthesize_line(in, o, fb); });
    }
    auto dst = out.channel(c);
    for_each_index(spatial, [&](std::span<const int64_t> idx, int64_t flat) {
      dst[static_cast<size_t>(flat)] = static_cast<float>(work[static_cast<size_t>(flat_offset(idx, pad_strides))]);
    });
  }
  return out;
}

FrequencyTriple frequency_triple(const Volume& image, WaveletFamily family) {
  const Subbands sb = dwt(image, family);
  Subbands low_only = sb;
  Subbands high_only = sb;
  for (size_t b = 1; b < sb.bands.size(); ++b) {
    for (float& v : low_only.bands[b].data()) v = 0.0f;
  }
  for (float& v : high_only.bands[0].data()) v = 0.0f;
  FrequencyTriple triple{idwt(low_only), image, idwt(high_only)};
  triple.low.set_kind(VolumeKind::image);
  triple.high.set_kind(VolumeKind::image);
  return triple;
}

}  // namespace wtbcp
