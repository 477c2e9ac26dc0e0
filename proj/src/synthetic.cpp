#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "wtbcp/error.hpp"
#include "wtbcp/ndindex.hpp"
#include "wtbcp/tensorio.hpp"

namespace wtbcp {
namespace {

constexpr int64_t kMinExtent = 8;
constexpr int kCoarseGrid = 5;
constexpr double kBackgroundCeiling = 0.25;
constexpr double kBandJitter = 0.04;
constexpr int kPlacementAttempts = 200;

struct Ellipsoid {
  std::vector<double> center;
  std::vector<double> radius;
  double angle = 0.0;  // in-plane rotation of the last two axes
  int label = 0;
  float intensity = 0.0f;

  bool contains(std::span<const int64_t> idx) const {
    const size_t rank = center.size();
    std::vector<double> d(rank);
    for (size_t a = 0; a < rank; ++a) d[a] = static_cast<double>(idx[a]) - center[a];
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * d[rank - 2] + s * d[rank - 1];
    const double v = -s * d[rank - 2] + c * d[rank - 1];
    d[rank - 2] = u;
    d[rank - 1] = v;
    double acc = 0.0;
    for (size_t a = 0; a < rank; ++a) acc += (d[a] / radius[a]) * (d[a] / radius[a]);
    return acc <= 1.0;
  }

  // Conservative axis-aligned extent (rotation-safe in the rotated plane).
  double reach(size_t axis) const {
    const size_t rank = center.size();
    if (axis >= rank - 2) return std::max(radius[rank - 2], radius[rank - 1]);
    return radius[axis];
  }
};

bool overlaps(const Ellipsoid& a, const Ellipsoid& b) {
  for (size_t ax = 0; ax < a.center.size(); ++ax) {
    if (std::abs(a.center[ax] - b.center[ax]) > a.reach(ax) + b.reach(ax) + 1.0) return false;
  }
  return true;
}

double uniform_real(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Multilinear interpolation of a coarse random lattice.
std::vector<float> smooth_background(const Shape& spatial, Rng& rng) {
  const size_t rank = spatial.size();
  Shape lattice_shape(rank, kCoarseGrid);
  std::vector<double> lattice(static_cast<size_t>(product(lattice_shape)));
  for (double& v : lattice) v = uniform_real(rng, 0.0, kBackgroundCeiling);
  const Shape lattice_strides = row_major_strides(lattice_shape);

  std::vector<float> out(static_cast<size_t>(product(spatial)));
  std::vector<int64_t> base(rank);
  std::vector<double> frac(rank);
  std::vector<int64_t> corner(rank);
  for_each_index(spatial, [&](std::span<const int64_t> idx, int64_t flat) {
    for (size_t a = 0; a < rank; ++a) {
      const double pos = spatial[a] > 1 ? static_cast<double>(idx[a]) * (kCoarseGrid - 1) / static_cast<double>(spatial[a] - 1) : 0.0;
      base[a] = std::min<int64_t>(static_cast<int64_t>(pos), kCoarseGrid - 2);
      frac[a] = pos - static_cast<double>(base[a]);
    }
    double acc = 0.0;
    for (unsigned mask = 0; mask < (1u << rank); ++mask) {
      double w = 1.0;
      for (size_t a = 0; a < rank; ++a) {
        const bool hi = (mask >> a) & 1u;
        corner[a] = base[a] + (hi ? 1 : 0);
        w *= hi ? frac[a] : 1.0 - frac[a];
      }
      acc += w * lattice[static_cast<size_t>(flat_offset(corner, lattice_strides))];
    }
    out[static_cast<size_t>(flat)] = static_cast<float>(acc);
  });
  return out;
}

Ellipsoid random_ellipsoid(const Shape& spatial, Rng& rng) {
  const size_t rank = spatial.size();
  Ellipsoid e;
  e.center.resize(rank);
  e.radius.resize(rank);
  for (size_t a = 0; a < rank; ++a) {
    const double dim = static_cast<double>(spatial[a]);
    const double r_min = std::max(1.5, dim / 10.0);
    const double r_max = std::max(r_min, dim / 5.0);
    e.radius[a] = uniform_real(rng, r_min, r_max);
  }
  if (rank == 2) e.angle = uniform_real(rng, 0.0, std::numbers::pi);
  for (size_t a = 0; a < rank; ++a) {
    const double dim = static_cast<double>(spatial[a]);
    const double margin = std::min(e.reach(a), (dim - 1.0) / 2.0);
    e.center[a] = uniform_real(rng, margin, dim - 1.0 - margin);
  }
  return e;
}

Sample make_sample(const SyntheticConfig& config, int index) {
  Rng rng = derive_rng(config.seed, static_cast<uint64_t>(index));
  const Shape& spatial = config.spatial_shape;

  std::vector<float> clean = smooth_background(spatial, rng);

  std::vector<Ellipsoid> shapes;
  for (int k = 1; k < config.num_classes; ++k) {
    Ellipsoid candidate = random_ellipsoid(spatial, rng);
    for (int attempt = 1; attempt < kPlacementAttempts; ++attempt) {
      const bool clash = std::any_of(shapes.begin(), shapes.end(), [&](const Ellipsoid& o) { return overlaps(o, candidate); });
      if (!clash) break;
      candidate = random_ellipsoid(spatial, rng);
    }
    candidate.label = k;
    const double band = kBackgroundCeiling + (1.0 - kBackgroundCeiling) * k / config.num_classes;
    candidate.intensity = static_cast<float>(band + uniform_real(rng, -kBandJitter, kBandJitter));
    shapes.push_back(std::move(candidate));
  }

  Shape shape{1};
  shape.insert(shape.end(), spatial.begin(), spatial.end());
  Volume label(shape, VolumeKind::label);
  for_each_index(spatial, [&](std::span<const int64_t> idx, int64_t flat) {
    for (const auto& e : shapes) {
      if (e.contains(idx)) {
        label[flat] = static_cast<float>(e.label);
        clean[static_cast<size_t>(flat)] = e.intensity;
      }
    }
  });

  const auto [lo, hi] = std::minmax_element(clean.begin(), clean.end());
  const double sigma = config.noise_fraction * static_cast<double>(*hi - *lo);
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1e-12);
  for (float& v : clean) v = static_cast<float>(v + noise(rng));

  Volume image(shape, std::move(clean), VolumeKind::image);
  normalize_min_max(image);

  char id[32];
  std::snprintf(id, sizeof(id), "s%04d", index);
  return Sample{id, std::move(image), std::move(label)};
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config) {
  if (config.num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (config.num_classes > 255) throw ConfigError("synthetic data supports at most 255 classes");
  if (config.count <= 0) throw ConfigError("synthetic sample count must be positive");
  if (config.spatial_shape.size() != 2 && config.spatial_shape.size() != 3) {
    throw ConfigError("synthetic shape must have rank 2 or 3");
  }
  for (int64_t d : config.spatial_shape) {
    if (d < kMinExtent) {
      throw ConfigError("synthetic shape " + shape_to_string(config.spatial_shape) + " too small to fit an ellipse (min extent " +
                        std::to_string(kMinExtent) + ")");
    }
  }
  if (config.noise_fraction < 0.0) throw ConfigError("noise fraction must be non-negative");

  Dataset ds;
  ds.num_classes = config.num_classes;
  for (int i = 0; i < config.count; ++i) {
    ds.labeled_indices.push_back(ds.samples.size());
    ds.samples.push_back(make_sample(config, i));
  }
  return ds;
}

}  // namespace wtbcp
