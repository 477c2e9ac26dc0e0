#include "wtbcp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "wtbcp/error.hpp"
#include "wtbcp/ndindex.hpp"

namespace wtbcp {

void BinaryRegionPair::validate() const {
  const auto n = static_cast<size_t>(product(shape));
  if (pred.size() != n || gt.size() != n) {
    throw ShapeError("region pair: pred/gt sizes do not match shape " + shape_to_string(shape));
  }
  if (!spacing.empty() && spacing.size() != shape.size()) throw ShapeError("region pair: spacing rank mismatch");
  for (size_t i = 0; i < n; ++i) {
    if (pred[i] > 1 || gt[i] > 1) throw ValidationError("region pair values must be 0 or 1");
  }
}

BinaryRegionPair region_pair(const Volume& pred_labels, const Volume& gt_labels, int cls) {
  if (pred_labels.shape() != gt_labels.shape()) {
    throw ShapeError("prediction " + shape_to_string(pred_labels.shape()) + " and ground truth " +
                     shape_to_string(gt_labels.shape()) + " differ");
  }
  if (pred_labels.channels() != 1) throw ShapeError("label volumes must have one channel");
  BinaryRegionPair pair;
  pair.shape = pred_labels.spatial_shape();
  const auto n = static_cast<size_t>(pred_labels.numel());
  pair.pred.resize(n);
  pair.gt.resize(n);
  const auto c = static_cast<float>(cls);
  for (size_t i = 0; i < n; ++i) {
    pair.pred[i] = pred_labels[static_cast<int64_t>(i)] == c;
    pair.gt[i] = gt_labels[static_cast<int64_t>(i)] == c;
  }
  return pair;
}

namespace {

struct OverlapCounts {
  int64_t pred = 0, gt = 0, both = 0;
};

OverlapCounts count_overlap(const BinaryRegionPair& pair) {
  pair.validate();
  OverlapCounts c;
  for (size_t i = 0; i < pair.pred.size(); ++i) {
    c.pred += pair.pred[i];
    c.gt += pair.gt[i];
    c.both += pair.pred[i] & pair.gt[i];
  }
  return c;
}

constexpr double kFar = 1e20;

// Exact 1-D squared distance transform by lower envelope of parabolas
// (Felzenszwalb & Huttenlocher), with squared voxel spacing `w`.
void edt_line(std::span<const double> f, std::span<double> out, double w, std::vector<int64_t>& v,
              std::vector<double>& z) {
  const auto n = static_cast<int64_t>(f.size());
  v.assign(static_cast<size_t>(n), 0);
  z.assign(static_cast<size_t>(n) + 1, 0.0);
  int64_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto intersect = [&](int64_t q, int64_t p) {
    const auto qd = static_cast<double>(q), pd = static_cast<double>(p);
    return ((f[static_cast<size_t>(q)] + w * qd * qd) - (f[static_cast<size_t>(p)] + w * pd * pd)) / (2.0 * w * (qd - pd));
  };
  for (int64_t q = 1; q < n; ++q) {
    double s = intersect(q, v[static_cast<size_t>(k)]);
    while (s <= z[static_cast<size_t>(k)]) {
      --k;
      s = intersect(q, v[static_cast<size_t>(k)]);
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
    z[static_cast<size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (z[static_cast<size_t>(k) + 1] < static_cast<double>(q)) ++k;
    const double d = static_cast<double>(q - v[static_cast<size_t>(k)]);
    out[static_cast<size_t>(q)] = w * d * d + f[static_cast<size_t>(v[static_cast<size_t>(k)])];
  }
}

// Squared Euclidean distance from every voxel to the nearest set voxel.
std::vector<double> squared_distance_to(std::span<const uint8_t> targets, const Shape& shape,
                                        std::span<const double> spacing) {
  std::vector<double> dist(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) dist[i] = targets[i] ? 0.0 : kFar;
  const Shape strides = row_major_strides(shape);
  std::vector<int64_t> v;
  std::vector<double> z;
  for (size_t axis = 0; axis < shape.size(); ++axis) {
    const double s = spacing.empty() ? 1.0 : spacing[axis];
    Shape outer = shape;
    outer[axis] = 1;
    const auto len = static_cast<size_t>(shape[axis]);
    std::vector<double> in(len), out(len);
    for_each_index(outer, [&](std::span<const int64_t> idx, int64_t) {
      const int64_t base = flat_offset(idx, strides);
      for (size_t i = 0; i < len; ++i) in[i] = dist[static_cast<size_t>(base + static_cast<int64_t>(i) * strides[axis])];
      edt_line(in, out, s * s, v, z);
      for (size_t i = 0; i < len; ++i) dist[static_cast<size_t>(base + static_cast<int64_t>(i) * strides[axis])] = out[i];
    });
  }
  return dist;
}

}  // namespace

double dice(const BinaryRegionPair& pair) {
  const auto c = count_overlap(pair);
  if (c.pred + c.gt == 0) return 100.0;
  return 100.0 * 2.0 * static_cast<double>(c.both) / static_cast<double>(c.pred + c.gt);
}

double jaccard(const BinaryRegionPair& pair) {
  const auto c = count_overlap(pair);
  const int64_t uni = c.pred + c.gt - c.both;
  if (uni == 0) return 100.0;
  return 100.0 * static_cast<double>(c.both) / static_cast<double>(uni);
}

std::vector<uint8_t> boundary(std::span<const uint8_t> region, std::span<const int64_t> shape) {
  std::vector<uint8_t> out(region.size(), 0);
  const Shape strides = row_major_strides(shape);
  for_each_index(shape, [&](std::span<const int64_t> idx, int64_t flat) {
    if (!region[static_cast<size_t>(flat)]) return;
    for (size_t a = 0; a < shape.size(); ++a) {
      const bool at_low = idx[a] == 0;
      const bool at_high = idx[a] == shape[a] - 1;
      if (at_low || at_high || !region[static_cast<size_t>(flat - strides[a])] ||
          !region[static_cast<size_t>(flat + strides[a])]) {
        out[static_cast<size_t>(flat)] = 1;
        return;
      }
    }
  });
  return out;
}

std::vector<double> pooled_surface_distances(const BinaryRegionPair& pair) {
  const auto c = count_overlap(pair);
  if (c.pred == 0 || c.gt == 0) throw UndefinedMetricError("surface distance undefined for an empty region");
  const auto pred_edge = boundary(pair.pred, pair.shape);
  const auto gt_edge = boundary(pair.gt, pair.shape);
  const auto to_gt = squared_distance_to(gt_edge, pair.shape, pair.spacing);
  const auto to_pred = squared_distance_to(pred_edge, pair.shape, pair.spacing);
  std::vector<double> pooled;
  for (size_t i = 0; i < pred_edge.size(); ++i) {
    if (pred_edge[i]) pooled.push_back(std::sqrt(to_gt[i]));
  }
  for (size_t i = 0; i < gt_edge.size(); ++i) {
    if (gt_edge[i]) pooled.push_back(std::sqrt(to_pred[i]));
  }
  return pooled;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw UndefinedMetricError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

double hd95(const BinaryRegionPair& pair) { return percentile(pooled_surface_distances(pair), 0.95); }

double asd(const BinaryRegionPair& pair) {
  const auto d = pooled_surface_distances(pair);
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double max_surface_distance(const BinaryRegionPair& pair) {
  const auto d = pooled_surface_distances(pair);
  return *std::max_element(d.begin(), d.end());
}

}  // namespace wtbcp
