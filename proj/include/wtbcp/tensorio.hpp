#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wtbcp/volume.hpp"

namespace wtbcp {

using Rng = std::mt19937_64;

// Derives an independent generator from a base seed and a stream id, so that
// e.g. per-iteration randomness does not depend on how many draws happened
// before.
Rng derive_rng(uint64_t seed, uint64_t stream);

// Uniform integer in [0, n).
int64_t uniform_index(Rng& rng, int64_t n);

struct Sample {
  std::string id;
  Volume image;
  std::optional<Volume> label;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<size_t> labeled_indices;
  std::vector<size_t> unlabeled_indices;
  int num_classes = 0;

  int spatial_rank() const;
  // Throws ValidationError when any Dataset or Volume invariant is broken.
  void validate() const;
  // Labeled samples only, re-indexed.
  Dataset labeled_subset() const;
};

// ---------------------------------------------------------------------------
// Manifest directory: index.json plus one raw little-endian blob per volume.
//
//   {
//     "format": "wtbcp-manifest", "version": 1,
//     "num_classes": K, "spatial_rank": 2,
//     "metadata": {...},
//     "samples": [
//       {"id": "s0000", "labeled": true,
//        "volumes": {"image": {"path": "s0000_image.f32", "shape": [1,64,64],
//                              "dtype": "float32", "kind": "image"},
//                    "label": {"path": "s0000_label.u8", ..., "dtype": "uint8"}}}
//     ]
//   }
//
// Images and probabilities are float32, labels uint8.
// ---------------------------------------------------------------------------

inline constexpr const char* kManifestIndex = "index.json";

struct ManifestEntry {
  std::string id;
  bool labeled = false;
  std::map<std::string, Volume> volumes;
};

struct Manifest {
  int num_classes = 0;
  int spatial_rank = 0;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<ManifestEntry> entries;
};

Manifest read_manifest(const std::filesystem::path& dir);
void write_manifest(const Manifest& manifest, const std::filesystem::path& dir);

struct LoadOptions {
  // Min-max scale every image channel to [0, 1] after reading.
  bool normalize_intensity = true;
};

// Reads the "image" and "label" volumes of a manifest. Samples come back
// sorted by id.
Dataset load_dataset(const std::filesystem::path& dir, LoadOptions options = {});
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                   const nlohmann::json& metadata = nlohmann::json::object());

struct SyntheticConfig {
  int count = 10;
  Shape spatial_shape{64, 64};
  int num_classes = 4;
  uint64_t seed = 0;
  // Gaussian noise sigma relative to the clean intensity range.
  double noise_fraction = 0.05;
};

// Smooth background plus K-1 ellipses/ellipsoids, one per foreground class,
// each in its own intensity band. Images are min-max normalized to [0, 1]; all
// samples are labeled.
Dataset generate_synthetic(const SyntheticConfig& config);

// Number of labeled samples for a fraction: round half up, at least 1.
size_t labeled_count(size_t total, double fraction);

// Marks round(count * fraction) samples (chosen by seed) as labeled and strips
// the labels of the rest.
Dataset split_labeled(const Dataset& dataset, double fraction, uint64_t seed);

struct CropResult {
  Volume image;
  std::optional<Volume> label;
};

// Aligned crop of image (and label) at a uniform random valid offset.
CropResult random_crop(const Volume& image, const Volume* label, std::span<const int64_t> patch, Rng& rng);

}  // namespace wtbcp
