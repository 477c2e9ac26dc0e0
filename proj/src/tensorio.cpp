#include "wtbcp/tensorio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "wtbcp/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace wtbcp {

Rng derive_rng(uint64_t seed, uint64_t stream) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(stream), static_cast<uint32_t>(stream >> 32)};
  return Rng(seq);
}

int64_t uniform_index(Rng& rng, int64_t n) {
  if (n <= 0) throw SamplingError("uniform_index over an empty range");
  return std::uniform_int_distribution<int64_t>(0, n - 1)(rng);
}

int Dataset::spatial_rank() const { return samples.empty() ? 0 : samples.front().image.spatial_rank(); }

void Dataset::validate() const {
  if (num_classes < 2) throw ValidationError("dataset needs num_classes >= 2");
  std::vector<int> seen(samples.size(), 0);
  for (auto idx : labeled_indices) {
    if (idx >= samples.size()) throw ValidationError("labeled index out of range");
    if (seen[idx]++) throw ValidationError("index listed twice in the labeled/unlabeled partition");
    if (!samples[idx].label) throw ValidationError("labeled sample '" + samples[idx].id + "' has no label");
  }
  for (auto idx : unlabeled_indices) {
    if (idx >= samples.size()) throw ValidationError("unlabeled index out of range");
    if (seen[idx]++) throw ValidationError("index listed twice in the labeled/unlabeled partition");
    if (samples[idx].label) throw ValidationError("unlabeled sample '" + samples[idx].id + "' carries a label");
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw ValidationError("labeled and unlabeled indices do not cover the dataset");
  }
  for (const auto& s : samples) {
    s.image.validate();
    if (s.image.spatial_shape() != samples.front().image.spatial_shape() ||
        s.image.channels() != samples.front().image.channels()) {
      throw ValidationError("sample '" + s.id + "' has a different shape from the rest of the dataset");
    }
    if (s.label) {
      if (s.label->spatial_shape() != s.image.spatial_shape()) {
        throw ValidationError("sample '" + s.id + "' label shape differs from image shape");
      }
      s.label->validate(num_classes);
    }
  }
}

Dataset Dataset::labeled_subset() const {
  Dataset out;
  out.num_classes = num_classes;
  for (auto idx : labeled_indices) {
    out.labeled_indices.push_back(out.samples.size());
    out.samples.push_back(samples[idx]);
  }
  return out;
}

namespace {

enum class DType { float32, uint8 };

DType dtype_for(VolumeKind kind) { return kind == VolumeKind::label ? DType::uint8 : DType::float32; }

std::string_view dtype_name(DType t) { return t == DType::uint8 ? "uint8" : "float32"; }

DType parse_dtype(std::string_view s) {
  if (s == "uint8") return DType::uint8;
  if (s == "float32") return DType::float32;
  throw FormatError("unsupported dtype '" + std::string(s) + "'");
}

size_t dtype_size(DType t) { return t == DType::uint8 ? 1 : 4; }

std::vector<char> encode(const Volume& v, DType t) {
  std::vector<char> bytes(static_cast<size_t>(v.numel()) * dtype_size(t));
  if (t == DType::uint8) {
    for (int64_t i = 0; i < v.numel(); ++i) {
      const float x = v[i];
      if (x < 0.0f || x > 255.0f || x != std::floor(x)) {
        throw ValidationError("label value " + std::to_string(x) + " not representable as uint8");
      }
      bytes[static_cast<size_t>(i)] = static_cast<char>(static_cast<uint8_t>(x));
    }
    return bytes;
  }
  for (int64_t i = 0; i < v.numel(); ++i) {
    auto word = std::bit_cast<uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) bytes[static_cast<size_t>(i) * 4 + b] = static_cast<char>((word >> (8 * b)) & 0xFF);
  }
  return bytes;
}

std::vector<float> decode(const std::vector<char>& bytes, DType t, int64_t count) {
  std::vector<float> out(static_cast<size_t>(count));
  if (t == DType::uint8) {
    for (int64_t i = 0; i < count; ++i) out[static_cast<size_t>(i)] = static_cast<uint8_t>(bytes[static_cast<size_t>(i)]);
    return out;
  }
  for (int64_t i = 0; i < count; ++i) {
    uint32_t word = 0;
    for (int b = 0; b < 4; ++b) {
      word |= static_cast<uint32_t>(static_cast<uint8_t>(bytes[static_cast<size_t>(i) * 4 + b])) << (8 * b);
    }
    out[static_cast<size_t>(i)] = std::bit_cast<float>(word);
  }
  return out;
}

std::vector<char> read_file(const fs::path& path, const std::string& id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("sample '" + id + "': cannot open blob " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

std::string blob_name(const std::string& id, const std::string& name, DType t) {
  return id + "_" + name + (t == DType::uint8 ? ".u8" : ".f32");
}

}  // namespace

Manifest read_manifest(const fs::path& dir) {
  const fs::path index_path = dir / kManifestIndex;
  std::ifstream in(index_path);
  if (!in) throw IoError("cannot open manifest index " + index_path.string());
  json index;
  try {
    index = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest index does not parse: " + std::string(e.what()));
  }

  Manifest manifest;
  try {
    if (index.value("format", "") != "wtbcp-manifest") throw FormatError("not a wtbcp manifest: " + index_path.string());
    manifest.num_classes = index.at("num_classes").get<int>();
    manifest.spatial_rank = index.at("spatial_rank").get<int>();
    manifest.metadata = index.value("metadata", json::object());
    for (const auto& rec : index.at("samples")) {
      ManifestEntry entry;
      entry.id = rec.at("id").get<std::string>();
      entry.labeled = rec.at("labeled").get<bool>();
      for (const auto& [name, vol] : rec.at("volumes").items()) {
        const auto shape = vol.at("shape").get<Shape>();
        const DType dtype = parse_dtype(vol.at("dtype").get<std::string>());
        const VolumeKind kind = parse_volume_kind(vol.at("kind").get<std::string>());
        if (static_cast<int>(shape.size()) != manifest.spatial_rank + 1) {
          throw FormatError("sample '" + entry.id + "' volume '" + name + "' has rank inconsistent with spatial_rank");
        }
        const int64_t count = product(shape);
        const auto bytes = read_file(dir / vol.at("path").get<std::string>(), entry.id);
        if (bytes.size() != static_cast<size_t>(count) * dtype_size(dtype)) {
          throw FormatError("sample '" + entry.id + "' volume '" + name + "': blob has " + std::to_string(bytes.size()) +
                            " bytes, expected " + std::to_string(count * static_cast<int64_t>(dtype_size(dtype))));
        }
        entry.volumes.emplace(name, Volume(shape, decode(bytes, dtype, count), kind));
      }
      manifest.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest index: " + std::string(e.what()));
  } catch (const ShapeError& e) {
    throw FormatError(e.what());
  }
  return manifest;
}

void write_manifest(const Manifest& manifest, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json index = {{"format", "wtbcp-manifest"},
                {"version", 1},
                {"num_classes", manifest.num_classes},
                {"spatial_rank", manifest.spatial_rank},
                {"metadata", manifest.metadata},
                {"samples", json::array()}};
  for (const auto& entry : manifest.entries) {
    json volumes = json::object();
    for (const auto& [name, vol] : entry.volumes) {
      const DType dtype = dtype_for(vol.kind());
      const std::string file = blob_name(entry.id, name, dtype);
      write_file(dir / file, encode(vol, dtype));
      volumes[name] = {{"path", file},
                       {"shape", vol.shape()},
                       {"dtype", dtype_name(dtype)},
                       {"kind", to_string(vol.kind())}};
    }
    index["samples"].push_back({{"id", entry.id}, {"labeled", entry.labeled}, {"volumes", volumes}});
  }
  std::ofstream out(dir / kManifestIndex, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest index in " + dir.string());
  out << index.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& dir, LoadOptions options) {
  Manifest manifest = read_manifest(dir);
  std::sort(manifest.entries.begin(), manifest.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; });
  Dataset ds;
  ds.num_classes = manifest.num_classes;
  for (auto& entry : manifest.entries) {
    auto image = entry.volumes.find("image");
    if (image == entry.volumes.end()) throw FormatError("sample '" + entry.id + "' has no image volume");
    Sample sample{entry.id, std::move(image->second), std::nullopt};
    sample.image.set_kind(VolumeKind::image);
    if (options.normalize_intensity) normalize_min_max(sample.image);
    if (entry.labeled) {
      auto label = entry.volumes.find("label");
      if (label == entry.volumes.end()) throw ValidationError("labeled sample '" + entry.id + "' has no label volume");
      sample.label = std::move(label->second);
      sample.label->set_kind(VolumeKind::label);
      try {
        sample.label->validate(ds.num_classes);
      } catch (const ValidationError& e) {
        throw ValidationError("sample '" + entry.id + "': " + e.what());
      }
      ds.labeled_indices.push_back(ds.samples.size());
    } else {
      ds.unlabeled_indices.push_back(ds.samples.size());
    }
    ds.samples.push_back(std::move(sample));
  }
  ds.validate();
  return ds;
}

void write_dataset(const Dataset& dataset, const fs::path& dir, const json& metadata) {
  Manifest manifest;
  manifest.num_classes = dataset.num_classes;
  manifest.spatial_rank = dataset.spatial_rank();
  manifest.metadata = metadata;
  std::set<size_t> labeled(dataset.labeled_indices.begin(), dataset.labeled_indices.end());
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    ManifestEntry entry{s.id, labeled.count(i) > 0, {}};
    entry.volumes.emplace("image", s.image);
    if (entry.labeled && s.label) entry.volumes.emplace("label", *s.label);
    manifest.entries.push_back(std::move(entry));
  }
  write_manifest(manifest, dir);
}

size_t labeled_count(size_t total, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("labeled fraction must lie in (0, 1]");
  const auto n = static_cast<size_t>(std::floor(static_cast<double>(total) * fraction + 0.5));
  return std::clamp<size_t>(n, 1, total);
}

Dataset split_labeled(const Dataset& dataset, double fraction, uint64_t seed) {
  const size_t total = dataset.samples.size();
  if (total == 0) throw ConfigError("cannot split an empty dataset");
  const size_t n_labeled = labeled_count(total, fraction);
  std::vector<size_t> order(total);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng = derive_rng(seed, 0x5311ULL);
  // Fisher-Yates with our own index draw keeps the permutation independent of
  // std::shuffle's unspecified algorithm.
  for (size_t i = total; i > 1; --i) {
    const auto j = static_cast<size_t>(uniform_index(rng, static_cast<int64_t>(i)));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<bool> is_labeled(total, false);
  for (size_t k = 0; k < n_labeled; ++k) is_labeled[order[k]] = true;

  Dataset out;
  out.num_classes = dataset.num_classes;
  out.samples = dataset.samples;
  for (size_t i = 0; i < total; ++i) {
    if (is_labeled[i]) {
      if (!out.samples[i].label) throw ValidationError("sample '" + out.samples[i].id + "' has no label to keep");
      out.labeled_indices.push_back(i);
    } else {
      out.samples[i].label.reset();
      out.unlabeled_indices.push_back(i);
    }
  }
  return out;
}

CropResult random_crop(const Volume& image, const Volume* label, std::span<const int64_t> patch, Rng& rng) {
  const Shape spatial = image.spatial_shape();
  if (patch.size() != spatial.size()) {
    throw ShapeError("patch rank " + std::to_string(patch.size()) + " does not match volume rank " +
                     std::to_string(spatial.size()));
  }
  if (label && label->spatial_shape() != spatial) throw ShapeError("image and label shapes differ");
  Shape offset(spatial.size());
  for (size_t a = 0; a < spatial.size(); ++a) {
    if (patch[a] <= 0 || patch[a] > spatial[a]) {
      throw ShapeError("patch " + shape_to_string(patch) + " exceeds volume " + shape_to_string(spatial));
    }
    offset[a] = uniform_index(rng, spatial[a] - patch[a] + 1);
  }
  CropResult out{crop(image, offset, patch), std::nullopt};
  if (label) out.label = crop(*label, offset, patch);
  return out;
}

}  // namespace wtbcp
