#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sfde/retrieval.hpp"
#include "sfde/tensor.hpp"

namespace sfde::data {

struct ManifestEntry {
  std::string id;
  std::string path;
  retrieval::View view = retrieval::View::Drone;
  std::uint32_t class_id = 0;
  std::string split;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct ManifestCounts {
  std::size_t drone = 0;
  std::size_t satellite = 0;
  std::size_t classes = 0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  ManifestCounts counts(const std::string& split = {}) const;
  std::vector<ManifestEntry> select(const std::string& split, std::optional<retrieval::View> view) const;
};

/// Scans root/<split>/<class_id>/{drone,satellite}/*.pgm|*.ppm, decoding every
/// image. Errors collect every offending file; training classes must have both views.
Manifest ingest(const std::filesystem::path& root);

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

/// Per-channel pixel statistics of a split, applied as (x - mean) / std.
struct Normalization {
  std::array<float, 3> mean{0.f, 0.f, 0.f};
  std::array<float, 3> std{1.f, 1.f, 1.f};
};

/// Decoded, resized planar RGB images [3 x S x S] in [0, 1].
struct ImageBank {
  std::size_t size = 0;
  std::vector<ManifestEntry> entries;
  std::vector<std::vector<float>> pixels;
};

ImageBank load_images(const std::vector<ManifestEntry>& entries, std::size_t input_size);
Normalization compute_normalization(const ImageBank& bank);

/// Stacks the selected images into [n, 3, S, S] with normalization applied;
/// flips[i] mirrors image i horizontally.
template <typename T>
Tensor<T> make_batch(const ImageBank& bank, const std::vector<std::size_t>& indices, const Normalization& norm,
                     const std::vector<bool>& flips = {});

struct SynthOptions {
  std::size_t classes = 8;
  std::size_t drones_per_class = 2;
  std::size_t satellites_per_class = 1;
  std::size_t image_size = 128;
  std::uint64_t seed = 11;
  std::string split = "train";
};

/// Procedural paired-view dataset: each class owns a structured pattern; the
/// satellite view renders it directly, drone views apply a random rotation,
/// scale, shift and photometric jitter.
void generate_synthetic(const std::filesystem::path& root, const SynthOptions& options);

}  // namespace sfde::data
