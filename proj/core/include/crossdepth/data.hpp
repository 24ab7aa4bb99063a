#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crossdepth/rng.hpp"
#include "crossdepth/types.hpp"

namespace crossdepth {

// Ray-cast scene recipe. Scenes always contain a ground plane (and a back
// wall unless disabled) so that depth genuinely correlates with vertical
// image position, plus `num_primitives` random spheres/boxes.
struct SceneSpec {
  std::int64_t num_primitives = 4;
  bool wall_enabled = true;
  DepthRange depth_range;
  std::int64_t height = 96;
  std::int64_t width = 128;
  std::uint64_t seed = 0;
  double invalid_fraction = 0.05;  // pixels knocked out to the 0 sentinel

  void validate() const;
};

// Renders one sample: Lambertian-shaded RGB (with mild distance attenuation
// so shading carries depth information) and a z-depth map where pixels
// beyond the caps carry the invalid sentinel 0.
Sample generate_scene(const SceneSpec& spec, const std::string& id);

// 8-bit binary PPM (P6).
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);

// Single-channel PFM ("Pf", scale -1.0 = little-endian), float32 payload,
// bottom-to-top row order per the format convention. Depth values produced
// by generate_scene are float32-quantized, so the round-trip is exact.
void write_pfm(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_pfm(const std::filesystem::path& path);

void write_sample(const std::filesystem::path& dir, const Sample& sample);
Sample read_sample(const std::filesystem::path& dir, const std::string& id);

struct ManifestEntry {
  std::string id;
  std::string image_path;  // relative to the dataset root
  std::string depth_path;
};

struct DatasetManifest {
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> val;
  std::vector<ManifestEntry> test;
  std::int64_t height = 0;
  std::int64_t width = 0;
  DepthRange depth_range;
  std::uint64_t seed = 0;

  const std::vector<ManifestEntry>& split(const std::string& name) const;
};

struct SynthDatasetOptions {
  std::int64_t train_count = 64;
  std::int64_t val_count = 16;
  std::int64_t test_count = 0;
  SceneSpec scene;  // per-sample seeds are derived from scene.seed
};

// Writes root/{train,val,test}/{id}.ppm + {id}.pfm and root/manifest.json.
DatasetManifest generate_dataset(const std::filesystem::path& root,
                                 const SynthDatasetOptions& options);

void write_manifest(const std::filesystem::path& root, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& root);

// Loads every sample of a split into memory (datasets here are desk-sized).
std::vector<Sample> load_split(const std::filesystem::path& root, const DatasetManifest& manifest,
                               const std::string& split);

}  // namespace crossdepth
