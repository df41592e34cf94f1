// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

// Seeded synthetic multimodal precipitation scenes.
//
// Truth is a Gaussian random field thresholded at the normal quantile that
// gives the requested rain coverage, with exceedances mapped through an
// exponential intensity curve. Sensor proxies derive from it:
//   PR  = linear in rain rate + white noise
//   PMW = footprint-blurred rain rate + white noise
//   IR  = negated smoothed log-rain (cold cloud tops) + non-raining cirrus
//         patches + spatially correlated noise + white noise
// Noise levels are calibrated per scene so that each proxy's Pearson
// correlation with rain rate sits near its configured target (IR is
// anti-correlated; its target applies to |r|).

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "precipx/grid.hpp"

namespace precipx::datagen {

enum class Modality { IR, PMW, PR };
std::string to_string(Modality m);

struct ModalityGrid {
  FloatGrid values;
  Modality modality = Modality::IR;
  MaskGrid validity;  // 1 where observed
};

struct SwathMask {
  MaskGrid values;
  int band_width = 49;
  double angle_rad = 0.0;
  /// First column of the band_width-wide aligned crop for every row.
  std::vector<int> crop_start;
};

struct GenParams {
  double field_correlation_length = 6.0;  // pixels
  double rain_coverage_target = 0.3;
  double ir_noise_sigma = 0.05;
  double cirrus_contamination_rate = 0.15;
  double pmw_corr_target = 0.8;
  double pr_corr_target = 0.9;
  double ir_corr_target = 0.4;
  int grid_size = 256;
  int band_width = 49;

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static GenParams from_json(const nlohmann::json& j);
};

struct Scene {
  PrecipGrid precip;
  ModalityGrid ir, pmw, pr;
  std::array<FloatGrid, 3> geo;  // elevation proxy, latitude, longitude
  SwathMask swath;
  std::uint64_t seed = 0;
  std::string scene_id;
};

struct Modalities {
  ModalityGrid ir, pmw, pr;
};

/// IR brightness temperature (K) corresponding to a zero proxy signal, and the
/// Kelvin span of one proxy unit. Networks normalise IR with these.
inline constexpr float kIrClearSkyK = 260.0f;
inline constexpr float kIrScaleK = 30.0f;

/// Unit-variance stationary Gaussian random field with Gaussian covariance of
/// length `corr_len` pixels.
FloatGrid gaussian_random_field(std::uint64_t seed, int height, int width, double corr_len);
/// Separable Gaussian blur with reflected borders.
FloatGrid gaussian_blur(const FloatGrid& g, double sigma);

PrecipGrid gen_precip_field(std::uint64_t seed, const GenParams& params);
Modalities derive_modalities(const PrecipGrid& precip, const GenParams& params, std::uint64_t seed);
SwathMask gen_swath(std::uint64_t seed, int grid_size, int band_width);
Scene make_scene(std::uint64_t seed, const GenParams& params, std::string scene_id);

/// Fraction of pixels at or above the rain threshold.
double rain_coverage(const PrecipGrid& precip);
double pearson(const FloatGrid& a, const FloatGrid& b);

/// band_width-wide crop that follows the swath, one row at a time.
FloatGrid crop_to_swath(const FloatGrid& g, const SwathMask& swath);

struct DatasetConfig {
  GenParams gen;
  int train = 32;
  int val = 8;
  int test = 16;
  std::uint64_t seed = 1;
  double coverage_floor = 0.05;
  int max_retries = 64;

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

struct ManifestEntry {
  std::string scene_id;
  std::string partition;  // train | val | test
  std::uint64_t seed = 0;
  double coverage = 0.0;
  double swath_coverage = 0.0;
  std::string swath_path;  // relative to the dataset root
  std::string swath_hash;
  std::string fulldisc_path;
  std::string fulldisc_hash;
};

struct DatasetManifest {
  nlohmann::json config;
  std::vector<ManifestEntry> scenes;
  std::filesystem::path root;  // not serialised

  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] std::string hash() const;
  [[nodiscard]] std::vector<const ManifestEntry*> partition(const std::string& name) const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

inline constexpr const char* kManifestFile = "dataset.json";

/// Writes a swath split (aligned band_width-wide crops of every modality) and
/// a full-disc split (IR + truth) for every scene, plus dataset.json.
DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);
DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);

}  // namespace precipx::datagen
