// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include <boost/math/distributions/normal.hpp>

#include "precipx/hash.hpp"
#include "precipx/metrics.hpp"
#include "precipx/store.hpp"

namespace precipx::datagen {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Exceedances z - z_q map to 0.1 + kIntensityScale * (exp(kIntensityRate * (z - z_q)) - 1) mm/hr.
constexpr double kIntensityScale = 1.0;
constexpr double kIntensityRate = 1.2;
// PR / PMW proxies are rain rate divided by this (mm/hr).
constexpr float kProxyScale = 4.0f;
// PMW footprint blur (13 km footprint resampled to 5 km pixels).
constexpr double kPmwFootprintSigma = 1.2;
// IR cloud tops are broader than the rain underneath.
constexpr double kIrCloudSigma = 2.0;
constexpr double kCirrusDepth = 2.0;
constexpr double kMaxSwathAngleDeg = 30.0;

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

double mean_of(const FloatGrid& g) {
  double s = 0;
  for (float v : g.values) s += v;
  return g.size() ? s / static_cast<double>(g.size()) : 0.0;
}

double stddev_of(const FloatGrid& g) {
  const double m = mean_of(g);
  double s = 0;
  for (float v : g.values) s += (v - m) * (v - m);
  return g.size() ? std::sqrt(s / static_cast<double>(g.size())) : 0.0;
}

double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

FloatGrid white_noise(std::uint64_t seed, int h, int w) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  FloatGrid g(h, w);
  for (auto& v : g.values) v = static_cast<float>(normal(rng));
  return g;
}

// Adds `unit_noise` scaled so that |corr(signal + noise, reference)| drops from
// its current value to `target`. Leaves flat or uncorrelated signals alone.
void calibrate_noise(FloatGrid& signal, const FloatGrid& reference, const FloatGrid& unit_noise, double target) {
  const double spread = stddev_of(signal);
  if (spread <= 0) return;
  const double current = std::abs(pearson(signal, reference));
  if (!(current > target)) return;
  const double rel = std::sqrt((current / target) * (current / target) - 1.0);
  for (std::size_t i = 0; i < signal.size(); ++i)
    signal.values[i] += static_cast<float>(rel * spread * unit_noise.values[i]);
}

void check_corr_target(double v, const char* name) {
  if (!(v > 0 && v <= 1)) throw ValidationError(std::string(name) + " must lie in (0, 1]");
}

}  // namespace

std::string to_string(Modality m) {
  switch (m) {
    case Modality::IR: return "IR";
    case Modality::PMW: return "PMW";
    case Modality::PR: return "PR";
  }
  return "?";
}

void GenParams::validate() const {
  if (!(rain_coverage_target > 0 && rain_coverage_target < 1))
    throw ValidationError("rain_coverage_target must lie in (0, 1)");
  check_corr_target(ir_corr_target, "ir_corr_target");
  check_corr_target(pmw_corr_target, "pmw_corr_target");
  check_corr_target(pr_corr_target, "pr_corr_target");
  if (ir_corr_target > pmw_corr_target || pmw_corr_target > pr_corr_target)
    throw ValidationError("correlation targets must satisfy ir <= pmw <= pr");
  if (!(field_correlation_length > 0)) throw ValidationError("field_correlation_length must be positive");
  if (ir_noise_sigma < 0) throw ValidationError("ir_noise_sigma must be >= 0");
  if (!(cirrus_contamination_rate >= 0 && cirrus_contamination_rate < 1))
    throw ValidationError("cirrus_contamination_rate must lie in [0, 1)");
  if (grid_size < 16) throw SizingError("grid_size must be >= 16, got " + std::to_string(grid_size));
  if (band_width <= 0 || band_width > grid_size)
    throw SizingError("band_width must lie in (0, grid_size], got " + std::to_string(band_width));
}

json GenParams::to_json() const {
  return {{"field_correlation_length", field_correlation_length},
          {"rain_coverage_target", rain_coverage_target},
          {"ir_noise_sigma", ir_noise_sigma},
          {"cirrus_contamination_rate", cirrus_contamination_rate},
          {"pmw_corr_target", pmw_corr_target},
          {"pr_corr_target", pr_corr_target},
          {"ir_corr_target", ir_corr_target},
          {"grid_size", grid_size},
          {"band_width", band_width}};
}

GenParams GenParams::from_json(const json& j) {
  GenParams p;
  for (const auto& [key, value] : j.items()) {
    if (key == "field_correlation_length") p.field_correlation_length = value.get<double>();
    else if (key == "rain_coverage_target") p.rain_coverage_target = value.get<double>();
    else if (key == "ir_noise_sigma") p.ir_noise_sigma = value.get<double>();
    else if (key == "cirrus_contamination_rate") p.cirrus_contamination_rate = value.get<double>();
    else if (key == "pmw_corr_target") p.pmw_corr_target = value.get<double>();
    else if (key == "pr_corr_target") p.pr_corr_target = value.get<double>();
    else if (key == "ir_corr_target") p.ir_corr_target = value.get<double>();
    else if (key == "grid_size") p.grid_size = value.get<int>();
    else if (key == "band_width") p.band_width = value.get<int>();
    else throw ValidationError("unknown generator key '" + key + "'");
  }
  return p;
}

FloatGrid gaussian_random_field(std::uint64_t seed, int height, int width, double corr_len) {
  if (corr_len < 0.5) return white_noise(seed, height, width);
  const auto k = gaussian_kernel(corr_len);
  const int radius = static_cast<int>(k.size() / 2);
  const int ph = height + 2 * radius;
  const int pw = width + 2 * radius;
  const auto noise = white_noise(seed, ph, pw);
  // Valid-mode separable convolution over the padded noise keeps the field
  // stationary right up to the border.
  std::vector<double> rows(static_cast<std::size_t>(ph) * width);
  for (int r = 0; r < ph; ++r)
    for (int c = 0; c < width; ++c) {
      double s = 0;
      for (std::size_t t = 0; t < k.size(); ++t) s += k[t] * noise.at(r, c + static_cast<int>(t));
      rows[static_cast<std::size_t>(r) * width + c] = s;
    }
  double k2 = 0;
  for (double v : k) k2 += v * v;
  const double norm = 1.0 / k2;  // std of the 2D-filtered unit noise is sum(k^2)
  FloatGrid out(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      double s = 0;
      for (std::size_t t = 0; t < k.size(); ++t) s += k[t] * rows[static_cast<std::size_t>(r + t) * width + c];
      out.at(r, c) = static_cast<float>(s * norm);
    }
  return out;
}

FloatGrid gaussian_blur(const FloatGrid& g, double sigma) {
  if (sigma <= 0) return g;
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(g.size());
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) {
      double s = 0;
      for (int t = -radius; t <= radius; ++t) s += k[t + radius] * g.at(r, reflect(c + t, g.width));
      tmp[static_cast<std::size_t>(r) * g.width + c] = s;
    }
  FloatGrid out(g.height, g.width);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) {
      double s = 0;
      for (int t = -radius; t <= radius; ++t)
        s += k[t + radius] * tmp[static_cast<std::size_t>(reflect(r + t, g.height)) * g.width + c];
      out.at(r, c) = static_cast<float>(s);
    }
  return out;
}

double rain_coverage(const PrecipGrid& precip) {
  if (precip.size() == 0) return 0.0;
  const auto wet = std::count_if(precip.values.begin(), precip.values.end(),
                                 [](float v) { return v >= metrics::kRainThreshold; });
  return static_cast<double>(wet) / static_cast<double>(precip.size());
}

double pearson(const FloatGrid& a, const FloatGrid& b) {
  require_same_shape(a, b, "pearson");
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a.values[i] - ma;
    const double db = b.values[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

PrecipGrid gen_precip_field(std::uint64_t seed, const GenParams& params) {
  params.validate();
  const int n = params.grid_size;
  const auto z = gaussian_random_field(derive_seed(seed, 1), n, n, params.field_correlation_length);
  const double zq = normal_quantile(1.0 - params.rain_coverage_target);
  PrecipGrid rain(n, n, 0.0f);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double excess = z.values[i] - zq;
    if (excess > 0)
      rain.values[i] = static_cast<float>(0.1 + kIntensityScale * std::expm1(kIntensityRate * excess));
  }
  return rain;
}

Modalities derive_modalities(const PrecipGrid& precip, const GenParams& params, std::uint64_t seed) {
  params.validate();
  for (float v : precip.values)
    if (!(v >= 0) || !std::isfinite(v)) throw ValidationError("precipitation must be finite and non-negative");
  const int h = precip.height;
  const int w = precip.width;
  const double corr_len = params.field_correlation_length;

  Modalities out;
  const MaskGrid all_valid(h, w, 1);

  FloatGrid pr = precip;
  calibrate_noise(pr, precip, white_noise(derive_seed(seed, 1), h, w), params.pr_corr_target);
  for (auto& v : pr.values) v /= kProxyScale;
  out.pr = {std::move(pr), Modality::PR, all_valid};

  FloatGrid pmw = gaussian_blur(precip, kPmwFootprintSigma);
  calibrate_noise(pmw, precip, white_noise(derive_seed(seed, 2), h, w), params.pmw_corr_target);
  for (auto& v : pmw.values) v /= kProxyScale;
  out.pmw = {std::move(pmw), Modality::PMW, all_valid};

  FloatGrid cloud = precip;
  for (auto& v : cloud.values) v = -std::log1p(v);
  cloud = gaussian_blur(cloud, kIrCloudSigma);
  const double depth = kCirrusDepth * stddev_of(cloud);
  if (params.cirrus_contamination_rate > 0 && depth > 0) {
    const auto field = gaussian_random_field(derive_seed(seed, 3), h, w, corr_len);
    const double cq = normal_quantile(1.0 - params.cirrus_contamination_rate);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const double excess = field.values[i] - cq;
      if (excess > 0 && precip.values[i] < metrics::kRainThreshold)
        cloud.values[i] -= static_cast<float>(depth * std::min(1.0, excess / 0.5));
    }
  }
  calibrate_noise(cloud, precip, white_noise(derive_seed(seed, 4), h, w),
                  params.ir_corr_target);
  if (params.ir_noise_sigma > 0) {
    const auto white = white_noise(derive_seed(seed, 5), h, w);
    for (std::size_t i = 0; i < cloud.size(); ++i)
      cloud.values[i] += static_cast<float>(params.ir_noise_sigma * white.values[i]);
  }
  for (auto& v : cloud.values) v = kIrClearSkyK + kIrScaleK * v;
  out.ir = {std::move(cloud), Modality::IR, all_valid};
  return out;
}

SwathMask gen_swath(std::uint64_t seed, int grid_size, int band_width) {
  if (grid_size <= 0) throw SizingError("grid_size must be positive");
  if (band_width <= 0 || band_width > grid_size)
    throw SizingError("band_width " + std::to_string(band_width) + " must lie in (0, " + std::to_string(grid_size) +
                      "]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle_dist(-kMaxSwathAngleDeg, kMaxSwathAngleDeg);
  double angle = angle_dist(rng) * std::numbers::pi / 180.0;

  const int n = grid_size;
  const double mid = 0.5 * (n - 1);
  auto horizontal_width = [&](double a) { return static_cast<int>(std::lround(band_width / std::cos(a))); };
  auto shift = [&](double a, int r) { return static_cast<int>(std::lround((r - mid) * std::tan(a))); };

  int wh = horizontal_width(angle);
  if (wh >= n) {
    angle = 0.0;
    wh = band_width;
  }
  int lo = 0;
  int hi = n - wh;
  for (int r = 0; r < n; ++r) {
    lo = std::max(lo, -shift(angle, r));
    hi = std::min(hi, n - wh - shift(angle, r));
  }
  if (lo > hi) {
    // Band cannot cross the grid at this slope without clipping; go vertical.
    angle = 0.0;
    wh = band_width;
    lo = 0;
    hi = n - wh;
  }
  std::uniform_int_distribution<int> offset_dist(lo, hi);
  const int c0 = offset_dist(rng);

  SwathMask mask;
  mask.values = MaskGrid(n, n, 0);
  mask.band_width = band_width;
  mask.angle_rad = angle;
  mask.crop_start.resize(n);
  for (int r = 0; r < n; ++r) {
    const int start = c0 + shift(angle, r);
    for (int c = start; c < start + wh; ++c) mask.values.at(r, c) = 1;
    mask.crop_start[r] = start + (wh - band_width) / 2;
  }
  return mask;
}

FloatGrid crop_to_swath(const FloatGrid& g, const SwathMask& swath) {
  if (g.height != swath.values.height || g.width != swath.values.width)
    throw ValidationError("crop_to_swath: grid and swath differ in shape");
  FloatGrid out(g.height, swath.band_width);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < swath.band_width; ++c) out.at(r, c) = g.at(r, swath.crop_start[r] + c);
  return out;
}

Scene make_scene(std::uint64_t seed, const GenParams& params, std::string scene_id) {
  params.validate();
  const int n = params.grid_size;
  Scene s;
  s.seed = seed;
  s.scene_id = std::move(scene_id);
  s.precip = gen_precip_field(derive_seed(seed, 11), params);
  auto mods = derive_modalities(s.precip, params, derive_seed(seed, 12));
  s.swath = gen_swath(derive_seed(seed, 13), n, params.band_width);
  for (auto* m : {&mods.pmw, &mods.pr}) {
    m->validity = s.swath.values;
    for (std::size_t i = 0; i < m->values.size(); ++i)
      if (!s.swath.values.values[i]) m->values.values[i] = 0.0f;
  }
  s.ir = std::move(mods.ir);
  s.pmw = std::move(mods.pmw);
  s.pr = std::move(mods.pr);

  auto elev = gaussian_random_field(derive_seed(seed, 14), n, n, 2.0 * params.field_correlation_length);
  for (auto& v : elev.values) v = static_cast<float>(normal_cdf(v));
  FloatGrid lat(n, n), lon(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      lat.at(r, c) = static_cast<float>(r) / static_cast<float>(n - 1);
      lon.at(r, c) = static_cast<float>(c) / static_cast<float>(n - 1);
    }
  s.geo = {std::move(elev), std::move(lat), std::move(lon)};
  return s;
}

void DatasetConfig::validate() const {
  gen.validate();
  if (train < 1 || val < 1 || test < 1) throw ValidationError("every partition needs at least one scene");
  if (!(coverage_floor >= 0 && coverage_floor < 1)) throw ValidationError("coverage_floor must lie in [0, 1)");
  if (max_retries < 1) throw ValidationError("max_retries must be >= 1");
}

json DatasetConfig::to_json() const {
  return {{"gen", gen.to_json()}, {"train", train},        {"val", val},
          {"test", test},         {"seed", seed},          {"coverage_floor", coverage_floor},
          {"max_retries", max_retries}};
}

DatasetConfig DatasetConfig::from_json(const json& j) {
  DatasetConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "gen") c.gen = GenParams::from_json(value);
    else if (key == "train") c.train = value.get<int>();
    else if (key == "val") c.val = value.get<int>();
    else if (key == "test") c.test = value.get<int>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "coverage_floor") c.coverage_floor = value.get<double>();
    else if (key == "max_retries") c.max_retries = value.get<int>();
    else throw ValidationError("unknown dataset key '" + key + "'");
  }
  return c;
}

json DatasetManifest::to_json() const {
  json j;
  j["manifest_version"] = 1;
  j["config"] = config;
  j["scenes"] = json::array();
  for (const auto& e : scenes) {
    j["scenes"].push_back({{"scene_id", e.scene_id},
                           {"partition", e.partition},
                           {"seed", e.seed},
                           {"coverage", e.coverage},
                           {"swath_coverage", e.swath_coverage},
                           {"swath", {{"path", e.swath_path}, {"hash", e.swath_hash}}},
                           {"fulldisc", {{"path", e.fulldisc_path}, {"hash", e.fulldisc_hash}}}});
  }
  return j;
}

std::string DatasetManifest::hash() const { return store::canonical_hash(to_json()); }

std::vector<const ManifestEntry*> DatasetManifest::partition(const std::string& name) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : scenes)
    if (e.partition == name) out.push_back(&e);
  return out;
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  DatasetManifest m;
  try {
    if (j.at("manifest_version").get<int>() != 1) throw VersionError("unsupported dataset manifest version");
    m.config = j.at("config");
    for (const auto& s : j.at("scenes")) {
      ManifestEntry e;
      e.scene_id = s.at("scene_id").get<std::string>();
      e.partition = s.at("partition").get<std::string>();
      e.seed = s.at("seed").get<std::uint64_t>();
      e.coverage = s.at("coverage").get<double>();
      e.swath_coverage = s.at("swath_coverage").get<double>();
      e.swath_path = s.at("swath").at("path").get<std::string>();
      e.swath_hash = s.at("swath").at("hash").get<std::string>();
      e.fulldisc_path = s.at("fulldisc").at("path").get<std::string>();
      e.fulldisc_hash = s.at("fulldisc").at("hash").get<std::string>();
      m.scenes.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed dataset manifest: ") + e.what());
  }
  return m;
}

DatasetManifest build_dataset(const DatasetConfig& config, const fs::path& out_dir) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create dataset directory " + out_dir.string());

  DatasetManifest manifest;
  manifest.config = config.to_json();
  manifest.root = out_dir;
  const std::array<std::pair<const char*, int>, 3> partitions{{{"train", config.train},
                                                               {"val", config.val},
                                                               {"test", config.test}}};
  for (std::size_t p = 0; p < partitions.size(); ++p) {
    const auto [name, count] = partitions[p];
    for (int i = 0; i < count; ++i) {
      char id[32];
      std::snprintf(id, sizeof(id), "%s-%03d", name, i);
      bool accepted = false;
      for (int attempt = 0; attempt < config.max_retries && !accepted; ++attempt) {
        const auto scene_seed = derive_seed(config.seed, p, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(attempt));
        auto scene = make_scene(scene_seed, config.gen, id);
        const double coverage = rain_coverage(scene.precip);
        const auto swath_precip = crop_to_swath(scene.precip, scene.swath);
        const double swath_coverage = rain_coverage(swath_precip);
        if (coverage < config.coverage_floor || swath_coverage < config.coverage_floor) continue;
        accepted = true;

        ManifestEntry e;
        e.scene_id = id;
        e.partition = name;
        e.seed = scene_seed;
        e.coverage = coverage;
        e.swath_coverage = swath_coverage;
        e.swath_path = (fs::path("swath") / id).generic_string();
        e.fulldisc_path = (fs::path("fulldisc") / id).generic_string();

        const json meta{{"scene_id", e.scene_id}, {"partition", e.partition}, {"seed", scene_seed}};
        auto swath_meta = meta;
        swath_meta["view"] = "swath";
        swath_meta["band_width"] = scene.swath.band_width;
        swath_meta["angle_rad"] = scene.swath.angle_rad;
        swath_meta["crop_start"] = scene.swath.crop_start;
        const auto& sw = scene.swath;
        e.swath_hash = store::write_gridpack(
            {store::Variable::from_grid("precip", swath_precip, "mm/hr"),
             store::Variable::from_grid("ir", crop_to_swath(scene.ir.values, sw), "K"),
             store::Variable::from_grid("pmw", crop_to_swath(scene.pmw.values, sw), "1"),
             store::Variable::from_grid("pr", crop_to_swath(scene.pr.values, sw), "1"),
             store::Variable::from_grid("elev", crop_to_swath(scene.geo[0], sw), "1"),
             store::Variable::from_grid("lat", crop_to_swath(scene.geo[1], sw), "1"),
             store::Variable::from_grid("lon", crop_to_swath(scene.geo[2], sw), "1")},
            swath_meta, out_dir / e.swath_path);
        auto full_meta = meta;
        full_meta["view"] = "fulldisc";
        e.fulldisc_hash = store::write_gridpack({store::Variable::from_grid("precip", scene.precip, "mm/hr"),
                                                 store::Variable::from_grid("ir", scene.ir.values, "K")},
                                                full_meta, out_dir / e.fulldisc_path);
        manifest.scenes.push_back(std::move(e));
      }
      if (!accepted)
        throw GenerationError("scene " + std::string(id) + ": no draw reached the rain-coverage floor after " +
                              std::to_string(config.max_retries) + " attempts");
    }
  }
  std::ofstream out(out_dir / kManifestFile, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (out_dir / kManifestFile).string());
  out << manifest.to_json().dump(2) << '\n';
  if (!out) throw IoError("write failed: " + (out_dir / kManifestFile).string());
  return manifest;
}

DatasetManifest load_manifest(const fs::path& dataset_dir) {
  const auto path = dataset_dir / kManifestFile;
  std::ifstream in(path);
  if (!in) throw IoError("missing dataset manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IntegrityError("malformed dataset manifest " + path.string() + ": " + e.what());
  }
  auto m = DatasetManifest::from_json(j);
  m.root = dataset_dir;
  return m;
}

}  // namespace precipx::datagen
