#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "precipx/datagen.hpp"
#include "precipx/store.hpp"

using namespace precipx;
using namespace precipx::datagen;
namespace fs = std::filesystem;

TEST_CASE("precip field determinism and validation") {
  GenParams p;
  const auto a = gen_precip_field(7, p);
  CHECK(a == gen_precip_field(7, p));
  CHECK_FALSE(a == gen_precip_field(8, p));
  for (float v : a.values) {
    CHECK(v >= 0.0f);
    CHECK(std::isfinite(v));
  }
  p.grid_size = 8;
  CHECK_THROWS_AS(gen_precip_field(1, p), SizingError);
}

TEST_CASE("rain coverage matches target over 100 seeds") {
  GenParams p;
  p.rain_coverage_target = 0.3;
  double mean = 0;
  for (int s = 0; s < 100; ++s) mean += rain_coverage(gen_precip_field(static_cast<std::uint64_t>(s), p));
  mean /= 100.0;
  CHECK(std::abs(mean - 0.30) <= 0.02);
}

TEST_CASE("vanishing coverage gives an all-zero field") {
  GenParams p;
  p.rain_coverage_target = 1e-6;
  const auto g = gen_precip_field(3, p);
  for (float v : g.values) CHECK(v == 0.0f);
}

TEST_CASE("modality correlation ordering over 100 scenes") {
  GenParams p;
  double ir = 0, pmw = 0, pr = 0;
  const int n = 100;
  for (int s = 0; s < n; ++s) {
    const auto precip = gen_precip_field(static_cast<std::uint64_t>(1000 + s), p);
    const auto m = derive_modalities(precip, p, static_cast<std::uint64_t>(s));
    ir += -pearson(m.ir.values, precip);  // colder is rainier
    pmw += pearson(m.pmw.values, precip);
    pr += pearson(m.pr.values, precip);
  }
  ir /= n;
  pmw /= n;
  pr /= n;
  CHECK(pr > pmw);
  CHECK(pmw > ir);
  CHECK(std::abs(pr - 0.9) <= 0.1);
  CHECK(std::abs(pmw - 0.8) <= 0.1);
  CHECK(std::abs(ir - 0.4) <= 0.1);
}

TEST_CASE("noiseless limit and constant input") {
  GenParams p;
  p.ir_noise_sigma = 0;
  p.cirrus_contamination_rate = 0;
  p.ir_corr_target = p.pmw_corr_target = p.pr_corr_target = 1.0;
  const auto precip = gen_precip_field(5, p);
  const auto m = derive_modalities(precip, p, 9);
  CHECK(pearson(m.pr.values, precip) == doctest::Approx(1.0).epsilon(1e-9));

  const PrecipGrid flat(64, 64, 2.0f);
  GenParams q;
  q.grid_size = 64;
  q.cirrus_contamination_rate = 0;
  q.ir_noise_sigma = 0;
  const auto c = derive_modalities(flat, q, 4);
  for (const auto* g : {&c.ir.values, &c.pmw.values, &c.pr.values})
    for (float v : g->values) CHECK(v == g->values.front());
}

TEST_CASE("swath geometry") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto m = gen_swath(s, 256, 49);
    std::int64_t area = 0;
    for (auto v : m.values.values) area += v;
    CHECK(area >= 49.0 * 256 * 0.7);
    CHECK(area <= 49.0 * 256 * 1.45);
    for (int r = 0; r < 256; ++r)
      for (int c = 0; c < 49; ++c) CHECK(m.values.at(r, m.crop_start[r] + c) == 1);
  }
  const auto full = gen_swath(3, 64, 64);
  for (auto v : full.values.values) CHECK(v == 1);
  CHECK(gen_swath(11, 256, 49).values == gen_swath(11, 256, 49).values);
  CHECK_THROWS_AS(gen_swath(1, 64, 65), SizingError);
}

TEST_CASE("scene validity masks") {
  GenParams p;
  p.grid_size = 64;
  p.band_width = 16;
  const auto s = make_scene(21, p, "x");
  CHECK(s.pmw.validity == s.swath.values);
  CHECK(s.pr.validity == s.swath.values);
  for (auto v : s.ir.validity.values) CHECK(v == 1);
}

TEST_CASE("build dataset") {
  const auto root = fs::temp_directory_path() / "precipx_datagen";
  fs::remove_all(root);
  DatasetConfig cfg;
  const auto a = build_dataset(cfg, root / "a");
  const auto b = build_dataset(cfg, root / "b");
  CHECK(a.scenes.size() == 56);
  CHECK(a.partition("train").size() == 32);
  CHECK(a.partition("val").size() == 8);
  CHECK(a.partition("test").size() == 16);
  CHECK(a.hash() == b.hash());
  CHECK(load_manifest(root / "a").hash() == a.hash());
  for (const auto& e : a.scenes) {
    CHECK(e.coverage >= cfg.coverage_floor);
    CHECK(store::gridpack_hash(root / "a" / e.swath_path) == e.swath_hash);
    const auto full = store::read_gridpack(root / "a" / e.fulldisc_path).grid("precip");
    CHECK(rain_coverage(full) >= cfg.coverage_floor);
  }
  // Swath crop aligned to the band.
  const auto& e = a.scenes.front();
  const auto sw = store::read_gridpack(root / "a" / e.swath_path);
  const auto full = store::read_gridpack(root / "a" / e.fulldisc_path);
  const auto sp = sw.grid("precip");
  CHECK(sp.height == 256);
  CHECK(sp.width == 49);
  const auto fp = full.grid("precip");
  const auto starts = sw.meta.at("crop_start").get<std::vector<int>>();
  for (int r = 0; r < 256; ++r)
    for (int c = 0; c < 49; ++c) CHECK(sp.at(r, c) == fp.at(r, starts[r] + c));
  for (const auto& name : {"ir", "pmw", "pr", "elev", "lat", "lon"}) CHECK(sw.contains(name));
}

TEST_CASE("dataset config validation") {
  DatasetConfig cfg;
  cfg.train = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  GenParams p;
  p.ir_corr_target = 0.95;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  CHECK_THROWS_AS(GenParams::from_json({{"nope", 1}}), ValidationError);
  DatasetConfig tight;
  tight.gen.grid_size = 32;
  tight.gen.band_width = 8;
  tight.gen.rain_coverage_target = 0.01;
  tight.coverage_floor = 0.9;
  tight.max_retries = 2;
  CHECK_THROWS_AS(build_dataset(tight, fs::temp_directory_path() / "precipx_datagen_tight"), GenerationError);
}
