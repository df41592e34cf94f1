#include <doctest.h>

#include <cmath>
#include <random>

#include "precipx/metrics.hpp"

using namespace precipx;
using namespace precipx::metrics;

namespace {

FloatGrid random_field(std::mt19937_64& rng, int h, int w, double rain_p) {
  FloatGrid g(h, w);
  std::bernoulli_distribution rain(rain_p);
  std::uniform_real_distribution<float> amount(0.1f, 20.0f), drizzle(0.0f, 0.0999f);
  for (auto& v : g.values) v = rain(rng) ? amount(rng) : drizzle(rng);
  return g;
}

FloatGrid filled(int h, int w, std::initializer_list<std::pair<int, int>> rain) {
  FloatGrid g(h, w, 0.0f);
  for (auto [r, c] : rain) g.at(r, c) = 1.0f;
  return g;
}

// Loop oracles.
std::array<std::int64_t, 4> loop_counts(const FloatGrid& p, const FloatGrid& t) {
  std::array<std::int64_t, 4> c{};
  for (int r = 0; r < p.height; ++r)
    for (int k = 0; k < p.width; ++k) {
      const bool pr = p.at(r, k) >= 0.1f, tr = t.at(r, k) >= 0.1f;
      if (pr && tr) ++c[0];
      else if (tr) ++c[1];
      else if (pr) ++c[2];
      else ++c[3];
    }
  return c;
}

std::optional<double> loop_neighbor_csi(const FloatGrid& p, const FloatGrid& t, int k) {
  std::int64_t h = 0, m = 0, f = 0;
  for (int br = 0; br < p.height; br += k)
    for (int bc = 0; bc < p.width; bc += k) {
      bool pr = false, tr = false;
      for (int r = br; r < br + k; ++r)
        for (int c = bc; c < bc + k; ++c) {
          pr = pr || p.at(r, c) >= 0.1f;
          tr = tr || t.at(r, c) >= 0.1f;
        }
      if (pr && tr) ++h;
      else if (tr) ++m;
      else if (pr) ++f;
    }
  if (h + m + f == 0) return std::nullopt;
  return static_cast<double>(h) / static_cast<double>(h + m + f);
}

}  // namespace

TEST_CASE("formula arithmetic") {
  ConfusionCounts c{3, 1, 1, 10};
  CHECK(*pod(c) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(*far(c) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(*csi(c) == doctest::Approx(0.6).epsilon(1e-12));
  ConfusionCounts none{0, 0, 0, 5};
  CHECK_FALSE(pod(none).has_value());
  CHECK_FALSE(far(none).has_value());
  CHECK_FALSE(csi(none).has_value());
}

TEST_CASE("confusion special cases") {
  const auto a = filled(4, 4, {{0, 0}, {1, 1}});
  auto c = confusion(a, a);
  CHECK(c.misses == 0);
  CHECK(c.false_alarms == 0);
  CHECK(*pod(c) == 1.0);
  CHECK(*far(c) == 0.0);
  CHECK(*csi(c) == 1.0);
  const auto b = filled(4, 4, {{3, 3}, {3, 2}, {2, 3}});
  c = confusion(a, b);
  CHECK(c.hits == 0);
  CHECK(c.false_alarms == 2);
  CHECK(c.misses == 3);
  CHECK_THROWS_AS(confusion(FloatGrid(4, 4), FloatGrid(4, 5)), ValidationError);
}

TEST_CASE("threshold is inclusive") {
  FloatGrid p(1, 2, 0.0f), t(1, 2, 0.0f);
  p.at(0, 0) = 0.1f;
  t.at(0, 0) = 0.1f;
  CHECK(confusion(p, t).hits == 1);
}

TEST_CASE("loop oracle equivalence and algebraic bounds") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_field(rng, 16, 16, 0.3), t = random_field(rng, 16, 16, 0.3);
    const auto c = confusion(p, t);
    const auto o = loop_counts(p, t);
    CHECK(c.hits == o[0]);
    CHECK(c.misses == o[1]);
    CHECK(c.false_alarms == o[2]);
    CHECK(c.correct_negatives == o[3]);
    for (int k : {4, 8}) CHECK(csi_neighbor(p, t, k) == loop_neighbor_csi(p, t, k));
    if (pod(c) && far(c) && csi(c)) {
      CHECK(*csi(c) <= *pod(c) + 1e-12);
      CHECK(*csi(c) <= 1.0 - *far(c) + 1e-12);
    }
    const auto s = confusion(t, p);
    CHECK(s.misses == c.false_alarms);
    CHECK(s.false_alarms == c.misses);
    CHECK(csi(s) == csi(c));
  }
}

TEST_CASE("csi neighbor") {
  // Rain at (0,0) in truth, (3,3) in pred: same 4x4 block.
  const auto t = filled(8, 8, {{0, 0}});
  const auto p = filled(8, 8, {{3, 3}});
  CHECK(*csi(confusion(p, t)) == 0.0);
  CHECK(*csi_neighbor(p, t, 4) == 1.0);
  CHECK(*csi_neighbor(t, t, 4) == 1.0);
  std::mt19937_64 rng(5);
  const auto a = random_field(rng, 16, 16, 0.4), b = random_field(rng, 16, 16, 0.4);
  CHECK(csi_neighbor(a, b, 1) == csi(confusion(a, b)));
}

TEST_CASE("csi neighbor pads non divisible grids") {
  const auto t = filled(10, 10, {{9, 9}});
  CHECK(*csi_neighbor(t, t, 4) == 1.0);
  CHECK(*csi_neighbor(filled(10, 10, {{8, 8}}), t, 4) == 1.0);
}

TEST_CASE("continuous metrics") {
  std::mt19937_64 rng(9);
  const auto t = random_field(rng, 16, 16, 0.5);
  CHECK(*rmse(t, t) == 0.0);
  CHECK(*cc(t, t) == doctest::Approx(1.0).epsilon(1e-9));
  auto shifted = t;
  for (auto& v : shifted.values) v += 2.5f;
  CHECK(*rmse(shifted, t) == doctest::Approx(2.5).epsilon(1e-5));
  CHECK(*cc(shifted, t) == doctest::Approx(1.0).epsilon(1e-6));
  auto neg = t;
  for (auto& v : neg.values) v = -v;
  CHECK(*cc(neg, t) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK_FALSE(cc(FloatGrid(4, 4, 1.0f), FloatGrid(4, 4, 2.0f)).has_value());
  CHECK_FALSE(cc(t, FloatGrid(16, 16, 3.0f)).has_value());
}

TEST_CASE("inject noise") {
  FloatGrid g(1000, 1000, 250.0f);
  CHECK(inject_noise(g, NoiseKind::additive, 0.0, 1) == g);
  CHECK(inject_noise(g, NoiseKind::multiplicative, 0.0, 1) == g);
  const double sigma = 1.0;
  const auto a = inject_noise(g, NoiseKind::additive, sigma, 3);
  CHECK(a == inject_noise(g, NoiseKind::additive, sigma, 3));
  CHECK_FALSE(a == inject_noise(g, NoiseKind::additive, sigma, 4));
  double mean = 0;
  for (std::size_t i = 0; i < g.size(); ++i) mean += static_cast<double>(a.values[i]) - g.values[i];
  mean /= static_cast<double>(g.size());
  CHECK(std::abs(mean) <= 3.0 * sigma / std::sqrt(static_cast<double>(g.size())));
  CHECK_THROWS_AS(inject_noise(g, NoiseKind::additive, -1.0, 1), ValidationError);
  CHECK_THROWS_AS(parse_noise_kind("pink"), ValidationError);
}

TEST_CASE("accumulator matches single evaluation") {
  std::mt19937_64 rng(11);
  const auto p = random_field(rng, 16, 16, 0.3), t = random_field(rng, 16, 16, 0.3);
  MetricAccumulator acc;
  acc.add(p, p, t);
  const auto r = acc.report();
  const auto e = evaluate(p, p, t);
  CHECK(r.csi == e.csi);
  CHECK(r.csi4 == e.csi4);
  CHECK(*r.rmse == doctest::Approx(*rmse(p, t)).epsilon(1e-9));
  CHECK(*r.cc == doctest::Approx(*cc(p, t)).epsilon(1e-9));
  MetricAccumulator cat;
  cat.add_categorical(p, t);
  CHECK(cat.report().csi == e.csi);
  CHECK_FALSE(cat.report().rmse.has_value());
  CHECK(r.named().size() == 7);
}
