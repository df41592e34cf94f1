#include <doctest.h>

#include <torch/torch.h>

#include <set>

#include "precipx/comwe.hpp"

using namespace precipx;
using namespace precipx::comwe;

namespace {

double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

std::set<int> visible(const MaskGrid& m) {
  std::set<int> s;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.values[i]) s.insert(static_cast<int>(i));
  return s;
}

}  // namespace

TEST_CASE("haar convention") {
  auto x = torch::tensor({1.0f, 2.0f, 3.0f, 4.0f}).view({1, 1, 2, 2});
  const auto b = dwt_haar(x);
  CHECK(b.ll.item<float>() == 5.0f);
  CHECK(b.hl.item<float>() == -1.0f);
  CHECK(b.lh.item<float>() == -2.0f);
  CHECK(b.hh.item<float>() == 0.0f);
  const auto c = dwt_haar(torch::full({2, 3, 8, 8}, 1.5f));
  CHECK(max_abs(c.ll - 3.0f) == 0.0);
  CHECK(max_abs(c.hl) == 0.0);
  CHECK(max_abs(c.lh) == 0.0);
  CHECK(max_abs(c.hh) == 0.0);
}

TEST_CASE("haar round trip and energy") {
  torch::manual_seed(3);
  for (int i = 0; i < 20; ++i) {
    const auto x = torch::randn({2, 3, 64, 64});
    const auto b = dwt_haar(x);
    CHECK(max_abs(idwt_haar(b) - x) <= 1e-6);
    const double e = x.to(torch::kFloat64).pow(2).sum().item<double>();
    double eb = 0;
    for (const auto* t : {&b.ll, &b.hl, &b.lh, &b.hh}) eb += t->to(torch::kFloat64).pow(2).sum().item<double>();
    CHECK(std::abs(eb - e) / e <= 1e-6);
  }
  const auto odd = torch::randn({1, 2, 7, 9});
  const auto r = idwt_haar(dwt_haar(odd));
  CHECK(r.sizes() == odd.sizes());
  CHECK(max_abs(r - odd) <= 1e-6);
}

TEST_CASE("maskset partition and ratios") {
  for (double alpha : {0.0, 0.25, 0.5})
    for (int n : {1, 2, 3, 4})
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto m = build_maskset(1, 64, 64, alpha, n, 8, seed);
        REQUIRE(m.remasks.size() == static_cast<std::size_t>(n));
        CHECK(std::abs(MaskSet::masked_fraction(m.conv_mask) - alpha) <= m.patch_quantum() + 1e-12);
        const auto vc = visible(m.conv_mask);
        std::set<int> uni;
        std::size_t total = 0;
        for (const auto& r : m.remasks) {
          const auto v = visible(r);
          total += v.size();
          uni.insert(v.begin(), v.end());
          CHECK(std::abs(MaskSet::masked_fraction(r) - (n + alpha - 1.0) / n) <= m.patch_quantum() + 1e-12);
        }
        CHECK(uni == vc);
        CHECK(total == vc.size());
      }
  const auto p = build_maskset(1, 64, 64, 0.25, 3, 8, 9);
  for (const auto& r : p.remasks) CHECK(std::abs(MaskSet::masked_fraction(r) - 0.75) <= p.patch_quantum());
  const auto one = build_maskset(1, 32, 32, 0.25, 1, 4, 2);
  CHECK(one.remasks[0] == one.conv_mask);
  CHECK(build_maskset(2, 32, 32, 0.25, 3, 4, 5).conv_mask == build_maskset(2, 32, 32, 0.25, 3, 4, 5).conv_mask);
}

TEST_CASE("maskset errors") {
  CHECK_THROWS_AS(build_maskset(1, 16, 16, 0.5, 3, 8, 1), ConstructionError);  // 2 visible patches
  CHECK_THROWS_AS(build_maskset(1, 16, 16, 1.0, 1, 8, 1), ConstructionError);
  CHECK_THROWS_AS(build_maskset(1, 16, 16, 0.1, 0, 8, 1), ConstructionError);
  CHECK_THROWS_AS(build_maskset(1, 20, 16, 0.1, 1, 8, 1), ContractError);
}

TEST_CASE("masked conv") {
  torch::manual_seed(1);
  MaskedConv mc(4, 8);
  const auto prev = torch::randn({2, 4, 16, 16});
  const auto plain = mc->forward(prev);
  CHECK(plain.sizes() == torch::IntArrayRef({2, 8, 8, 8}));
  CHECK(torch::equal(mc->forward(prev, torch::ones({2, 1, 8, 8})), plain));
  const auto z = torch::zeros({2, 1, 8, 8});
  CHECK(torch::equal(mc->forward(prev, z), mc->forward(torch::randn({2, 4, 16, 16}), z)));
  CHECK_THROWS_AS(mc->forward(prev, torch::ones({2, 1, 4, 4})), ContractError);
}

TEST_CASE("dawe") {
  torch::manual_seed(2);
  for (int level = 1; level <= 3; ++level) {
    Dawe d(level, 4, 4 << level);
    const auto constant = torch::full({1, 4, 64, 64}, 0.7f);
    CHECK(max_abs(d->high_bands(constant)) == 0.0);
    CHECK(max_abs(d->forward(constant)) == 0.0);
    const auto x = torch::randn({1, 4, 64, 64});
    const auto out = d->forward(x);
    CHECK(out.sizes() == torch::IntArrayRef({1, 4 << level, 64 >> level, 64 >> level}));
    const auto att = d->attention(out);
    CHECK(att.min().item<float>() > 0.0f);
    CHECK(att.max().item<float>() < 1.0f);
  }
  Dawe deep(5, 4, 8);
  CHECK_THROWS_AS(deep->forward(torch::randn({1, 4, 16, 16})), ContractError);
}

TEST_CASE("rmkd reconstruction") {
  torch::manual_seed(4);
  Rmkd r(8, 3);
  CHECK(r->branch_weights().sum().item<float>() == doctest::Approx(1.0f));
  const auto fc = torch::randn({2, 8, 8, 8}), fh = torch::randn({2, 8, 8, 8});
  const auto ones = torch::ones({2, 1, 8, 8});
  CHECK(torch::equal(r->forward(fc, fh, {ones}), r->autoencoder()->forward(fc + fh)));

  const auto sets = stack_masks({build_maskset(2, 8, 8, 0.25, 3, 2, 1), build_maskset(2, 8, 8, 0.25, 3, 2, 2)});
  const auto z = torch::zeros_like(fc);
  CHECK(torch::allclose(r->forward(z, z, sets.remasks), r->autoencoder()->forward(z), 1e-6, 1e-6));

  const auto a = r->forward(fc, fh, sets.remasks);
  const auto b = r->forward(fc, fh, {sets.remasks[2], sets.remasks[0], sets.remasks[1]});
  CHECK(torch::allclose(a, b, 1e-6, 1e-6));
  CHECK(a.sizes() == fc.sizes());
  CHECK_THROWS_AS(r->forward(fc, fh, {ones, ones}), ContractError);
}

TEST_CASE("mask tensors") {
  const auto m = build_maskset(1, 16, 16, 0.25, 2, 4, 3);
  const auto t = mask_to_tensor(m.conv_mask);
  CHECK(t.sizes() == torch::IntArrayRef({1, 1, 16, 16}));
  CHECK(t.sum().item<float>() == doctest::Approx(16 * 16 * 0.75));
  const auto s = stack_masks({m, m});
  CHECK(s.conv.size(0) == 2);
  CHECK(s.remasks.size() == 2);
}
