#include <doctest.h>

#include <torch/torch.h>

#include "precipx/distill.hpp"
#include "precipx/layers.hpp"
#include "precipx/nets.hpp"

using namespace precipx;
using namespace precipx::nets;

namespace {

ModelConfig teacher_cfg(int base, int stages = 4) {
  ModelConfig c;
  c.in_channels = 3;
  c.geo_channels = 3;
  c.base_channels = base;
  c.stages = stages;
  return c;
}

ModelConfig student_cfg(int base, int stages = 4, Task task = Task::classification) {
  ModelConfig c;
  c.base_channels = base;
  c.stages = stages;
  c.task = task;
  return c;
}

std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k) { return in * out * k * k + out; }
std::int64_t double_conv(std::int64_t in, std::int64_t out) { return conv_params(in, out, 3) + conv_params(out, out, 3); }

// Teacher parameter count from the layer spec.
std::int64_t analytic_teacher(const ModelConfig& c) {
  std::int64_t n = 0;
  for (int i = 0; i < c.stages; ++i) n += double_conv(i == 0 ? c.in_channels : c.channels(i), c.channels(i + 1));
  for (int j = 0; j < c.stages - 1; ++j) {
    const std::int64_t fine = c.base_channels << j;
    n += 2 * fine * fine * 4 + fine;  // 2x2 transposed conv
    n += double_conv(2 * fine + (j == 0 ? c.geo_channels : 0), fine);
  }
  return n + conv_params(c.base_channels, 1, 1);
}

FloatGrid random_grid(int h, int w) {
  return tensor_to_grid(torch::randn({h, w}));
}

}  // namespace

TEST_CASE("teacher shapes and range") {
  torch::manual_seed(1);
  UNet t(teacher_cfg(8));
  const auto x = torch::randn({2, 3, 256, 49});
  const auto geo = torch::rand({2, 3, 256, 49});
  const auto out = t->forward(x, geo);
  CHECK(out.prediction.sizes() == torch::IntArrayRef({2, 1, 256, 49}));
  REQUIRE(out.pyramid.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(out.pyramid[i].size(1) == 8 << i);
    CHECK(out.pyramid[i].size(2) == 256 >> i);
    CHECK(out.pyramid[i].size(3) == 64 >> i);
  }
  CHECK(out.prediction.min().item<float>() > 0.0f);
  CHECK(out.prediction.max().item<float>() < 1.0f);
  CHECK_THROWS_AS(t->forward(x), ValidationError);
  CHECK_THROWS_AS(t->forward(torch::randn({1, 2, 32, 32}), geo), ValidationError);
  CHECK_THROWS_AS(teacher_forward(t, random_grid(32, 32), random_grid(32, 16), random_grid(32, 32),
                                  {random_grid(32, 32), random_grid(32, 32), random_grid(32, 32)}),
                  ValidationError);
}

TEST_CASE("teacher parameter count") {
  UNet a(teacher_cfg(32)), b(teacher_cfg(64));
  CHECK(count_parameters(*a) == analytic_teacher(teacher_cfg(32)));
  CHECK(count_parameters(*b) == analytic_teacher(teacher_cfg(64)));
  const double ratio = static_cast<double>(count_parameters(*b)) / static_cast<double>(count_parameters(*a));
  CHECK(ratio == doctest::Approx(4.0).epsilon(0.01));
}

TEST_CASE("student shapes and modes") {
  torch::manual_seed(2);
  PRENet s(student_cfg(4));
  s->eval();
  const auto x = torch::randn({1, 1, 256, 256});
  const auto out = s->forward(x);
  CHECK(out.prediction.sizes() == torch::IntArrayRef({1, 1, 256, 256}));
  CHECK(out.prediction.min().item<float>() > 0.0f);
  CHECK(out.prediction.max().item<float>() < 1.0f);

  StudentMasks ones;
  for (int level = 1; level <= s->comwe_levels(); ++level) {
    const auto [h, w] = s->level_shape(level, 256, 256);
    ones.levels.push_back({torch::ones({1, 1, h, w}), {torch::ones({1, 1, h, w})}});
  }
  CHECK(torch::equal(s->forward(x, StudentMode::train_masked, ones).prediction, out.prediction));
  CHECK_THROWS_AS(s->forward(x, StudentMode::inference, ones), ContractError);
  CHECK_THROWS_AS(s->forward(x, StudentMode::train_masked), ContractError);

  PRENet r(student_cfg(4, 3, Task::regression));
  const auto rp = r->forward(torch::randn({1, 1, 40, 49})).prediction;
  CHECK(rp.sizes() == torch::IntArrayRef({1, 1, 40, 49}));
  CHECK(torch::isfinite(rp).all().item<bool>());
}

TEST_CASE("student grid wrapper with mask sets") {
  torch::manual_seed(3);
  PRENet s(student_cfg(4, 3));
  s->eval();
  const auto ir = random_grid(64, 64);
  std::vector<comwe::MaskSet> sets;
  for (int level = 1; level <= s->comwe_levels(); ++level) {
    const auto [h, w] = s->level_shape(level, 64, 64);
    sets.push_back(comwe::identity_maskset(level, h, w));
  }
  const auto a = student_forward(s, ir);
  const auto b = student_forward(s, ir, StudentMode::train_masked, sets);
  CHECK(a.prediction == b.prediction);
  CHECK(a.prediction.height == 64);
}

TEST_CASE("predictor head") {
  PredictorHead cls(6, Task::classification), reg(6, Task::regression);
  for (auto* h : {&cls, &reg}) {
    torch::NoGradGuard g;
    (*h)->conv()->weight.zero_();
    (*h)->conv()->bias.zero_();
  }
  const auto f = torch::randn({2, 6, 5, 7});
  const auto c = cls->forward(f);
  CHECK(c.sizes() == torch::IntArrayRef({2, 1, 5, 7}));
  CHECK(torch::equal(c, torch::full_like(c, 0.5)));
  CHECK(torch::equal(reg->forward(f), torch::zeros({2, 1, 5, 7})));
}

TEST_CASE("fuse predictions") {
  FloatGrid ones(2, 2, 1.0f), zeros(2, 2, 0.0f), reg(2, 2, 3.0f);
  reg.at(0, 1) = -1.0f;
  const auto a = fuse_predictions(ones, reg);
  CHECK(a.at(0, 0) == 3.0f);
  CHECK(a.at(0, 1) == 0.0f);
  CHECK(fuse_predictions(zeros, reg) == zeros);
  FloatGrid p(1, 1, 0.6f), r(1, 1, -0.2f);
  CHECK(fuse_predictions(p, r).at(0, 0) == 0.0f);
  CHECK_THROWS_AS(fuse_predictions(ones, FloatGrid(3, 3)), ValidationError);
}

TEST_CASE("pad crop round trip") {
  const auto x = torch::randn({1, 2, 37, 49});
  for (int m : {2, 8, 16, 64}) {
    const auto p = layers::pad_to_multiple(x, m);
    CHECK(p.size(2) % m == 0);
    CHECK(p.size(3) % m == 0);
    CHECK(torch::equal(layers::crop_to(p, 37, 49), x));
  }
}

TEST_CASE("teacher gradient check in double precision") {
  torch::manual_seed(5);
  auto cfg = teacher_cfg(4, 2);
  cfg.in_channels = 1;
  cfg.geo_channels = 0;
  UNet model(cfg);
  model->to(torch::kFloat64);
  const auto x = torch::randn({1, 1, 16, 16}, torch::kFloat64);
  const auto target = (torch::rand({1, 1, 16, 16}, torch::kFloat64) > 0.5).to(torch::kFloat64);
  auto loss_fn = [&] { return torch::binary_cross_entropy(model->forward(x).prediction, target); };
  model->zero_grad();
  loss_fn().backward();
  const double eps = 1e-6;
  int checked = 0;
  double worst = 0;
  torch::NoGradGuard no_grad;
  for (auto& p : model->parameters()) {
    auto flat = p.view(-1);
    const auto g = p.grad().view(-1);
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + eps;
      const double up = loss_fn().item<double>();
      flat[i] = orig - eps;
      const double down = loss_fn().item<double>();
      flat[i] = orig;
      const double num = (up - down) / (2 * eps);
      const double ana = g[i].item<double>();
      const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-5});
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  CHECK(checked == count_parameters(*model));
  CHECK(worst <= 1e-4);
}

TEST_CASE("checkpoint export and load") {
  torch::manual_seed(6);
  PRENet s(student_cfg(4, 3));
  store::Checkpoint ck;
  ck.header.model_kind = kKindStudent;
  ck.header.model_config = s->config().to_json();
  ck.params = export_params(*s);
  auto loaded = distill::load_student(ck);
  const auto x = torch::randn({1, 1, 32, 32});
  s->eval();
  loaded->eval();
  CHECK(torch::equal(s->forward(x).prediction, loaded->forward(x).prediction));

  UNet t(teacher_cfg(4, 3));
  store::Checkpoint tk;
  tk.header.model_kind = kKindTeacher;
  tk.header.model_config = t->config().to_json();
  tk.params = export_params(*t);
  CHECK_THROWS_AS(distill::load_student(tk), IncompatibleError);
  auto forged = tk;
  forged.header.model_kind = kKindStudent;
  forged.header.model_config = s->config().to_json();
  CHECK_THROWS_AS(distill::load_student(forged), IncompatibleError);
}

TEST_CASE("model config") {
  auto c = student_cfg(32);
  CHECK(c.channels(3) == 128);
  CHECK(c.patch_at(1) == 8);
  CHECK(c.patch_at(3) == 2);
  CHECK(c.pad_multiple() == 16);
  CHECK(ModelConfig::from_json(c.to_json()).to_json() == c.to_json());
  c.stages = 1;
  CHECK_THROWS(c.validate());
  CHECK_THROWS(ModelConfig::from_json({{"stagez", 3}}));
}
