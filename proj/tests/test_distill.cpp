#include <doctest.h>

#include <torch/torch.h>

#include <cmath>
#include <filesystem>

#include "precipx/datagen.hpp"
#include "precipx/dataset.hpp"
#include "precipx/distill.hpp"
#include "precipx/losses.hpp"

using namespace precipx;
using namespace precipx::distill;
using nets::Task;
namespace fs = std::filesystem;

namespace {

struct Data {
  datagen::DatasetManifest manifest;
  dataset::SwathSplit train, val;
};

const Data& data() {
  static const Data d = [] {
    datagen::DatasetConfig cfg;
    cfg.gen.grid_size = 64;
    cfg.gen.band_width = 16;
    cfg.train = 8;
    cfg.val = 4;
    cfg.test = 2;
    const auto dir = fs::temp_directory_path() / "precipx_distill_data";
    fs::remove_all(dir);
    auto m = datagen::build_dataset(cfg, dir);
    return Data{m, dataset::load_swath(m, "train"), dataset::load_swath(m, "val")};
  }();
  return d;
}

TeacherConfig small_teacher(int epochs, Task task = Task::classification) {
  TeacherConfig t;
  t.model.in_channels = 3;
  t.model.geo_channels = 3;
  t.model.base_channels = 4;
  t.model.stages = 3;
  t.model.task = task;
  t.train.epochs = epochs;
  t.train.batch_size = 4;
  return t;
}

DistillConfig small_student(int epochs, KdMode mode) {
  DistillConfig d;
  d.model.base_channels = 4;
  d.model.stages = 3;
  d.model.mask_patch = 4;
  d.train.epochs = epochs;
  d.train.batch_size = 4;
  d.kd_mode = mode;
  return d;
}

}  // namespace

TEST_CASE("task loss") {
  const auto target = (torch::rand({2, 1, 8, 8}) > 0.5).to(torch::kFloat32);
  const auto saturated = target * (1 - 1e-9) + (1 - target) * 1e-9;
  const auto l = losses::task_loss(saturated, target, Task::classification);
  CHECK(l.mean.item<double>() <= 2e-6);
  CHECK(l.map.sizes() == target.sizes());
  const auto y = torch::randn({2, 1, 8, 8});
  CHECK(losses::task_loss(y, y, Task::regression).mean.item<double>() == 0.0);
  CHECK(losses::task_loss(y + 1, y, Task::regression).mean.item<double>() == doctest::Approx(1.0).epsilon(1e-6));
  const auto w = torch::full({2, 1, 8, 8}, 2.0);
  CHECK(losses::task_loss(y + 1, y, Task::regression, w).mean.item<double>() == doctest::Approx(2.0).epsilon(1e-6));
  auto bad = y.clone();
  bad[0][0][0][0] = std::nan("");
  CHECK_THROWS_AS(losses::task_loss(bad, y, Task::regression), NumericError);
}

TEST_CASE("feature loss") {
  const auto a = torch::randn({2, 3, 4, 4});
  CHECK(losses::feat_loss(a, a).item<double>() == doctest::Approx(0.0).epsilon(1e-7));
  for (int i = 0; i < 10; ++i) CHECK(losses::feat_loss(torch::randn({2, 3, 4, 4}), a).item<double>() >= 0.0);
  auto teacher = torch::zeros({1, 1, 2, 2});
  teacher[0][0][0][0] = 60.0;
  const auto student = torch::zeros({1, 1, 2, 2});
  CHECK(losses::feat_loss(student, teacher).item<double>() == doctest::Approx(std::log(4.0)).epsilon(1e-5));
}

TEST_CASE("reconstruction loss") {
  std::vector<torch::Tensor> t{torch::randn({1, 2, 8, 8}), torch::randn({1, 4, 4, 4})};
  CHECK(losses::rec_loss(t, t).item<double>() == 0.0);
  auto s = t;
  s[1] = t[1] + 3.0;
  CHECK(losses::rec_loss(s, t).item<double>() == doctest::Approx(9.0 / 2).epsilon(1e-6));
  auto neg = t;
  neg[1] = t[1] - 3.0;
  CHECK(losses::rec_loss(neg, t).item<double>() == doctest::Approx(losses::rec_loss(s, t).item<double>()).epsilon(1e-9));
  CHECK_THROWS_AS(losses::rec_loss({t[0]}, t), ContractError);
}

TEST_CASE("train config schedule") {
  TrainConfig c;
  c.lr = 1e-3;
  c.lr_decay_every = 3;
  CHECK(c.lr_at(1) == 1e-3);
  CHECK(c.lr_at(3) == 1e-3);
  CHECK(c.lr_at(4) == doctest::Approx(5e-4));
  CHECK(c.lr_at(7) == doctest::Approx(2.5e-4));
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
  c.epochs = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("non finite loss names the step") {
  CHECK_THROWS_WITH_AS(distill::detail::check_finite(std::nan(""), 2, 5), doctest::Contains("step 5"), NumericError);
  CHECK_NOTHROW(distill::detail::check_finite(1.0, 1, 1));
}

TEST_CASE("teacher overfits and is deterministic") {
  const auto& d = data();
  auto tc = small_teacher(20);
  const auto r = train_teacher(d.train, d.train, tc);
  REQUIRE(r.epochs.size() == 20);
  CHECK(r.epochs.back().train_loss < r.epochs.front().train_loss);
  const auto a = train_teacher(d.train, d.val, small_teacher(2));
  const auto b = train_teacher(d.train, d.val, small_teacher(2));
  CHECK(store::checkpoint_hash(a.checkpoint) == store::checkpoint_hash(b.checkpoint));
  CHECK(a.checkpoint.header.model_kind == nets::kKindTeacher);
}

TEST_CASE("student distillation contracts") {
  const auto& d = data();
  const auto teacher = train_teacher(d.train, d.val, small_teacher(2)).checkpoint;
  const auto teacher_hash = store::checkpoint_hash(teacher);

  SUBCASE("degenerate objective equals task loss") {
    auto dc = small_student(2, KdMode::comwe);
    dc.lambda = 0;
    dc.gamma = 0;
    dc.alpha = 0;
    dc.n = 1;
    const auto r = train_student_distill(d.train, d.val, &teacher, dc);
    for (const auto& s : r.steps) CHECK(s.total == s.task);
  }
  SUBCASE("loss identity and frozen teacher") {
    const auto dc = small_student(2, KdMode::comwe);
    const auto r = train_student_distill(d.train, d.val, &teacher, dc);
    for (const auto& s : r.steps) {
      const double expect = s.task + dc.lambda * s.feat + dc.gamma * s.rec;
      CHECK(std::abs(s.total - expect) <= 1e-6 * std::max(1.0, std::abs(expect)));
      CHECK(s.feat >= 0);
      CHECK(s.rec >= 0);
    }
    CHECK(store::checkpoint_hash(teacher) == teacher_hash);
    CHECK(r.checkpoint.header.parent_hash == teacher_hash);
  }
  SUBCASE("vanilla kd has no reconstruction term") {
    const auto r = train_student_distill(d.train, d.val, &teacher, small_student(1, KdMode::vanilla_kd));
    for (const auto& s : r.steps) {
      CHECK(s.rec == 0.0);
      CHECK(s.feat > 0.0);
    }
  }
  SUBCASE("kd none ignores the teacher") {
    const auto dc = small_student(2, KdMode::none);
    const auto a = train_student_distill(d.train, d.val, &teacher, dc);
    const auto b = train_student_distill(d.train, d.val, nullptr, dc);
    CHECK(store::checkpoint_hash(a.checkpoint) == store::checkpoint_hash(b.checkpoint));
    for (const auto& s : a.steps) CHECK(s.total == s.task);
  }
  SUBCASE("missing teacher") {
    CHECK_THROWS_AS(train_student_distill(d.train, d.val, nullptr, small_student(1, KdMode::comwe)),
                    MissingPrerequisite);
  }
  SUBCASE("incompatible teacher") {
    auto dc = small_student(1, KdMode::comwe);
    dc.model.stages = 4;
    CHECK_THROWS_AS(train_student_distill(d.train, d.val, &teacher, dc), IncompatibleError);
  }
}

TEST_CASE("class weights balance the classes") {
  auto t = torch::zeros({1, 1, 4, 4});
  t[0][0][0][0] = 1.0;
  t[0][0][0][1] = 1.0;
  t[0][0][0][2] = 1.0;
  t[0][0][0][3] = 1.0;
  const auto w = ClassWeights::from_target(t);
  const auto m = w.map(t);
  CHECK((m * t).sum().item<double>() == doctest::Approx((m * (1 - t)).sum().item<double>()));
  CHECK(m.mean().item<double>() == doctest::Approx(1.0));
}
