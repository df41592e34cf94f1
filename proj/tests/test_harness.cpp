#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "precipx/config.hpp"
#include "precipx/harness.hpp"
#include "precipx/render.hpp"

using namespace precipx;
using config::RunConfig;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kRuns = fs::temp_directory_path() / "precipx_harness_runs";

RunConfig tiny(const std::string& run_id) {
  RunConfig c;
  c.merge(json::parse(R"({
    "run_id": ")" + run_id + R"(",
    "runs_dir": ")" + kRuns.string() + R"(",
    "data": {"gen": {"grid_size": 64, "band_width": 16}, "train": 4, "val": 2, "test": 2},
    "model": {"stages": 3, "base_channels": 4, "mask_patch": 4},
    "teacher": {"epochs": 1, "batch_size": 2},
    "distill": {"epochs": 1, "batch_size": 2},
    "adapt": {"epochs": 2, "batch_size": 2, "K": 1},
    "ablation": {"seeds": [1, 2]},
    "eval": {"noise": [{"kind": "additive", "sigma": 0.0}, {"kind": "multiplicative", "sigma": 0.0}]}
  })"));
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PRECIPX_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config defaults and overrides") {
  RunConfig c;
  CHECK(c.doc().at("distill").at("lambda").get<double>() == 0.2);
  CHECK(c.doc().at("distill").at("gamma").get<double>() == 50.0);
  CHECK(c.doc().at("distill").at("alpha").get<double>() == 0.25);
  CHECK(c.doc().at("distill").at("n").get<int>() == 3);
  CHECK(c.adapt().rank == 4);
  CHECK(c.dataset().train == 32);
  const auto h = c.hash();
  c.set("distill.lambda=0.1");
  CHECK(c.distill(nets::Task::classification).lambda == 0.1);
  CHECK(c.hash() != h);
  c.set("distill.kd_mode=none");
  CHECK(c.distill(nets::Task::classification).kd_mode == distill::KdMode::none);
  CHECK_THROWS_AS(c.set("distill.lamda=0.1"), ConfigError);
  CHECK_THROWS_AS(c.set("distill.epochs=\"many\""), ConfigError);
  CHECK_THROWS_AS(c.set("distill.epochs=2.5"), ConfigError);
  CHECK_THROWS_AS(c.set("distill.kd_mode=bogus"), ConfigError);
  CHECK_THROWS_AS(c.set("novalue"), ConfigError);
  CHECK(c.distill(nets::Task::classification).lambda == 0.1);  // failed sets leave the config untouched
  CHECK(c.teacher(nets::Task::classification).train.seed != c.distill(nets::Task::classification).train.seed);
  CHECK(c.teacher(nets::Task::classification).train.seed != c.teacher(nets::Task::regression).train.seed);
}

TEST_CASE("config file") {
  fs::create_directories(kRuns);
  const auto path = kRuns / "c.json";
  std::ofstream(path) << R"({"seed": 5, "model": {"base_channels": 8}})";
  const auto c = RunConfig::load(path);
  CHECK(c.seed() == 5);
  CHECK(c.student_model(nets::Task::regression).base_channels == 8);
  std::ofstream(path) << "{not json";
  CHECK_THROWS_AS(RunConfig::load(path), ConfigError);
}

TEST_CASE("protocol rows") {
  const auto c = tiny("rows");
  using harness::Protocol;
  CHECK(harness::protocol_rows(harness::protocol_for_table(2), c) ==
        std::vector<std::string>{"neither", "rmkd", "dawe", "both"});
  CHECK(harness::protocol_rows(harness::protocol_for_table(4), c) ==
        std::vector<std::string>{"scratch", "kd+non", "comwe+non", "comwe+rand", "comwe+self"});
  CHECK(harness::protocol_rows(Protocol::kd_modes, c).size() == 3);
  CHECK(harness::protocol_rows(Protocol::modality, c).size() == 4);
  CHECK(harness::protocol_rows(Protocol::noise, c) ==
        std::vector<std::string>{"clean", "additive(0)", "multiplicative(0)"});
  CHECK_THROWS_AS(harness::protocol_for_table(5), ConfigError);
  CHECK_THROWS_AS(harness::parse_protocol("tables"), ConfigError);
  CHECK(*harness::median({0.1, std::nullopt, 0.5, 0.3}) == 0.3);
  CHECK(*harness::median({0.1, 0.5}) == doctest::Approx(0.3));
  CHECK_FALSE(harness::median({std::nullopt}).has_value());
}

TEST_CASE("pipeline prerequisites") {
  const auto c = tiny("prereq");
  fs::remove_all(harness::paths(c).root);
  CHECK_THROWS_WITH_AS(harness::train_teacher(c), doctest::Contains("gen-data"), MissingPrerequisite);
  harness::gen_data(c);
  CHECK_THROWS_WITH_AS(harness::distill(c), doctest::Contains("train-teacher"), MissingPrerequisite);
  CHECK_THROWS_WITH_AS(harness::adapt(c), doctest::Contains("distill"), MissingPrerequisite);
  CHECK_THROWS_WITH_AS(harness::run_ablation(harness::Protocol::noise, c), doctest::Contains("adapt"),
                       MissingPrerequisite);
  CHECK_THROWS_WITH_AS(harness::report(c), doctest::Contains("evaluate"), MissingPrerequisite);
}

TEST_CASE("full pipeline, evaluation and report") {
  const auto c = tiny("main");
  const auto p = harness::paths(c);
  fs::remove_all(p.root);
  const auto h1 = harness::gen_data(c);
  CHECK(harness::gen_data(c) == h1);
  CHECK(fs::exists(p.config));
  CHECK(harness::train_teacher(c).size() == 2);
  CHECK(harness::distill(c).size() == 2);
  CHECK(harness::adapt(c).size() == 2);
  for (const auto* name : {"teacher_cls", "teacher_reg", "student_cls", "student_reg", "adapted_cls", "adapted_reg"})
    CHECK(fs::exists(p.checkpoints / name / "header.json"));
  const auto adapted = store::load_checkpoint(p.checkpoints / "adapted_cls");
  CHECK(adapted.header.parent_hash == store::checkpoint_hash(p.checkpoints / "student_cls"));

  const auto rows = harness::evaluate(c);
  std::set<std::string> seen;
  for (const auto& r : rows) {
    seen.insert(r.model + "/" + r.split);
    std::set<std::string> names;
    for (const auto& [n, v] : r.report.named()) names.insert(n);
    CHECK(names == std::set<std::string>{"POD", "FAR", "CSI", "CSI-4", "CSI-8", "RMSE", "CC"});
  }
  CHECK(seen.count("teacher/swath-test"));
  CHECK(seen.count("student/swath-test"));
  CHECK(seen.count("adapted/fulldisc-test"));
  CHECK(seen.count("adapted/fulldisc-test+additive(0)"));

  const auto dir = harness::report(c);
  CHECK(fs::exists(dir / "report.md"));
  const auto rep = json::parse(std::ifstream(dir / "report.json"));
  CHECK(rep.at("provenance").at("dataset_hash") == h1);
  CHECK(rep.at("provenance").at("config_hash") == c.hash());
  // Every table number comes from a metrics row.
  const auto logged = store::read_metrics(p.metrics);
  for (const auto& row : rep.at("rows")) {
    for (const auto* metric : {"CSI", "POD", "RMSE"}) {
      if (row.at(metric).is_null()) continue;
      bool found = false;
      for (const auto& m : logged)
        found = found || (m.stage == "eval/" + row.at("model").get<std::string>() &&
                          m.split == row.at("split").get<std::string>() && m.metric == metric && m.value &&
                          *m.value == row.at(metric).get<double>());
      CHECK(found);
    }
  }
  const auto maps = p.report / "maps";
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(maps)) pngs += e.path().extension() == ".png";
  CHECK(pngs == 3);

  SUBCASE("noise protocol at zero sigma matches clean evaluation") {
    const auto r = harness::run_ablation(harness::Protocol::noise, c);
    REQUIRE(r.rows.size() == 3);
    for (const auto& row : r.rows) {
      const auto a = row.median.named(), b = r.rows[0].median.named();
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].second == b[i].second);
    }
  }
}

TEST_CASE("ablation cells are cached") {
  auto c = tiny("cache");
  c.set("tasks=[\"classification\"]");
  fs::remove_all(harness::paths(c).root);
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = harness::run_ablation(harness::Protocol::kd_modes, c, {"none", "comwe"});
  const auto t1 = std::chrono::steady_clock::now();
  const auto b = harness::run_ablation(harness::Protocol::kd_modes, c, {"none", "comwe"});
  const auto t2 = std::chrono::steady_clock::now();
  REQUIRE(a.rows.size() == 2);
  CHECK(a.rows[0].name == "none");
  CHECK(a.rows[0].per_seed.size() == 2);
  CHECK(a.to_json() == b.to_json());
  CHECK(t2 - t1 < t1 - t0);
  int cells = 0;
  for (const auto& e : fs::directory_iterator(harness::paths(c).cells)) cells += e.is_directory();
  CHECK(cells == 2 + 2 + 2);  // students for two rows plus one teacher, per seed
  CHECK(fs::exists(harness::paths(c).report / "kd_modes.md"));
  CHECK_THROWS_AS(harness::run_ablation(harness::Protocol::kd_modes, c, {"mgd"}), ConfigError);
}

TEST_CASE("render maps") {
  const auto dir = fs::temp_directory_path() / "precipx_render";
  fs::remove_all(dir);
  PrecipGrid truth(20, 30, 0.0f), a(20, 30, 1.0f), b(20, 30, 0.0f);
  truth.at(3, 4) = 7.0f;
  b.at(0, 0) = 12.0f;
  CHECK(render::shared_scale(truth, {{"a", a}, {"b", b}}) == 12.0f);
  const auto panels = render::render_maps(truth, {{"a", a}, {"b", b}}, dir);
  REQUIRE(panels.size() == 3);
  for (const auto& panel : panels) CHECK(render::png_size(panel.path) == std::pair<int, int>{30, 20});
  const PrecipGrid zero(8, 8, 0.0f);
  CHECK(render::shared_scale(zero, {{"z", zero}}) == 1.0f);
  CHECK(render::render_maps(zero, {{"z", zero}}, dir, "zero_").size() == 2);
}

TEST_CASE("cli exit codes") {
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("gen-data --bogus-flag") == 2);
  CHECK(run_cli("gen-data --set nope.key=1") == 2);
  CHECK(run_cli("distill --set runs_dir=\\\"" + kRuns.string() + "\\\" --run-id empty_run") == 1);
  CHECK(run_cli("ablate --set runs_dir=\\\"" + kRuns.string() + "\\\" --run-id empty_run") == 2);
}
