// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/config.hpp"

#include <fstream>
#include <sstream>

#include "precipx/errors.hpp"
#include "precipx/hash.hpp"
#include "precipx/store.hpp"

namespace precipx::config {

namespace fs = std::filesystem;

namespace {

bool compatible(const json& def, const json& v) {
  if (def.is_number() && v.is_number()) return !(def.is_number_integer() && v.is_number_float());
  return def.type() == v.type();
}

void merge_into(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (const auto& [key, v] : user.items()) {
    const auto full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + full + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, v, full);
    } else {
      if (!compatible(slot, v)) throw ConfigError("config key '" + full + "' has the wrong type");
      slot = v;
    }
  }
}

json train_json(int epochs, int batch, double lr, int decay_every) {
  return {{"epochs", epochs},         {"batch_size", batch},       {"lr", lr},
          {"lr_decay_every", decay_every}, {"lr_decay_factor", 0.5}, {"balance_classes", true}};
}

distill::TrainConfig train_from(const json& j, std::uint64_t seed) {
  distill::TrainConfig t;
  t.epochs = j.at("epochs").get<int>();
  t.batch_size = j.at("batch_size").get<int>();
  t.lr = j.at("lr").get<double>();
  t.lr_decay_every = j.at("lr_decay_every").get<int>();
  t.lr_decay_factor = j.at("lr_decay_factor").get<double>();
  t.balance_classes = j.at("balance_classes").get<bool>();
  t.seed = seed;
  t.validate();
  return t;
}

// Stage tags for per-stage training seeds.
enum StageTag : std::uint64_t { kTeacherSeed = 1, kDistillSeed = 2, kAdaptSeed = 3, kScratchSeed = 4 };

std::uint64_t task_index(nets::Task t) { return t == nets::Task::classification ? 0 : 1; }

}  // namespace

json RunConfig::defaults() {
  json d;
  d["run_id"] = "default";
  d["runs_dir"] = "runs";
  d["seed"] = 1;
  d["threads"] = 1;
  d["tasks"] = {"classification", "regression"};
  d["data"] = datagen::DatasetConfig{}.to_json();
  d["model"] = {{"stages", 4}, {"base_channels", 32}, {"mask_patch", 8}, {"branches", 3}, {"use_rmkd", true},
                {"use_dawe", true}};
  d["teacher"] = train_json(40, 8, 1e-3, 6);
  d["teacher"]["modalities"] = {{"ir", true}, {"pmw", true}, {"pr", true}};
  d["distill"] = train_json(40, 8, 1e-3, 6);
  d["distill"].update({{"lambda", 0.2}, {"gamma", 50.0}, {"alpha", 0.25}, {"n", 3}, {"kd_mode", "comwe"}});
  d["adapt"] = train_json(20, 4, 1e-3, 3);
  d["adapt"].update({{"K", 10}, {"rho", 0.5}, {"rank", 4}, {"scale", 1.0}, {"tune_mode", "self"}});
  d["eval"] = {{"noise", json::array({{{"kind", "additive"}, {"sigma", 1.0}},
                                      {{"kind", "multiplicative"}, {"sigma", 0.005}}})},
               {"noise_seed", 7},
               {"render_maps", true},
               {"batch_size", 8}};
  d["ablation"] = {{"seeds", {1, 2, 3}}};
  return d;
}

RunConfig::RunConfig() : doc_(defaults()) {}

RunConfig RunConfig::from_json(const json& user) {
  RunConfig c;
  c.merge(user);
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void RunConfig::merge(const json& user) {
  auto next = doc_;
  merge_into(next, user, "");
  std::swap(doc_, next);
  try {
    validate();
  } catch (const ValidationError& e) {
    std::swap(doc_, next);
    throw ConfigError(e.what());
  } catch (...) {
    std::swap(doc_, next);
    throw;
  }
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge(patch);
}

void RunConfig::validate() const {
  try {
    if (run_id().empty() || run_id().find('/') != std::string::npos) throw ConfigError("run_id must be a plain name");
    if (doc_.at("threads").get<int>() < 1) throw ConfigError("threads must be >= 1");
    dataset().validate();
    for (auto task : tasks()) {
      teacher(task);
      distill(task).validate();
    }
    adapt().validate();
    scratch_train();
    noise();
    if (ablation_seeds().empty()) throw ConfigError("ablation.seeds must not be empty");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  } catch (const SizingError& e) {
    throw ConfigError(e.what());
  }
}

std::string RunConfig::hash() const { return store::canonical_hash(doc_); }
std::string RunConfig::run_id() const { return doc_.at("run_id").get<std::string>(); }
fs::path RunConfig::run_dir() const { return fs::path(doc_.at("runs_dir").get<std::string>()) / run_id(); }
std::uint64_t RunConfig::seed() const { return doc_.at("seed").get<std::uint64_t>(); }

datagen::DatasetConfig RunConfig::dataset() const { return datagen::DatasetConfig::from_json(doc_.at("data")); }

nets::ModelConfig RunConfig::student_model(nets::Task task) const {
  const auto& m = doc_.at("model");
  nets::ModelConfig c;
  c.stages = m.at("stages").get<int>();
  c.base_channels = m.at("base_channels").get<int>();
  c.mask_patch = m.at("mask_patch").get<int>();
  c.branches = m.at("branches").get<int>();
  c.use_rmkd = m.at("use_rmkd").get<bool>();
  c.use_dawe = m.at("use_dawe").get<bool>();
  c.grid_size = doc_.at("data").at("gen").at("grid_size").get<int>();
  c.task = task;
  c.validate();
  return c;
}

nets::ModelConfig RunConfig::teacher_model(nets::Task task) const {
  auto c = student_model(task);
  c.in_channels = 3;
  c.geo_channels = 3;
  return c;
}

distill::TeacherConfig RunConfig::teacher(nets::Task task, const dataset::Modalities& m) const {
  distill::TeacherConfig c;
  c.model = teacher_model(task);
  c.train = train_from(doc_.at("teacher"), derive_seed(seed(), kTeacherSeed, task_index(task)));
  const auto& mj = doc_.at("teacher").at("modalities");
  c.modalities = {mj.at("ir").get<bool>() && m.ir, mj.at("pmw").get<bool>() && m.pmw, mj.at("pr").get<bool>() && m.pr};
  return c;
}

distill::DistillConfig RunConfig::distill(nets::Task task) const {
  const auto& j = doc_.at("distill");
  distill::DistillConfig c;
  c.model = student_model(task);
  c.train = train_from(j, derive_seed(seed(), kDistillSeed, task_index(task)));
  c.lambda = j.at("lambda").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.n = j.at("n").get<int>();
  c.kd_mode = distill::parse_kd_mode(j.at("kd_mode").get<std::string>());
  return c;
}

adapt::AdaptConfig RunConfig::adapt() const {
  const auto& j = doc_.at("adapt");
  adapt::AdaptConfig c;
  // Per-task seeds are applied by the harness.
  c.train = train_from(j, derive_seed(seed(), kAdaptSeed));
  c.K = j.at("K").get<int>();
  c.rho = j.at("rho").get<double>();
  c.rank = j.at("rank").get<int>();
  c.scale = j.at("scale").get<double>();
  c.mode = adapt::parse_tune_mode(j.at("tune_mode").get<std::string>());
  return c;
}

distill::TrainConfig RunConfig::scratch_train() const {
  return train_from(doc_.at("adapt"), derive_seed(seed(), kScratchSeed));
}

std::vector<NoiseSetting> RunConfig::noise() const {
  std::vector<NoiseSetting> out;
  for (const auto& n : doc_.at("eval").at("noise")) {
    NoiseSetting s{metrics::parse_noise_kind(n.at("kind").get<std::string>()), n.at("sigma").get<double>()};
    if (!(s.sigma >= 0)) throw ConfigError("noise sigma must be >= 0");
    out.push_back(s);
  }
  return out;
}

std::vector<std::uint64_t> RunConfig::ablation_seeds() const {
  return doc_.at("ablation").at("seeds").get<std::vector<std::uint64_t>>();
}

bool RunConfig::render_maps() const { return doc_.at("eval").at("render_maps").get<bool>(); }

std::vector<nets::Task> RunConfig::tasks() const {
  std::vector<nets::Task> out;
  for (const auto& t : doc_.at("tasks")) out.push_back(nets::parse_task(t.get<std::string>()));
  if (out.empty()) throw ConfigError("tasks must not be empty");
  return out;
}

RunConfig RunConfig::with_seed(std::uint64_t s, const std::string& suffix) const {
  RunConfig c = *this;
  c.doc_["seed"] = s;
  c.doc_["run_id"] = run_id() + suffix;
  return c;
}

}  // namespace precipx::config
