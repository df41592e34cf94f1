// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "precipx/adapt.hpp"
#include "precipx/dataset.hpp"
#include "precipx/distill.hpp"
#include "precipx/errors.hpp"
#include "precipx/hash.hpp"
#include "precipx/render.hpp"

namespace precipx::harness {

namespace {

using nets::Task;

std::uint64_t task_index(Task t) { return t == Task::classification ? 0 : 1; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

datagen::DatasetManifest require_dataset(const RunPaths& p) {
  if (!fs::exists(p.data / datagen::kManifestFile))
    throw MissingPrerequisite("no dataset at " + p.data.string() + "; run `precipx gen-data` first");
  return datagen::load_manifest(p.data);
}

fs::path checkpoint_dir(const RunPaths& p, const std::string& role, Task t) {
  return p.checkpoints / (role + "_" + task_suffix(t));
}

store::Checkpoint require_checkpoint(const RunPaths& p, const std::string& role, Task t,
                                     const std::string& subcommand) {
  const auto dir = checkpoint_dir(p, role, t);
  if (!fs::exists(dir / "header.json"))
    throw MissingPrerequisite("missing checkpoint " + dir.string() + "; run `precipx " + subcommand + "` first");
  return store::load_checkpoint(dir);
}

void log_training(store::MetricsLog& log, const std::string& run_id, const std::string& stage,
                  const distill::TrainResult& r) {
  std::map<int, std::array<double, 5>> sums;  // task, feat, rec, total, count
  for (const auto& s : r.steps) {
    auto& a = sums[s.epoch];
    a[0] += s.task;
    a[1] += s.feat;
    a[2] += s.rec;
    a[3] += s.total;
    a[4] += 1;
  }
  std::vector<store::MetricRow> rows;
  for (const auto& e : r.epochs) {
    const auto& a = sums[e.epoch];
    const double n = std::max(1.0, a[4]);
    rows.push_back({run_id, stage, e.epoch, "train", "task", a[0] / n});
    rows.push_back({run_id, stage, e.epoch, "train", "feat", a[1] / n});
    rows.push_back({run_id, stage, e.epoch, "train", "rec", a[2] / n});
    rows.push_back({run_id, stage, e.epoch, "train", "total", a[3] / n});
    rows.push_back({run_id, stage, e.epoch, "val", "loss", e.val_loss});
    if (e.val_csi || r.checkpoint.header.model_config.value("task", "") == "classification")
      rows.push_back({run_id, stage, e.epoch, "val", "CSI", e.val_csi});
  }
  rows.push_back({run_id, stage, r.best_epoch, "val", "best_epoch", static_cast<double>(r.best_epoch)});
  log.append(rows);
}

std::vector<store::MetricRow> report_rows(const std::string& run_id, const std::string& stage, int epoch,
                                          const std::string& split, const metrics::MetricReport& rep) {
  std::vector<store::MetricRow> rows;
  for (const auto& [name, v] : rep.named()) rows.push_back({run_id, stage, epoch, split, name, v});
  return rows;
}

torch::Tensor noisy_ir(const torch::Tensor& ir_k, const config::NoiseSetting& noise, std::uint64_t seed) {
  if (noise.kind == metrics::NoiseKind::none) return ir_k;
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < ir_k.size(0); ++i) {
    auto g = nets::tensor_to_grid(ir_k[i][0]);
    parts.push_back(nets::grid_to_tensor(
        metrics::inject_noise(g, noise.kind, noise.sigma, derive_seed(seed, static_cast<std::uint64_t>(i)))));
  }
  return torch::cat(parts, 0);
}

dataset::Modalities teacher_modalities(const store::Checkpoint& c) {
  dataset::Modalities m;
  const auto& echo = c.header.config_echo;
  if (echo.contains("modalities")) {
    m.ir = echo["modalities"].value("ir", true);
    m.pmw = echo["modalities"].value("pmw", true);
    m.pr = echo["modalities"].value("pr", true);
  }
  return m;
}

// Raw network output (probability or log-rate) for every sample.
torch::Tensor run_model(const store::Checkpoint& ckpt, const torch::Tensor& ir_k, const dataset::SwathSplit* swath,
                        int batch_size) {
  const auto& kind = ckpt.header.model_kind;
  if (kind == nets::kKindTeacher) {
    if (swath == nullptr) throw IncompatibleError("teacher checkpoints can only be evaluated on the swath split");
    auto model = distill::load_teacher(ckpt);
    model->eval();
    auto view = *swath;
    view.ir_k = ir_k;
    const bool geo = model->config().geo_channels > 0;
    return distill::predict(model, view.teacher_input(teacher_modalities(ckpt)), geo ? swath->geo : torch::Tensor(),
                            batch_size);
  }
  if (kind == nets::kKindScratch) {
    auto model = distill::load_teacher(ckpt);
    model->eval();
    return distill::predict(model, dataset::normalize_ir(ir_k), torch::Tensor(), batch_size);
  }
  auto model = distill::load_student(ckpt);
  model->eval();
  return distill::predict(model, dataset::normalize_ir(ir_k), batch_size);
}

std::string sigma_label(const config::NoiseSetting& n) {
  std::ostringstream s;
  s << metrics::to_string(n.kind) << "(" << n.sigma << ")";
  return s.str();
}

std::string fmt(const metrics::Score& v) {
  if (!v) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

// ---------------------------------------------------------------- cells

class Cells {
 public:
  Cells(const config::RunConfig& base, const RunPaths& p, const datagen::DatasetManifest& manifest)
      : threads_(base.doc().at("threads").get<int>()), paths_(p), manifest_(manifest), data_hash_(manifest.hash()) {}

  const datagen::DatasetManifest& manifest() const { return manifest_; }

  const dataset::SwathSplit& swath(const std::string& part) {
    auto it = swath_.find(part);
    if (it == swath_.end()) it = swath_.emplace(part, dataset::load_swath(manifest_, part)).first;
    return it->second;
  }
  const dataset::FullDiscSplit& fulldisc(const std::string& part) {
    auto it = full_.find(part);
    if (it == full_.end()) it = full_.emplace(part, dataset::load_fulldisc(manifest_, part)).first;
    return it->second;
  }

  store::Checkpoint teacher(const config::RunConfig& cfg, Task task, const dataset::Modalities& m) {
    const auto tc = cfg.teacher(task, m);
    return cached("teacher", {{"teacher", tc.to_json()}, {"data", data_hash_}}, [&] {
      return distill::train_teacher(swath("train"), swath("val"), tc).checkpoint;
    });
  }

  store::Checkpoint student(const config::RunConfig& cfg, Task task, distill::KdMode mode, bool rmkd, bool dawe) {
    auto dc = cfg.distill(task);
    dc.kd_mode = mode;
    dc.model.use_rmkd = rmkd;
    dc.model.use_dawe = dawe;
    std::optional<store::Checkpoint> t;
    if (mode != distill::KdMode::none) t = teacher(cfg, task, {});
    const auto key = json{{"student", dc.to_json()},
                          {"teacher", t ? store::checkpoint_hash(*t) : std::string()},
                          {"data", data_hash_}};
    return cached("student", key, [&] {
      return distill::train_student_distill(swath("train"), swath("val"), t ? &*t : nullptr, dc).checkpoint;
    });
  }

  store::Checkpoint adapted(const config::RunConfig& cfg, Task task, const store::Checkpoint& student,
                            adapt::TuneMode mode) {
    auto ac = cfg.adapt();
    ac.mode = mode;
    ac.train.seed = derive_seed(ac.train.seed, task_index(task));
    const auto key = json{{"adapt", ac.to_json()}, {"student", store::checkpoint_hash(student)}, {"data", data_hash_}};
    return cached("adapt", key, [&] {
      return adapt::train_full_disc(fulldisc("train"), fulldisc("val"), student, ac).result.checkpoint;
    });
  }

  store::Checkpoint scratch(const config::RunConfig& cfg, Task task) {
    auto tc = cfg.scratch_train();
    tc.seed = derive_seed(tc.seed, task_index(task));
    const auto model = cfg.student_model(task);
    const auto key = json{{"scratch", model.to_json()}, {"train", tc.to_json()}, {"data", data_hash_}};
    return cached("scratch", key, [&] {
      return adapt::train_scratch(fulldisc("train"), fulldisc("val"), model, tc).checkpoint;
    });
  }

 private:
  int threads_;
  RunPaths paths_;
  const datagen::DatasetManifest& manifest_;
  std::string data_hash_;
  std::map<std::string, dataset::SwathSplit> swath_;
  std::map<std::string, dataset::FullDiscSplit> full_;

  store::Checkpoint cached(const std::string& kind, const json& key, const std::function<store::Checkpoint()>& build) {
    const auto dir = paths_.cells / (kind + "-" + store::canonical_hash(key).substr(0, 20));
    if (fs::exists(dir / "header.json")) return store::load_checkpoint(dir);
    torch::set_num_threads(threads_);
    auto ckpt = build();
    store::save_checkpoint(ckpt, dir);
    return ckpt;
  }
};

}  // namespace

// ---------------------------------------------------------------- pipeline

RunPaths paths(const config::RunConfig& cfg) {
  RunPaths p;
  p.root = cfg.run_dir();
  p.config = p.root / "config.json";
  p.data = p.root / "data";
  p.checkpoints = p.root / "checkpoints";
  p.metrics = p.root / "metrics.csv";
  p.report = p.root / "report";
  p.cells = p.root / "cells";
  return p;
}

RunPaths prepare_run(const config::RunConfig& cfg) {
  auto p = paths(cfg);
  std::error_code ec;
  fs::create_directories(p.root, ec);
  if (ec) throw IoError("cannot create run directory " + p.root.string() + ": " + ec.message());
  write_text(p.config, cfg.doc().dump(2) + "\n");
  return p;
}

std::string task_suffix(Task t) { return t == Task::classification ? "cls" : "reg"; }

std::string gen_data(const config::RunConfig& cfg) {
  const auto p = prepare_run(cfg);
  std::error_code ec;
  fs::remove_all(p.data, ec);
  return datagen::build_dataset(cfg.dataset(), p.data).hash();
}

std::vector<std::string> train_teacher(const config::RunConfig& cfg) {
  const auto p = prepare_run(cfg);
  const auto manifest = require_dataset(p);
  const auto train = dataset::load_swath(manifest, "train");
  const auto val = dataset::load_swath(manifest, "val");
  store::MetricsLog log(p.metrics);
  std::vector<std::string> hashes;
  for (auto task : cfg.tasks()) {
    auto r = distill::train_teacher(train, val, cfg.teacher(task));
    hashes.push_back(store::save_checkpoint(r.checkpoint, checkpoint_dir(p, "teacher", task)));
    log_training(log, cfg.run_id(), "teacher_" + task_suffix(task), r);
  }
  return hashes;
}

std::vector<std::string> distill(const config::RunConfig& cfg) {
  const auto p = prepare_run(cfg);
  const auto manifest = require_dataset(p);
  const auto train = dataset::load_swath(manifest, "train");
  const auto val = dataset::load_swath(manifest, "val");
  store::MetricsLog log(p.metrics);
  std::vector<std::string> hashes;
  for (auto task : cfg.tasks()) {
    const auto dc = cfg.distill(task);
    std::optional<store::Checkpoint> teacher;
    if (dc.kd_mode != distill::KdMode::none) teacher = require_checkpoint(p, "teacher", task, "train-teacher");
    auto r = distill::train_student_distill(train, val, teacher ? &*teacher : nullptr, dc);
    hashes.push_back(store::save_checkpoint(r.checkpoint, checkpoint_dir(p, "student", task)));
    log_training(log, cfg.run_id(), "distill_" + task_suffix(task), r);
  }
  return hashes;
}

std::vector<std::string> adapt(const config::RunConfig& cfg) {
  const auto p = prepare_run(cfg);
  const auto manifest = require_dataset(p);
  const auto train = dataset::load_fulldisc(manifest, "train");
  const auto val = dataset::load_fulldisc(manifest, "val");
  store::MetricsLog log(p.metrics);
  std::vector<std::string> hashes;
  for (auto task : cfg.tasks()) {
    const auto student = require_checkpoint(p, "student", task, "distill");
    auto ac = cfg.adapt();
    ac.train.seed = derive_seed(ac.train.seed, task_index(task));
    auto r = adapt::train_full_disc(train, val, student, ac);
    hashes.push_back(store::save_checkpoint(r.result.checkpoint, checkpoint_dir(p, "adapted", task)));
    const auto stage = "adapt_" + task_suffix(task);
    log_training(log, cfg.run_id(), stage, r.result);
    std::map<int, std::pair<std::int64_t, std::int64_t>> density;
    for (const auto& m : r.masks) {
      density[m.epoch].first += m.ones;
      density[m.epoch].second += m.total;
    }
    for (const auto& [epoch, d] : density)
      log.append({cfg.run_id(), stage, epoch, "train", "mask_density",
                  static_cast<double>(d.first) / static_cast<double>(d.second)});
  }
  return hashes;
}

std::string to_string(Domain d) { return d == Domain::swath ? "swath" : "fulldisc"; }

metrics::MetricReport evaluate_checkpoints(const datagen::DatasetManifest& manifest, Domain domain,
                                           const std::string& partition, const store::Checkpoint& cls,
                                           const store::Checkpoint* reg, const config::NoiseSetting& noise,
                                           std::uint64_t noise_seed, int batch_size) {
  auto check_task = [](const store::Checkpoint& c, const char* want) {
    if (c.header.model_config.value("task", "") != want)
      throw IncompatibleError(std::string("expected a ") + want + " checkpoint");
  };
  check_task(cls, "classification");
  if (reg) check_task(*reg, "regression");
  std::optional<dataset::SwathSplit> swath;
  torch::Tensor ir_k, precip;
  if (domain == Domain::swath) {
    swath = dataset::load_swath(manifest, partition);
    ir_k = swath->ir_k;
    precip = swath->precip;
  } else {
    auto full = dataset::load_fulldisc(manifest, partition);
    ir_k = full.ir_k;
    precip = full.precip;
  }
  const auto ir = noisy_ir(ir_k, noise, noise_seed);
  const auto prob = run_model(cls, ir, swath ? &*swath : nullptr, batch_size);
  torch::Tensor rate;
  if (reg) rate = nets::fuse_predictions(prob, dataset::invert_regression(run_model(*reg, ir, swath ? &*swath : nullptr, batch_size)));
  metrics::MetricAccumulator acc;
  for (std::int64_t i = 0; i < prob.size(0); ++i) {
    const auto rain = nets::tensor_to_grid((prob[i][0] >= 0.5).to(torch::kFloat32));
    const auto truth = nets::tensor_to_grid(precip[i][0]);
    if (reg) acc.add(rain, nets::tensor_to_grid(rate[i][0]), truth);
    else acc.add_categorical(rain, truth);
  }
  return acc.report();
}

std::vector<EvalRow> evaluate(const config::RunConfig& cfg) {
  const auto p = prepare_run(cfg);
  const auto manifest = require_dataset(p);
  const int batch = cfg.doc().at("eval").at("batch_size").get<int>();
  const auto tasks = cfg.tasks();
  const bool has_cls = std::find(tasks.begin(), tasks.end(), Task::classification) != tasks.end();
  if (!has_cls) throw ConfigError("evaluation needs the classification task");
  const bool has_reg = std::find(tasks.begin(), tasks.end(), Task::regression) != tasks.end();

  std::vector<EvalRow> rows;
  auto run = [&](const std::string& role, Domain domain, bool with_noise) {
    const auto dir = checkpoint_dir(p, role, Task::classification);
    if (!fs::exists(dir / "header.json")) return false;
    const auto cls = store::load_checkpoint(dir);
    std::optional<store::Checkpoint> reg;
    if (has_reg) reg = require_checkpoint(p, role, Task::regression, role == "teacher" ? "train-teacher" : role == "student" ? "distill" : "adapt");
    const auto base = to_string(domain) + "-test";
    rows.push_back({role, base, evaluate_checkpoints(manifest, domain, "test", cls, reg ? &*reg : nullptr, {}, 0, batch)});
    if (with_noise) {
      const auto seed = cfg.doc().at("eval").at("noise_seed").get<std::uint64_t>();
      for (const auto& n : cfg.noise())
        rows.push_back({role, base + "+" + sigma_label(n),
                        evaluate_checkpoints(manifest, domain, "test", cls, reg ? &*reg : nullptr, n, seed, batch)});
    }
    return true;
  };
  bool any = run("teacher", Domain::swath, false);
  any = run("student", Domain::swath, false) || any;
  if (fs::exists(checkpoint_dir(p, "student", Task::classification) / "header.json")) run("student", Domain::fulldisc, false);
  any = run("adapted", Domain::fulldisc, true) || any;
  if (!any) throw MissingPrerequisite("no checkpoints to evaluate; run `precipx train-teacher` first");

  store::MetricsLog log(p.metrics);
  for (const auto& r : rows) log.append(report_rows(cfg.run_id(), "eval/" + r.model, 0, r.split, r.report));
  return rows;
}

fs::path report(const config::RunConfig& cfg) {
  const auto p = prepare_run(cfg);
  if (!fs::exists(p.metrics)) throw MissingPrerequisite("no metrics.csv; run `precipx evaluate` first");
  const auto rows = store::read_metrics(p.metrics);
  fs::create_directories(p.report);

  // (stage, split) -> metric -> value, keeping the last logged value.
  std::map<std::pair<std::string, std::string>, std::map<std::string, metrics::Score>> table;
  for (const auto& r : rows)
    if (r.stage.rfind("eval/", 0) == 0) table[{r.stage.substr(5), r.split}][r.metric] = r.value;
  if (table.empty()) throw MissingPrerequisite("metrics.csv has no evaluation rows; run `precipx evaluate` first");

  json prov;
  prov["config_hash"] = cfg.hash();
  if (fs::exists(p.data / datagen::kManifestFile)) prov["dataset_hash"] = datagen::load_manifest(p.data).hash();
  prov["checkpoints"] = json::object();
  if (fs::exists(p.checkpoints))
    for (const auto& entry : fs::directory_iterator(p.checkpoints))
      if (fs::exists(entry.path() / "header.json"))
        prov["checkpoints"][entry.path().filename().string()] = store::checkpoint_hash(entry.path());

  const std::vector<std::string> cols{"RMSE", "CC", "POD", "FAR", "CSI", "CSI-4", "CSI-8"};
  std::ostringstream md;
  md << "# Run " << cfg.run_id() << "\n\n| model | split |";
  for (const auto& c : cols) md << " " << c << " |";
  md << "\n|---|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) md << "---|";
  md << "\n";
  json jt = json::array();
  for (const auto& [key, vals] : table) {
    md << "| " << key.first << " | " << key.second << " |";
    json jr{{"model", key.first}, {"split", key.second}};
    for (const auto& c : cols) {
      auto it = vals.find(c);
      const metrics::Score v = it == vals.end() ? std::nullopt : it->second;
      md << " " << fmt(v) << " |";
      jr[c] = v ? json(*v) : json(nullptr);
    }
    md << "\n";
    jt.push_back(jr);
  }
  md << "\n## Provenance\n\n- config: `" << prov["config_hash"].get<std::string>() << "`\n";
  if (prov.contains("dataset_hash")) md << "- dataset: `" << prov["dataset_hash"].get<std::string>() << "`\n";
  for (const auto& [name, h] : prov["checkpoints"].items()) md << "- " << name << ": `" << h.get<std::string>() << "`\n";

  // Maps for the first full-disc test scene.
  if (cfg.render_maps() && fs::exists(p.data / datagen::kManifestFile)) {
    const auto manifest = datagen::load_manifest(p.data);
    const auto test = dataset::load_fulldisc(manifest, "test");
    const auto ir = test.ir_k.slice(0, 0, 1);
    std::vector<std::pair<std::string, PrecipGrid>> preds;
    for (const std::string role : {"student", "adapted"}) {
      const auto cdir = checkpoint_dir(p, role, Task::classification);
      if (!fs::exists(cdir / "header.json")) continue;
      const auto prob = run_model(store::load_checkpoint(cdir), ir, nullptr, 1);
      const auto rdir = checkpoint_dir(p, role, Task::regression);
      torch::Tensor rate = (prob >= 0.5).to(torch::kFloat32);
      if (fs::exists(rdir / "header.json"))
        rate = nets::fuse_predictions(prob, dataset::invert_regression(run_model(store::load_checkpoint(rdir), ir, nullptr, 1)));
      preds.emplace_back(role, nets::tensor_to_grid(rate[0][0]));
    }
    const auto panels = render::render_maps(nets::tensor_to_grid(test.precip[0][0]), preds, p.report / "maps",
                                            test.scene_ids.front() + "_");
    md << "\n## Maps (" << test.scene_ids.front() << ")\n\n";
    for (const auto& panel : panels) md << "![" << panel.name << "](maps/" << panel.path.filename().string() << ")\n";
  }

  write_text(p.report / "report.md", md.str());
  write_text(p.report / "report.json", json{{"rows", jt}, {"provenance", prov}}.dump(2) + "\n");
  return p.report;
}

// ---------------------------------------------------------------- ablations

Protocol parse_protocol(const std::string& s) {
  if (s == "comwe_components") return Protocol::comwe_components;
  if (s == "kd_modes") return Protocol::kd_modes;
  if (s == "finetune_modes") return Protocol::finetune_modes;
  if (s == "modality") return Protocol::modality;
  if (s == "noise") return Protocol::noise;
  throw ConfigError("unknown protocol '" + s + "'");
}

Protocol protocol_for_table(int table) {
  switch (table) {
    case 2: return Protocol::comwe_components;
    case 3: return Protocol::kd_modes;
    case 4: return Protocol::finetune_modes;
    case 7: return Protocol::noise;
    case 8: return Protocol::modality;
    default: throw ConfigError("no ablation protocol for table " + std::to_string(table) + " (use 2, 3, 4, 7 or 8)");
  }
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::comwe_components: return "comwe_components";
    case Protocol::kd_modes: return "kd_modes";
    case Protocol::finetune_modes: return "finetune_modes";
    case Protocol::modality: return "modality";
    case Protocol::noise: return "noise";
  }
  return "?";
}

std::vector<std::string> protocol_rows(Protocol p, const config::RunConfig& cfg) {
  switch (p) {
    case Protocol::comwe_components: return {"neither", "rmkd", "dawe", "both"};
    case Protocol::kd_modes: return {"none", "vanilla_kd", "comwe"};
    case Protocol::finetune_modes: return {"scratch", "kd+non", "comwe+non", "comwe+rand", "comwe+self"};
    case Protocol::modality: return {"ir", "ir+pmw", "ir+pr", "ir+pmw+pr"};
    case Protocol::noise: {
      std::vector<std::string> rows{"clean"};
      for (const auto& n : cfg.noise()) rows.push_back(sigma_label(n));
      return rows;
    }
  }
  return {};
}

metrics::Score median(std::vector<metrics::Score> values) {
  std::vector<double> v;
  for (const auto& s : values)
    if (s) v.push_back(*s);
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const TableRow& Report::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw ContractError("report has no row '" + name + "'");
}

std::string Report::markdown() const {
  std::ostringstream md;
  md << "# " << protocol << " (" << split << ", median over seeds)\n\n| row | RMSE | CC | POD | FAR | CSI | CSI-4 | CSI-8 |\n"
     << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    md << "| " << r.name << " |";
    for (const auto& [name, v] : r.median.named()) md << " " << fmt(v) << " |";
    md << "\n";
  }
  md << "\n## Provenance\n\n```json\n" << provenance.dump(2) << "\n```\n";
  return md.str();
}

json Report::to_json() const {
  json j{{"protocol", protocol}, {"split", split}, {"rows", json::array()}, {"provenance", provenance}};
  for (const auto& r : rows) {
    json jr{{"name", r.name}, {"seeds", r.seeds}, {"median", json::object()}, {"per_seed", json::array()}};
    for (const auto& [name, v] : r.median.named()) jr["median"][name] = v ? json(*v) : json(nullptr);
    for (const auto& rep : r.per_seed) {
      json s = json::object();
      for (const auto& [name, v] : rep.named()) s[name] = v ? json(*v) : json(nullptr);
      jr["per_seed"].push_back(s);
    }
    j["rows"].push_back(jr);
  }
  return j;
}

Report run_ablation(Protocol protocol, const config::RunConfig& cfg, const std::vector<std::string>& only_rows) {
  const auto p = prepare_run(cfg);
  if (!fs::exists(p.data / datagen::kManifestFile)) datagen::build_dataset(cfg.dataset(), p.data);
  const auto manifest = datagen::load_manifest(p.data);
  Cells cells(cfg, p, manifest);
  const int batch = cfg.doc().at("eval").at("batch_size").get<int>();
  const auto tasks = cfg.tasks();
  const bool has_reg = std::find(tasks.begin(), tasks.end(), Task::regression) != tasks.end();

  std::vector<std::string> rows = protocol_rows(protocol, cfg);
  if (!only_rows.empty()) {
    for (const auto& r : only_rows)
      if (std::find(rows.begin(), rows.end(), r) == rows.end())
        throw ConfigError("protocol " + to_string(protocol) + " has no row '" + r + "'");
    rows = only_rows;
  }

  Report rep;
  rep.protocol = to_string(protocol);
  rep.provenance["config_hash"] = cfg.hash();
  rep.provenance["dataset_hash"] = manifest.hash();
  rep.provenance["checkpoints"] = json::object();
  Domain domain = Domain::swath;
  std::string partition = "test";
  if (protocol == Protocol::finetune_modes || protocol == Protocol::noise) domain = Domain::fulldisc;
  if (protocol == Protocol::modality) partition = "val";
  rep.split = to_string(domain) + "-" + partition;

  // One classification checkpoint (plus regression when configured) per cell.
  using CellFn = std::function<store::Checkpoint(const config::RunConfig&, Task)>;
  auto cell_for = [&](const std::string& row) -> CellFn {
    using distill::KdMode;
    switch (protocol) {
      case Protocol::comwe_components: {
        const bool rmkd = row == "rmkd" || row == "both";
        const bool dawe = row == "dawe" || row == "both";
        return [&cells, rmkd, dawe](const config::RunConfig& c, Task t) {
          return cells.student(c, t, KdMode::comwe, rmkd, dawe);
        };
      }
      case Protocol::kd_modes: {
        const auto mode = distill::parse_kd_mode(row);
        return [&cells, mode](const config::RunConfig& c, Task t) {
          const auto m = c.student_model(t);
          return cells.student(c, t, mode, m.use_rmkd, m.use_dawe);
        };
      }
      case Protocol::finetune_modes: {
        if (row == "scratch") return [&cells](const config::RunConfig& c, Task t) { return cells.scratch(c, t); };
        const auto plus = row.find('+');
        const auto kd = row.substr(0, plus) == "kd" ? KdMode::vanilla_kd : KdMode::comwe;
        const auto tune = adapt::parse_tune_mode(row.substr(plus + 1));
        return [&cells, kd, tune](const config::RunConfig& c, Task t) {
          const auto m = c.student_model(t);
          return cells.adapted(c, t, cells.student(c, t, kd, m.use_rmkd, m.use_dawe), tune);
        };
      }
      case Protocol::modality: {
        dataset::Modalities m{false, false, false};
        std::stringstream ss(row);
        for (std::string part; std::getline(ss, part, '+');) {
          if (part == "ir") m.ir = true;
          if (part == "pmw") m.pmw = true;
          if (part == "pr") m.pr = true;
        }
        return [&cells, m](const config::RunConfig& c, Task t) { return cells.teacher(c, t, m); };
      }
      case Protocol::noise: break;
    }
    return {};
  };

  store::MetricsLog log(p.metrics);
  const auto stage_of = [&](const std::string& row) { return "ablate/" + rep.protocol + "/" + row; };

  if (protocol == Protocol::noise) {
    const auto cls = require_checkpoint(p, "adapted", Task::classification, "adapt");
    std::optional<store::Checkpoint> reg;
    if (has_reg) reg = require_checkpoint(p, "adapted", Task::regression, "adapt");
    rep.provenance["checkpoints"]["adapted_cls"] = store::checkpoint_hash(cls);
    const auto seed = cfg.doc().at("eval").at("noise_seed").get<std::uint64_t>();
    const auto settings = cfg.noise();
    for (const auto& row : rows) {
      config::NoiseSetting n;
      for (const auto& s : settings)
        if (sigma_label(s) == row) n = s;
      TableRow tr;
      tr.name = row;
      tr.seeds = {cfg.seed()};
      tr.per_seed.push_back(evaluate_checkpoints(manifest, domain, partition, cls, reg ? &*reg : nullptr, n, seed, batch));
      tr.median = tr.per_seed.front();
      log.append(report_rows(cfg.run_id(), stage_of(row), 0, rep.split + "/median", tr.median));
      rep.rows.push_back(std::move(tr));
    }
  } else {
    const auto seeds = cfg.ablation_seeds();
    for (const auto& row : rows) {
      const auto fn = cell_for(row);
      TableRow tr;
      tr.name = row;
      for (auto s : seeds) {
        const auto cs = cfg.with_seed(s, "");
        const auto cls = fn(cs, Task::classification);
        std::optional<store::Checkpoint> reg;
        if (has_reg) reg = fn(cs, Task::regression);
        rep.provenance["checkpoints"][row + "/seed" + std::to_string(s)] = store::checkpoint_hash(cls);
        tr.seeds.push_back(s);
        tr.per_seed.push_back(evaluate_checkpoints(manifest, domain, partition, cls, reg ? &*reg : nullptr, {}, 0, batch));
        log.append(report_rows(cfg.run_id(), stage_of(row), 0, rep.split + "/seed" + std::to_string(s), tr.per_seed.back()));
      }
      auto pick = [&](auto member) {
        std::vector<metrics::Score> v;
        for (const auto& r : tr.per_seed) v.push_back(r.*member);
        return median(v);
      };
      using R = metrics::MetricReport;
      tr.median = {pick(&R::pod), pick(&R::far), pick(&R::csi), pick(&R::csi4), pick(&R::csi8), pick(&R::rmse), pick(&R::cc)};
      log.append(report_rows(cfg.run_id(), stage_of(row), 0, rep.split + "/median", tr.median));
      rep.rows.push_back(std::move(tr));
    }
  }
  fs::create_directories(p.report);
  write_text(p.report / (rep.protocol + ".md"), rep.markdown());
  write_text(p.report / (rep.protocol + ".json"), rep.to_json().dump(2) + "\n");
  return rep;
}

}  // namespace precipx::harness
