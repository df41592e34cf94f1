// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

// Pipeline orchestration behind the CLI.
//
// runs/<run_id>/
//   config.json            resolved configuration
//   data/                  generated dataset (dataset.json + GridPacks)
//   checkpoints/<name>/    teacher_cls, student_cls, adapted_cls, ... (_reg)
//   metrics.csv            every logged number
//   report/                tables, provenance and rendered maps
//   cells/<key>/           cached ablation cells (teacher / student / ...)

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "precipx/config.hpp"
#include "precipx/metrics.hpp"
#include "precipx/store.hpp"

namespace precipx::harness {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunPaths {
  fs::path root, config, data, checkpoints, metrics, report, cells;
};
RunPaths paths(const config::RunConfig& cfg);

/// Creates the run directory and writes config.json.
RunPaths prepare_run(const config::RunConfig& cfg);

std::string task_suffix(nets::Task t);  // "cls" | "reg"

/// gen-data. Returns the dataset manifest hash.
std::string gen_data(const config::RunConfig& cfg);
/// train-teacher: one checkpoint per configured task. Returns their hashes.
std::vector<std::string> train_teacher(const config::RunConfig& cfg);
std::vector<std::string> distill(const config::RunConfig& cfg);
std::vector<std::string> adapt(const config::RunConfig& cfg);

/// Evaluation domains.
enum class Domain { swath, fulldisc };
std::string to_string(Domain d);

/// Loads `partition` of `domain` and evaluates the classification checkpoint
/// (and, when given, the regression checkpoint for the continuous scores)
/// with optional IR noise injected in Kelvin before normalisation.
metrics::MetricReport evaluate_checkpoints(const datagen::DatasetManifest& manifest, Domain domain,
                                           const std::string& partition, const store::Checkpoint& cls,
                                           const store::Checkpoint* reg = nullptr,
                                           const config::NoiseSetting& noise = {}, std::uint64_t noise_seed = 0,
                                           int batch_size = 8);

struct EvalRow {
  std::string model;  // checkpoint name
  std::string split;  // e.g. fulldisc-test, fulldisc-test+additive(1)
  metrics::MetricReport report;
};
/// evaluate: every available main-run model on its domains, plus the noise
/// protocol for the adapted model. Rows are appended to metrics.csv.
std::vector<EvalRow> evaluate(const config::RunConfig& cfg);

/// report: writes report/report.md and report/report.json from metrics.csv
/// and renders maps for the first test scene. Returns the report directory.
fs::path report(const config::RunConfig& cfg);

// ---------------------------------------------------------------- ablations

enum class Protocol { comwe_components, kd_modes, finetune_modes, modality, noise };
Protocol parse_protocol(const std::string& s);
Protocol protocol_for_table(int table);
std::string to_string(Protocol p);
/// Row names of a protocol in table order.
std::vector<std::string> protocol_rows(Protocol p, const config::RunConfig& cfg);

struct TableRow {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<metrics::MetricReport> per_seed;
  metrics::MetricReport median;
};

struct Report {
  std::string protocol;
  std::string split;
  std::vector<TableRow> rows;
  json provenance = json::object();
  [[nodiscard]] const TableRow& row(const std::string& name) const;
  [[nodiscard]] std::string markdown() const;
  [[nodiscard]] json to_json() const;
};

/// Runs every cell of `protocol` (or only `only_rows`) over the configured
/// seeds; cells are cached under cells/ keyed by the content hash of their
/// inputs. Writes report/<protocol>.md/json and metrics rows.
Report run_ablation(Protocol protocol, const config::RunConfig& cfg, const std::vector<std::string>& only_rows = {});

/// Median of the defined values; nullopt when none is defined.
metrics::Score median(std::vector<metrics::Score> values);

}  // namespace precipx::harness
