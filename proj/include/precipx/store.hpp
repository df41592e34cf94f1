// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

// On-disk formats.
//
// GridPack: a directory holding manifest.json plus one raw file per variable
// (little-endian float32, row-major, no header). The manifest lists every
// variable's name, shape, dtype, units, byte length and SHA-256.
//
// Checkpoint: a directory holding header.json plus params.f32, the
// concatenation of every parameter tensor in header order using the same
// float32 encoding.
//
// MetricsLog: append-only CSV `run_id,stage,epoch,split,metric,value`.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "precipx/grid.hpp"

namespace precipx::store {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kGridPackSchemaVersion = 1;
inline constexpr int kCheckpointFormatVersion = 1;

struct Variable {
  std::string name;
  std::vector<std::int64_t> shape;
  std::string units;
  std::vector<float> data;

  static Variable from_grid(std::string name, const FloatGrid& g, std::string units);
  [[nodiscard]] std::int64_t numel() const;
};

struct GridPack {
  std::vector<Variable> variables;
  json meta = json::object();

  [[nodiscard]] const Variable& get(const std::string& name) const;
  [[nodiscard]] bool contains(const std::string& name) const;
  /// Returns a 2D variable as a grid; throws ValidationError if it is not 2D.
  [[nodiscard]] FloatGrid grid(const std::string& name) const;
};

/// SHA-256 of the compact, key-sorted serialization of `doc`.
std::string canonical_hash(const json& doc);

/// Writes `variables` under `dir` (created if needed). Returns the manifest hash.
std::string write_gridpack(const std::vector<Variable>& variables, const json& meta, const fs::path& dir);
GridPack read_gridpack(const fs::path& dir);
/// Hash of an existing GridPack's manifest without loading variables.
std::string gridpack_hash(const fs::path& dir);

struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

struct CheckpointHeader {
  std::string model_kind;
  json model_config = json::object();
  json config_echo = json::object();
  std::string stage;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string parent_hash;  // empty for root checkpoints
};

struct Checkpoint {
  CheckpointHeader header;
  std::vector<NamedTensor> params;

  [[nodiscard]] const NamedTensor* find(const std::string& name) const;
};

using ShapeSet = std::vector<std::pair<std::string, std::vector<std::int64_t>>>;

std::string save_checkpoint(const Checkpoint& ckpt, const fs::path& dir);
Checkpoint load_checkpoint(const fs::path& dir);
/// Hash of a saved checkpoint (canonical hash of its header).
std::string checkpoint_hash(const fs::path& dir);
std::string checkpoint_hash(const Checkpoint& ckpt);

/// Throws IncompatibleError listing every name that is missing, unexpected or
/// has the wrong shape.
void verify_param_set(const Checkpoint& ckpt, const ShapeSet& expected);

struct MetricRow {
  std::string run_id;
  std::string stage;
  int epoch = 0;
  std::string split;
  std::string metric;
  std::optional<double> value;  // nullopt is written as "nan"
};

class MetricsLog {
 public:
  static constexpr const char* kHeader = "run_id,stage,epoch,split,metric,value";

  explicit MetricsLog(fs::path path);
  void append(const MetricRow& row);
  void append(const std::vector<MetricRow>& rows);
  [[nodiscard]] const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::vector<MetricRow> read_metrics(const fs::path& path);
std::string format_metric_value(const std::optional<double>& v);

}  // namespace precipx::store
