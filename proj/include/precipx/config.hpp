// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: one JSON document with a default for every key.
//
//   run_id, runs_dir, seed, threads
//   data     dataset generator and split sizes
//   model    shared architecture knobs (stages, base_channels, ...)
//   teacher  teacher training schedule
//   distill  student training schedule and loss weights
//   adapt    full-disc adaptation
//   eval     noise protocol and map rendering
//   ablation seeds for the multi-seed protocols
//
// A user document is merged over the defaults; any key not present in the
// defaults is rejected. `key.sub=value` overrides use the same rule.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "precipx/adapt.hpp"
#include "precipx/datagen.hpp"
#include "precipx/distill.hpp"
#include "precipx/metrics.hpp"
#include "precipx/nets.hpp"

namespace precipx::config {

using nlohmann::json;

struct NoiseSetting {
  metrics::NoiseKind kind = metrics::NoiseKind::none;
  double sigma = 0.0;
};

class RunConfig {
 public:
  RunConfig();  // defaults
  static json defaults();
  static RunConfig from_json(const json& user);
  static RunConfig load(const std::filesystem::path& path);

  /// `dotted.key=value`; value is parsed as JSON, falling back to a string.
  void set(const std::string& assignment);
  void merge(const json& user);

  [[nodiscard]] const json& doc() const { return doc_; }
  [[nodiscard]] std::string hash() const;

  [[nodiscard]] std::string run_id() const;
  [[nodiscard]] std::filesystem::path run_dir() const;
  [[nodiscard]] std::uint64_t seed() const;

  [[nodiscard]] datagen::DatasetConfig dataset() const;
  [[nodiscard]] nets::ModelConfig teacher_model(nets::Task task) const;
  [[nodiscard]] nets::ModelConfig student_model(nets::Task task) const;
  [[nodiscard]] distill::TeacherConfig teacher(nets::Task task, const dataset::Modalities& m = {}) const;
  [[nodiscard]] distill::DistillConfig distill(nets::Task task) const;
  [[nodiscard]] adapt::AdaptConfig adapt() const;
  [[nodiscard]] distill::TrainConfig scratch_train() const;
  [[nodiscard]] std::vector<NoiseSetting> noise() const;
  [[nodiscard]] std::vector<std::uint64_t> ablation_seeds() const;
  [[nodiscard]] bool render_maps() const;
  [[nodiscard]] std::vector<nets::Task> tasks() const;

  /// Same config with the global seed replaced (used per ablation seed).
  [[nodiscard]] RunConfig with_seed(std::uint64_t seed, const std::string& run_id_suffix) const;

 private:
  json doc_;
  void validate() const;
};

}  // namespace precipx::config
