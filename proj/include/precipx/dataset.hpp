// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

// In-memory tensors for the swath and full-disc splits of a generated dataset.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "precipx/datagen.hpp"
#include "precipx/nets.hpp"

namespace precipx::dataset {

/// (K - 260) / 30.
torch::Tensor normalize_ir(const torch::Tensor& kelvin);
/// Binary rain mask (>= 0.1 mm/hr) for classification, log1p(rate) for regression.
torch::Tensor make_target(const torch::Tensor& precip, nets::Task task);
/// Inverts the regression transform: max(expm1(y), 0).
torch::Tensor invert_regression(const torch::Tensor& y);

struct Modalities {
  bool ir = true;
  bool pmw = true;
  bool pr = true;
  [[nodiscard]] std::string name() const;
};

/// All tensors are N x C x H x W float32.
struct SwathSplit {
  std::vector<std::string> scene_ids;
  torch::Tensor ir_k;   // raw brightness temperature
  torch::Tensor pmw, pr;
  torch::Tensor geo;    // elevation, latitude, longitude
  torch::Tensor precip;
  [[nodiscard]] std::int64_t size() const { return precip.defined() ? precip.size(0) : 0; }
  /// [ir_norm, pmw, pr] with excluded modalities zeroed.
  [[nodiscard]] torch::Tensor teacher_input(const Modalities& m = {}) const;
  [[nodiscard]] torch::Tensor student_input() const { return normalize_ir(ir_k); }
};

struct FullDiscSplit {
  std::vector<std::string> scene_ids;
  torch::Tensor ir_k;
  torch::Tensor precip;
  [[nodiscard]] std::int64_t size() const { return precip.defined() ? precip.size(0) : 0; }
  [[nodiscard]] torch::Tensor student_input() const { return normalize_ir(ir_k); }
};

SwathSplit load_swath(const datagen::DatasetManifest& manifest, const std::string& partition);
FullDiscSplit load_fulldisc(const datagen::DatasetManifest& manifest, const std::string& partition);

/// Rows `index` of `t` (dim 0).
torch::Tensor take(const torch::Tensor& t, const std::vector<std::int64_t>& index);

}  // namespace precipx::dataset
