// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

// Full-disc adaptation: low-rank adapters on the student's auto-encoders and
// the error-driven mask schedule (Self-MaskTune) with its ablation modes.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "precipx/dataset.hpp"
#include "precipx/distill.hpp"
#include "precipx/nets.hpp"
#include "precipx/store.hpp"

namespace precipx::adapt {

enum class TuneMode { self, rand, non };
TuneMode parse_tune_mode(const std::string& s);
std::string to_string(TuneMode m);

struct AdaptConfig {
  distill::TrainConfig train{20, 4, 1e-3, 3, 0.5, 1};
  int K = 10;
  double rho = 0.5;
  int rank = 4;
  double scale = 1.0;
  TuneMode mode = TuneMode::self;

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

/// Previous-epoch per-region task loss for every training sample and level.
class ErrorMemory {
 public:
  /// `level_shapes[l]` is the (h, w) of CoMWE level l + 1 for padded input.
  ErrorMemory(std::int64_t samples, std::vector<std::pair<int, int>> level_shapes, int pad_multiple);

  /// Replaces the maps of `samples` from N x 1 x H x W pixel losses.
  void store(const std::vector<std::int64_t>& samples, const torch::Tensor& pixel_loss);
  /// Makes the maps stored since the last commit visible to region().
  void commit();
  [[nodiscard]] bool ready() const { return ready_; }
  /// h x w region losses of one sample at CoMWE level `level` (1-based).
  [[nodiscard]] const torch::Tensor& region(std::int64_t sample, int level) const;

  /// Average pool of an H x W map to level resolution (kernel 2^level).
  [[nodiscard]] torch::Tensor pool(const torch::Tensor& pixel_loss, int level) const;

 private:
  std::vector<std::pair<int, int>> shapes_;
  int pad_multiple_;
  bool ready_ = false;
  std::vector<std::vector<torch::Tensor>> current_, pending_;
};

/// rho * max(region).
double compute_pmax(const torch::Tensor& region, double rho);
/// 1 where region >= pmax, else 0 (same shape).
torch::Tensor build_self_mask(const torch::Tensor& region, double pmax);
/// Uniformly random binary mask with exactly `ones` ones.
torch::Tensor build_rand_mask(int height, int width, std::int64_t ones, std::uint64_t seed);

struct MaskEvent {
  int epoch = 0;
  int step = 0;
  int level = 0;
  std::int64_t sample = 0;
  std::int64_t ones = 0;
  std::int64_t total = 0;
};

struct AdaptResult {
  distill::TrainResult result;
  std::vector<MaskEvent> masks;  // every mask built, in order
};

/// Loads the student, attaches rank-r adapters and freezes every other
/// parameter except the decoder and head.
nets::PRENet inject_lora(const store::Checkpoint& student, int rank, double scale);

AdaptResult train_full_disc(const dataset::FullDiscSplit& train, const dataset::FullDiscSplit& val,
                            const store::Checkpoint& student, const AdaptConfig& config);

/// Baseline: IR-only U-Net trained from random initialisation on the full disc.
distill::TrainResult train_scratch(const dataset::FullDiscSplit& train, const dataset::FullDiscSplit& val,
                                   const nets::ModelConfig& model, const distill::TrainConfig& train_config);

}  // namespace precipx::adapt
